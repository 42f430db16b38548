"""Linear circuit description and trapezoidal (companion-model) transient solver.

Every reactive element is replaced by a conductance in parallel with a history
current source; one step is a single dense nodal solve. Between switching
events the step is an affine map of the history vector, which lets the
simulator jump several steps with one matrix product while producing the same
trajectory as repeated single steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

GROUND = "gnd"


class NumericalDivergence(FloatingPointError):
    pass


@dataclass
class Switch:
    a: int
    b: int
    r_on: float
    closed: bool = False
    name: str = ""


@dataclass
class Network:
    """Nodes, two-terminal elements and switches. Node ``gnd`` is the reference."""

    node_names: list[str] = field(default_factory=list)
    rl: list[tuple[int, int, float, float, str]] = field(default_factory=list)
    caps: list[tuple[int, int, float, str]] = field(default_factory=list)
    res: list[tuple[int, int, float, str]] = field(default_factory=list)
    vsrc: list[tuple[int, int, float, str]] = field(default_factory=list)
    isrc: list[tuple[int, int, float, str]] = field(default_factory=list)
    switches: list[Switch] = field(default_factory=list)

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.node_names)}

    def node(self, name: str) -> int:
        if name == GROUND:
            return -1
        if name not in self._index:
            self._index[name] = len(self.node_names)
            self.node_names.append(name)
        return self._index[name]

    def index(self, name: str) -> int:
        return -1 if name == GROUND else self._index[name]

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def add_rl(self, a, b, r, l, name=""):
        """Series R-L branch, current positive from ``a`` to ``b``."""
        if l <= 0:
            raise ValueError("inductance must be positive; use add_resistor for pure R")
        self.rl.append((self.node(a), self.node(b), float(r), float(l), name))
        return len(self.rl) - 1

    def add_inductor(self, a, b, l, name=""):
        return self.add_rl(a, b, 0.0, l, name)

    def add_capacitor(self, a, b, c, name=""):
        self.caps.append((self.node(a), self.node(b), float(c), name))
        return len(self.caps) - 1

    def add_resistor(self, a, b, r, name=""):
        if r <= 0:
            raise ValueError("resistance must be positive")
        self.res.append((self.node(a), self.node(b), float(r), name))
        return len(self.res) - 1

    def add_vsource(self, a, b, v, name=""):
        """Ideal source holding v(a) - v(b) = v."""
        self.vsrc.append((self.node(a), self.node(b), float(v), name))
        return len(self.vsrc) - 1

    def add_isource(self, node, i, ret=GROUND, name=""):
        """Constant current ``i`` injected into ``node``, drawn from ``ret``."""
        self.isrc.append((self.node(node), self.node(ret), float(i), name))
        return len(self.isrc) - 1

    def add_switch(self, a, b, r_on, closed=False, name=""):
        self.switches.append(Switch(self.node(a), self.node(b), float(r_on), closed, name))
        return len(self.switches) - 1


def _incidence(pairs, n_cols):
    d = np.zeros((len(pairs), n_cols))
    for j, (a, b) in enumerate(pairs):
        if a >= 0:
            d[j, a] = 1.0
        if b >= 0:
            d[j, b] = -1.0
    return d


def _stamp(g, a, b, y):
    if a >= 0:
        g[a, a] += y
    if b >= 0:
        g[b, b] += y
    if a >= 0 and b >= 0:
        g[a, b] -= y
        g[b, a] -= y


class _Stage:
    """Everything that depends on one switch configuration."""

    def __init__(self, solver: "TransientSolver", closed: tuple[bool, ...]):
        net = solver.net
        n, nz = net.n_nodes, solver.nz
        g = np.zeros((nz, nz))
        d_rl, d_c = solver.d_rl, solver.d_c
        g[:n, :n] += d_rl[:, :n].T @ (solver.geq[:, None] * d_rl[:, :n])
        g[:n, :n] += d_c[:, :n].T @ (solver.gc[:, None] * d_c[:, :n])
        for a, b, r, _ in net.res:
            _stamp(g, a, b, 1.0 / r)
        for sw, is_closed in zip(net.switches, closed):
            if is_closed:
                _stamp(g, sw.a, sw.b, 1.0 / sw.r_on)
        for k, (a, b, _v, _) in enumerate(net.vsrc):
            row = n + k
            if a >= 0:
                g[a, row] += 1.0
                g[row, a] += 1.0
            if b >= 0:
                g[b, row] -= 1.0
                g[row, b] -= 1.0
        self.lu = sla.lu_factor(g)
        ginv = sla.lu_solve(self.lu, np.eye(nz))
        self.ginv = ginv
        # one step: z = Ginv (P x + s); x' = Q x + R z
        self.rg = solver.r_mat @ ginv
        self.a1 = solver.q_diag[:, None] * np.eye(solver.nx) + self.rg @ solver.p_mat
        self._powers = {}
        self._offsets = {}

    def b1(self, s_vec: np.ndarray) -> np.ndarray:
        return self.rg @ s_vec

    def jump(self, n_steps: int):
        """(A^n, sum_{j<n} A^j): the n-step map is x -> A^n x + (sum A^j) b1."""
        if n_steps not in self._powers:
            eye = np.eye(self.a1.shape[0])
            # binary composition; (P_a, S_a) then (P_b, S_b) -> (P_b P_a, S_b + P_b S_a)
            res = (eye, np.zeros_like(eye))
            base = (self.a1, eye)
            n = n_steps
            while n:
                if n & 1:
                    res = (base[0] @ res[0], base[1] + base[0] @ res[1])
                n >>= 1
                if n:
                    base = (base[0] @ base[0], base[1] + base[0] @ base[1])
            self._powers[n_steps] = res
        return self._powers[n_steps]


class TransientSolver:
    """Fixed-step trapezoidal integration of a :class:`Network`.

    State ``x`` holds one history current per R-L branch followed by one per
    capacitor. ``z`` is the latest nodal solution (node voltages then
    voltage-source currents).
    """

    def __init__(self, net: Network, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.net = net
        self.dt = dt
        n = net.n_nodes
        self.nz = n + len(net.vsrc)
        self.n_rl, self.n_c = len(net.rl), len(net.caps)
        self.nx = self.n_rl + self.n_c

        r = np.array([e[2] for e in net.rl])
        l_ = np.array([e[3] for e in net.rl])
        k = dt / (2.0 * l_) if self.n_rl else np.zeros(0)
        self.r, self.l = r, l_
        self.geq = k / (1.0 + r * k)
        self.alpha = (1.0 - r * k) / (1.0 + r * k)
        self.c = np.array([e[2] for e in net.caps])
        self.gc = 2.0 * self.c / dt

        self.d_rl = _incidence([(e[0], e[1]) for e in net.rl], self.nz)
        self.d_c = _incidence([(e[0], e[1]) for e in net.caps], self.nz)
        self.p_mat = np.hstack([-self.d_rl.T, self.d_c.T])
        self.q_diag = np.concatenate([self.alpha, -np.ones(self.n_c)])
        self.r_mat = np.vstack([
            ((self.alpha + 1.0) * self.geq)[:, None] * self.d_rl,
            (2.0 * self.gc)[:, None] * self.d_c,
        ])
        s = np.zeros(self.nz)
        for node, ret, i, _ in net.isrc:
            if node >= 0:
                s[node] += i
            if ret >= 0:
                s[ret] -= i
        for kk, (_a, _b, v, _) in enumerate(net.vsrc):
            s[n + kk] = v
        self.s_vec = s
        self._s_version = 0

        self._stages: dict[tuple[bool, ...], _Stage] = {}
        self.x = np.zeros(self.nx)
        self.x_prev = self.x.copy()
        self.z = np.zeros(self.nz)
        self.k = 0

    # -- configuration ---------------------------------------------------------

    @property
    def closed(self) -> tuple[bool, ...]:
        return tuple(sw.closed for sw in self.net.switches)

    def stage(self, closed=None) -> _Stage:
        closed = self.closed if closed is None else closed
        if closed not in self._stages:
            self._stages[closed] = _Stage(self, closed)
        return self._stages[closed]

    def set_switch(self, idx: int, closed: bool) -> None:
        self.net.switches[idx].closed = closed

    def set_isource(self, idx: int, value: float) -> None:
        """Change a current source's value from the next step on."""
        node, ret, old, name = self.net.isrc[idx]
        delta = value - old
        if node >= 0:
            self.s_vec[node] += delta
        if ret >= 0:
            self.s_vec[ret] -= delta
        self.net.isrc[idx] = (node, ret, float(value), name)
        self._s_version += 1

    @property
    def t(self) -> float:
        return self.k * self.dt

    # -- state -----------------------------------------------------------------

    def init_steady_state(self) -> None:
        """Start at the exact fixed point of the discrete map (dc operating point)."""
        st = self.stage()
        self.x = np.linalg.solve(np.eye(self.nx) - st.a1, st.b1(self.s_vec))
        self.z = st.ginv @ (self.p_mat @ self.x + self.s_vec)
        self.x_prev = self.x.copy()

    def set_initial(self, v_caps=None, i_rl=None) -> None:
        """Start from given capacitor voltages and branch currents.

        Branch voltages and capacitor currents at t=0 follow from the
        resistive network with capacitors as voltage sources and R-L branches
        as current sources, so the first step is consistent.
        """
        net = self.net
        n = net.n_nodes
        v_caps = np.zeros(self.n_c) if v_caps is None else np.asarray(v_caps, float)
        i_rl = np.zeros(self.n_rl) if i_rl is None else np.asarray(i_rl, float)
        fixed = list(net.vsrc) + [(a, b, v, "") for (a, b, _c, _), v in zip(net.caps, v_caps)]
        m = n + len(fixed)
        g = np.zeros((m, m))
        rhs = np.zeros(m)
        for a, b, r, _ in net.res:
            _stamp(g, a, b, 1.0 / r)
        for sw in net.switches:
            if sw.closed:
                _stamp(g, sw.a, sw.b, 1.0 / sw.r_on)
        for node, ret, i, _ in net.isrc:
            if node >= 0:
                rhs[node] += i
            if ret >= 0:
                rhs[ret] -= i
        for (a, b, _r, _l, _), i in zip(net.rl, i_rl):
            if a >= 0:
                rhs[a] -= i
            if b >= 0:
                rhs[b] += i
        for k, (a, b, v, _) in enumerate(fixed):
            row = n + k
            if a >= 0:
                g[a, row] += 1.0
                g[row, a] += 1.0
            if b >= 0:
                g[b, row] -= 1.0
                g[row, b] -= 1.0
            rhs[row] = v
        sol = np.linalg.lstsq(g, rhs, rcond=None)[0]
        volts = sol[:n]
        i_caps = sol[n + len(net.vsrc):]
        full = np.concatenate([volts, sol[n:n + len(net.vsrc)]])
        v_rl = self.d_rl @ full
        self.x_prev = np.concatenate([i_rl - self.geq * v_rl, np.zeros(self.n_c)])
        self.x = np.concatenate([self.alpha * i_rl + self.geq * v_rl, self.gc * v_caps + i_caps])
        self.z = full
        self.k = 0

    def step(self) -> None:
        """Advance one trapezoidal step of size ``dt``."""
        st = self.stage()
        with np.errstate(invalid="ignore", over="ignore"):  # reported by _check_finite
            z = st.ginv @ (self.p_mat @ self.x + self.s_vec)
            x_new = self.q_diag * self.x + self.r_mat @ z
        self.x_prev, self.x, self.z = self.x, x_new, z
        self.k += 1
        self._check_finite()

    def advance(self, n_steps: int) -> None:
        """Advance ``n_steps`` steps with the composed map (same switch state)."""
        if n_steps <= 0:
            return
        if n_steps > 1:
            st = self.stage()
            a, acc = st.jump(n_steps - 1)
            key = (n_steps - 1, self._s_version)
            if key not in st._offsets:
                st._offsets[key] = acc @ st.b1(self.s_vec)
            self.x = a @ self.x + st._offsets[key]
            self.k += n_steps - 1
        self.step()

    def _check_finite(self) -> None:
        if not np.all(np.isfinite(self.z)):
            bad = int(np.flatnonzero(~np.isfinite(self.z))[0])
            name = self.net.node_names[bad] if bad < self.net.n_nodes else f"vsource[{bad - self.net.n_nodes}]"
            raise NumericalDivergence(f"non-finite solution at node {name} (t={self.t:.6g} s)")
        if not np.all(np.isfinite(self.x)):
            raise NumericalDivergence(f"non-finite history state (t={self.t:.6g} s)")

    # -- observables -----------------------------------------------------------

    def node_voltage(self, name: str) -> float:
        i = self.net.index(name)
        return 0.0 if i < 0 else float(self.z[i])

    @property
    def node_voltages(self) -> np.ndarray:
        return self.z[: self.net.n_nodes]

    def rl_currents(self) -> np.ndarray:
        """Branch currents at the current step."""
        return self.geq * (self.d_rl @ self.z) + self.x_prev[: self.n_rl]

    def cap_voltages(self) -> np.ndarray:
        return self.d_c @ self.z

    def stored_energy(self) -> float:
        i = self.rl_currents()
        v = self.cap_voltages()
        return 0.5 * float(np.sum(self.l * i * i)) + 0.5 * float(np.sum(self.c * v * v))
