"""Scenario runs, labelled waveform records and training corpora."""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import (
    F_SAMPLE,
    FaultKind,
    Pole,
    ScenarioError,
    ScenarioSpec,
    WaveformRecord,
    expected_label,
)
from .network import TransientSolver
from .topology import POLES, CableModel, ConfigurationError, FaultTap, Grid, GridTopology, build_grid, snap_section

log = logging.getLogger(__name__)

BREAKER_DELAY_S = 2e-3  # ideal breaker: opens this long after its trip command
FLOW_RAMP_S = 2e-3  # converter set-point ramp time for power-flow steps


@dataclass(frozen=True)
class SimConfig:
    dt_sim: float = 1e-6
    f_s: float = F_SAMPLE
    integrator: str = "trapezoidal"

    def __post_init__(self):
        if self.integrator != "trapezoidal":
            raise ConfigurationError("only the trapezoidal integrator is available")
        if self.dt_sim > 1.0 / (10.0 * self.f_s) * (1 + 1e-12):
            raise ConfigurationError("dt_sim must be at most a tenth of the sample period")
        ratio = 1.0 / (self.f_s * self.dt_sim)
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("sample period must be an integer number of steps")

    @property
    def decimation(self) -> int:
        return int(round(1.0 / (self.f_s * self.dt_sim)))


def monitor_terminal(topology: GridTopology, line: str) -> int:
    return topology.line(line)[1]


def _fault_taps(spec: ScenarioSpec) -> tuple[FaultTap, ...]:
    if spec.fault is FaultKind.NONE:
        return ()
    pole = spec.pole if (spec.fault.is_pole_to_ground or spec.fault is FaultKind.EXTERNAL) else None
    return (FaultTap(spec.faulted_line, spec.location_km, spec.impedance_ohm, spec.t_fault, pole),)


def _path_distance_km(topology: GridTopology, spec: ScenarioSpec, snapped_km: float) -> float:
    """Cable length a wavefront travels from the fault to the monitoring terminal."""
    term = monitor_terminal(topology, spec.line)
    name, a, b, length = topology.line(spec.faulted_line)
    if spec.fault is not FaultKind.EXTERNAL:
        return snapped_km
    # external: shortest route along the faulted line to one of its terminals,
    # then (if that terminal is not ours) along the monitored line
    best = math.inf
    mon_name, ma, mb, mlen = topology.line(spec.line)
    for end, dist in ((a, snapped_km), (b, length - snapped_km)):
        if end == term:
            best = min(best, dist)
        elif end in (ma, mb):
            best = min(best, dist + mlen)
    if math.isinf(best):
        best = snapped_km
    return best


def simulate(spec: ScenarioSpec, relays: Sequence[tuple[str, int]], topology: Optional[GridTopology] = None,
             cable: Optional[CableModel] = None, config: Optional[SimConfig] = None,
             steady_start: bool = True, t_end: Optional[float] = None):
    """Run one scenario and return (t, {relay: Nx6 data}, grid).

    Data are in kA / kV with channels (i+, i-, vl+, vl-, vr+, vr-); currents
    are positive from bus into line. ``t_end`` cuts the run short of
    ``spec.duration``.
    """
    topology = topology or GridTopology()
    cable = cable or CableModel()
    config = config or SimConfig()
    grid = build_grid(topology, cable, _fault_taps(spec))
    solver = TransientSolver(grid.net, config.dt_sim)
    if steady_start:
        solver.init_steady_state()
    else:
        solver.set_initial()

    dec = config.decimation
    span = spec.duration if t_end is None else min(t_end, spec.duration)
    n_frames = int(math.floor(span * config.f_s + 1e-9)) + (t_end is not None)
    n_frames = min(n_frames, int(round(spec.duration * config.f_s)))
    fault_step = None
    if grid.fault_switches:
        fault_step = int(round(spec.t_fault / config.dt_sim))
    ramp = _flow_ramp(spec, grid, config)

    maps = {r: grid.sensor_map(*r) for r in relays}
    out = {r: np.empty((n_frames, 6)) for r in relays}

    def sample(row):
        z = solver.z
        for r, (branches, ends, buses) in maps.items():
            buf = out[r]
            for k, (br, e, b) in enumerate(zip(branches, ends, buses)):
                v_line = z[e]
                v_bus = z[b]
                i = solver.geq[br] * (v_bus - v_line) + solver.x_prev[br]
                buf[row, k] = i * 1e-3
                buf[row, 2 + k] = v_line * 1e-3
                buf[row, 4 + k] = (v_bus - v_line) * 1e-3

    sample(0)
    # a steady start is the exact fixed point: frames before the first event repeat
    quiet_until = 0
    if steady_start:
        events = [e for e in (fault_step, ramp.start if ramp else None) if e is not None]
        quiet_until = min(events) if events else n_frames * dec + 1
    for row in range(1, n_frames):
        target = row * dec
        if target < quiet_until:
            solver.k = target
            for r in out:
                out[r][row] = out[r][0]
            continue
        if ramp is not None and solver.k < ramp.stop and target > ramp.start:
            while solver.k < target:
                if solver.k < ramp.start:
                    solver.advance(ramp.start - solver.k)
                elif solver.k < ramp.stop:
                    ramp.apply(solver, solver.k + 1)
                    solver.step()
                else:
                    solver.advance(target - solver.k)
        elif fault_step is not None and solver.k < fault_step <= target:
            solver.advance(fault_step - 1 - solver.k)
            for idx, _tap in grid.fault_switches:
                solver.set_switch(idx, True)
            solver.advance(target - solver.k)
        else:
            solver.advance(target - solver.k)
        sample(row)
    t = np.arange(n_frames) / config.f_s
    return t, out, grid


@dataclass
class _FlowRamp:
    """Linear set-point ramp of one converter's current sources (both poles)."""

    sources: list[tuple[int, float, float]]  # (isource index, start value, end value)
    start: int
    stop: int

    def apply(self, solver: TransientSolver, k: int) -> None:
        frac = min(max((k - self.start) / (self.stop - self.start), 0.0), 1.0)
        for idx, v0, v1 in self.sources:
            solver.set_isource(idx, v0 + frac * (v1 - v0))


def _flow_ramp(spec: ScenarioSpec, grid: Grid, config: SimConfig) -> Optional[_FlowRamp]:
    if not spec.flow_step_ka:
        return None
    far = grid.topology.line(spec.line)[2]
    if far == 1:
        raise ScenarioError("the voltage-master terminal has no current set-point to step")
    sources = []
    for idx, (_node, _ret, i, name) in enumerate(grid.net.isrc):
        if name.startswith(f"T{far}.I"):
            sign = 1.0 if name.endswith("Ip") else -1.0
            sources.append((idx, i, i - sign * spec.flow_step_ka * 1e3))
    start = int(round(spec.t_fault / config.dt_sim))
    return _FlowRamp(sources, start, start + max(1, int(round(FLOW_RAMP_S / config.dt_sim))))


def clearing_time(spec: ScenarioSpec, topology: GridTopology, cable: CableModel, snapped_km: float) -> float:
    """Instant the faulted neighbour line is isolated at both ends.

    Each end's relay is taken to trip on wavefront arrival; its breaker then
    opens after the fixed operate delay. The later end sets the isolation time.
    """
    length = topology.line(spec.faulted_line)[3]
    d_far = max(snapped_km, length - snapped_km)
    return spec.t_fault + d_far * cable.delay_per_km + BREAKER_DELAY_S


def _check_steady(t, data, t_fault, f_s, tol_per_ms=1e-3):
    pre = data[t < t_fault]
    if len(pre) < 2:
        raise ScenarioError("no pre-fault samples; lengthen the lead time before t_fault")
    # last millisecond before the fault
    n = max(2, int(round(1e-3 * f_s)))
    tail = pre[-n:, :2]
    scale = np.maximum(np.abs(tail).max(axis=0), 1e-9)
    change = np.abs(tail[-1] - tail[0]) / scale
    if np.any(change > tol_per_ms):
        raise ScenarioError(
            f"pre-fault currents still changing ({change.max():.2%}/ms); increase the lead time before t_fault"
        )


def run_scenario(spec: ScenarioSpec, topology: Optional[GridTopology] = None,
                 cable: Optional[CableModel] = None, config: Optional[SimConfig] = None,
                 steady_start: bool = True) -> WaveformRecord:
    """Simulate ``spec`` and return the record seen by the relay at the monitored line end."""
    from ..evaluation import inject_noise

    topology = topology or GridTopology()
    cable = cable or CableModel()
    config = config or SimConfig()
    spec.validate(topology.line_lengths)
    relay = (spec.line, monitor_terminal(topology, spec.line))
    t_end = None
    if spec.fault is FaultKind.EXTERNAL:
        # the record ends once the faulted neighbour is isolated at both ends
        length = topology.line(spec.faulted_line)[3]
        j = snap_section(spec.location_km, length, cable.section_km)
        t_end = clearing_time(spec, topology, cable, j * cable.section_km)
    t, out, grid = simulate(spec, [relay], topology, cable, config, steady_start, t_end)
    data = out[relay]
    disturbed = spec.fault is not FaultKind.NONE or spec.flow_step_ka
    _check_steady(t, data, spec.t_fault if disturbed else t[-1] + 1, config.f_s)
    arrival = None
    if spec.fault is not FaultKind.NONE:
        dist = _path_distance_km(topology, spec, grid.snapped_km[0])
        arrival = spec.t_fault + dist * cable.delay_per_km
    rec = WaveformRecord(spec, t, data, expected_label(spec), arrival, config.f_s)
    if spec.noise_sigma > 0:
        rec = inject_noise(rec, spec.noise_sigma, spec.seed)
    return rec


def measured_arrival(rec: WaveformRecord, rel_threshold: float = 0.1) -> Optional[float]:
    """First time the line-side voltage leaves its pre-fault value by ``rel_threshold`` p.u."""
    pu = rec.per_unit()
    dev = np.abs(pu[:, 2:4] - pu[0, 2:4]).max(axis=1)
    after = np.flatnonzero((dev > rel_threshold) & (rec.t >= rec.spec.t_fault))
    return float(rec.t[after[0]]) if after.size else None


# --- corpora --------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusRecipe:
    """Sweep lists; every combination becomes one ScenarioSpec.

    ``kinds`` maps a fault kind to the impedances swept for it. ``external``
    lists (fault_line, location list, impedance list, pole or None).
    ``normal_count`` fault-free records are made per level of
    ``normal_noise_levels`` (default: ``noise_levels``), cycling through
    ``normal_flow_steps_ka`` for their power-flow change.
    """

    line: str = "Line13"
    kinds: dict = field(default_factory=dict)
    location_step_km: float = 10.0
    location_offset_km: float = 0.0
    location_margin_km: float = 0.0
    poles: tuple = (Pole.POSITIVE, Pole.NEGATIVE)
    normal_count: int = 0
    external: tuple = ()
    noise_levels: tuple = (0.0,)
    normal_noise_levels: Optional[tuple] = None
    normal_flow_steps_ka: tuple = (0.0,)
    seed: int = 0
    t_fault: float = 0.02
    duration: float = 0.035

    def locations(self, length: float) -> list[float]:
        if self.location_step_km <= 0:
            raise ConfigurationError("location step must be positive")
        locs = []
        x = self.location_offset_km
        while x <= length + 1e-9:
            if self.location_margin_km <= x <= length - self.location_margin_km:
                locs.append(round(x, 9))
            x += self.location_step_km
        return locs

    def to_json(self) -> dict:
        return {
            "line": self.line,
            "kinds": {k.value if isinstance(k, FaultKind) else k: list(v) for k, v in self.kinds.items()},
            "location_step_km": self.location_step_km,
            "location_offset_km": self.location_offset_km,
            "location_margin_km": self.location_margin_km,
            "poles": [p.value for p in self.poles],
            "normal_count": self.normal_count,
            "external": [
                {"fault_line": fl, "locations_km": list(locs), "impedances_ohm": list(imps),
                 "pole": p.value if p else None}
                for fl, locs, imps, p in self.external
            ],
            "noise_levels": list(self.noise_levels),
            "normal_noise_levels": None if self.normal_noise_levels is None else list(self.normal_noise_levels),
            "normal_flow_steps_ka": list(self.normal_flow_steps_ka),
            "seed": self.seed,
            "t_fault": self.t_fault,
            "duration": self.duration,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CorpusRecipe":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown recipe field(s): {sorted(unknown)}")
        kw = dict(doc)
        try:
            if "kinds" in kw:
                kw["kinds"] = {FaultKind(k): tuple(float(x) for x in v) for k, v in kw["kinds"].items()}
            if "poles" in kw:
                kw["poles"] = tuple(Pole(p) for p in kw["poles"])
            if "external" in kw:
                kw["external"] = tuple(
                    (e["fault_line"], tuple(float(x) for x in e["locations_km"]),
                     tuple(float(x) for x in e["impedances_ohm"]), Pole(e["pole"]) if e.get("pole") else None)
                    for e in kw["external"]
                )
            for name in ("noise_levels", "normal_flow_steps_ka"):
                if name in kw:
                    kw[name] = tuple(float(x) for x in kw[name])
            if kw.get("normal_noise_levels") is not None:
                kw["normal_noise_levels"] = tuple(float(x) for x in kw["normal_noise_levels"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad recipe: {exc}") from None
        return cls(**kw)

    def specs(self, topology: Optional[GridTopology] = None) -> list[ScenarioSpec]:
        topology = topology or GridTopology()
        length = topology.line(self.line)[3]
        if not self.noise_levels:
            raise ConfigurationError("recipe has an empty noise-level list")
        normal_levels = self.noise_levels if self.normal_noise_levels is None else self.normal_noise_levels
        if self.normal_count and (not normal_levels or not self.normal_flow_steps_ka):
            raise ConfigurationError("recipe has an empty list for normal records")
        if not self.kinds and not self.normal_count and not self.external:
            raise ConfigurationError("recipe produces no scenarios")
        for kind, imps in self.kinds.items():
            if not imps:
                raise ConfigurationError(f"recipe has an empty impedance list for {kind.value}")
        specs = []
        base = dict(line=self.line, t_fault=self.t_fault, duration=self.duration)
        seed = itertools.count(self.seed)
        for sigma in self.noise_levels:
            for kind, imps in self.kinds.items():
                locs = self.locations(length)
                if not locs:
                    raise ConfigurationError("recipe has an empty location list")
                poles = (None,) if kind is FaultKind.P2P else self.poles
                if not poles:
                    raise ConfigurationError("recipe has an empty pole list")
                for loc, imp, pole in itertools.product(locs, imps, poles):
                    specs.append(ScenarioSpec(fault=kind, location_km=loc, impedance_ohm=imp, pole=pole,
                                              noise_sigma=sigma, seed=next(seed), **base))
            for fl, locs, imps, pole in self.external:
                if not locs or not imps:
                    raise ConfigurationError(f"external sweep on {fl} has an empty list")
                for loc, imp in itertools.product(locs, imps):
                    specs.append(ScenarioSpec(fault=FaultKind.EXTERNAL, fault_line=fl, location_km=loc,
                                              impedance_ohm=imp, pole=pole, noise_sigma=sigma,
                                              seed=next(seed), **base))
        for sigma in normal_levels:
            for j in range(self.normal_count):
                step = self.normal_flow_steps_ka[j % len(self.normal_flow_steps_ka)]
                specs.append(ScenarioSpec(noise_sigma=sigma, seed=next(seed), flow_step_ka=step, **base))
        for s in specs:
            s.validate(topology.line_lengths)
        return sorted(specs, key=ScenarioSpec.sort_key)


def _run(spec):
    return run_scenario(spec)


def gen_corpus(recipe: CorpusRecipe, workers: int = 1) -> list[WaveformRecord]:
    """Simulate every scenario of ``recipe``; output order is sorted by ScenarioSpec."""
    specs = recipe.specs()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run, specs, chunksize=4))
    return [run_scenario(s) for s in specs]
