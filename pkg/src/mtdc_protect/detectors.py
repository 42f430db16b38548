"""Candidate fault detectors.

Every detector consumes per-unit 6-vectors (channel order of
:data:`mtdc_protect.core.CHANNELS`) and emits a binary decision per frame.
Each has a streaming form (``step``) and a batch form (``decide``) over a
whole record; the two produce identical decisions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import F_SAMPLE, I_NEG, I_POS, VL_NEG, VL_POS

KINDS = ("current_threshold", "current_derivative", "rocov", "qcd")
_INPUTS = {
    "current_threshold": (I_POS, I_NEG),
    "current_derivative": (I_POS, I_NEG),
    "rocov": (VL_POS, VL_NEG),
    "qcd": (VL_POS, VL_NEG),
}


@dataclass(frozen=True)
class DetectorConfig:
    """Parameters of one detector.

    ``threshold`` is the primary alarm level: p.u. for the current threshold,
    p.u./ms for the two rate detectors and the CUSUM level ``h`` for qcd.
    """

    kind: str
    threshold: float
    window: int = 1
    drift: Optional[float] = None
    h: Optional[float] = None
    hold_ms: float = 5.0
    mode: str = "absolute"
    reference_ms: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.hold_ms < 0:
            raise ValueError("hold_ms must be >= 0")
        if (self.kind == "qcd") != (self.drift is not None and self.h is not None):
            raise ValueError("drift and h are required for qcd and only for qcd")
        if self.kind == "qcd" and self.h != self.threshold:
            raise ValueError("for qcd the threshold is the CUSUM level h")
        if self.mode not in ("absolute", "falling"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def scaled(self, s: float) -> "DetectorConfig":
        if self.kind == "qcd":
            return replace(self, threshold=self.threshold * s, h=self.h * s)
        return replace(self, threshold=self.threshold * s)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "window": self.window,
            "drift": self.drift,
            "h": self.h,
            "hold_ms": self.hold_ms,
            "mode": self.mode,
            "reference_ms": self.reference_ms,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DetectorConfig":
        return cls(
            kind=d["kind"],
            threshold=float(d["threshold"]),
            window=int(d["window"]),
            drift=None if d.get("drift") is None else float(d["drift"]),
            h=None if d.get("h") is None else float(d["h"]),
            hold_ms=float(d["hold_ms"]),
            mode=d.get("mode", "absolute"),
            reference_ms=float(d.get("reference_ms", 10.0)),
        )


def default_configs() -> list[DetectorConfig]:
    """The default pool in fusion order (threshold, derivative, rocov, qcd)."""
    return [
        DetectorConfig("current_threshold", 1.25),
        DetectorConfig("current_derivative", 1.0, window=3),
        DetectorConfig("rocov", 2.0, window=3),
        DetectorConfig("qcd", 1.0, drift=0.02, h=1.0),
    ]


# --- streaming ------------------------------------------------------------------


class MovingAverage:
    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.buf = deque(maxlen=window)

    def __call__(self, x: float) -> float:
        self.buf.append(x)
        return sum(self.buf) / len(self.buf)


def moving_average(state: MovingAverage, x: float) -> float:
    return state(x)


class _Latch:
    def __init__(self, hold_s: float):
        self.hold_s = hold_s
        self.until: Optional[float] = None

    def __call__(self, fired: bool, t: float) -> int:
        if fired:
            self.until = t + self.hold_s
            return 1
        if self.until is not None and t <= self.until + 1e-12:
            return 1
        self.until = None
        return 0


class DetectorState:
    """Streaming state of one detector over both poles."""

    def __init__(self, cfg: DetectorConfig, f_s: float = F_SAMPLE):
        self.cfg = cfg
        self.f_s = f_s
        self.channels = _INPUTS[cfg.kind]
        self.ma = [MovingAverage(cfg.window) for _ in self.channels]
        self.prev: list[Optional[float]] = [None, None]
        self.latch = _Latch(cfg.hold_ms * 1e-3)
        self.n_ref = max(1, int(round(cfg.reference_ms * 1e-3 * f_s)))
        self.ref_sum = [0.0, 0.0]
        self.seen = 0
        self.s_up = [0.0, 0.0]
        self.s_down = [0.0, 0.0]

    def raw(self, x: Sequence[float]) -> bool:
        kind = self.cfg.kind
        fired = False
        if kind == "qcd":
            if self.seen < self.n_ref:
                for p, ch in enumerate(self.channels):
                    self.ref_sum[p] += x[ch]
                self.seen += 1
                return False
            nu, h = self.cfg.drift, self.cfg.h
            for p, ch in enumerate(self.channels):
                ref = self.ref_sum[p] / self.n_ref
                self.s_up[p] = max(0.0, self.s_up[p] + (ref - x[ch]) - nu)
                self.s_down[p] = max(0.0, self.s_down[p] + (x[ch] - ref) - nu)
                fired |= max(self.s_up[p], self.s_down[p]) >= h
            return fired
        for p, ch in enumerate(self.channels):
            y = self.ma[p](x[ch])
            if kind == "current_threshold":
                fired |= abs(y) >= self.cfg.threshold
            else:
                prev, self.prev[p] = self.prev[p], y
                if prev is None:
                    continue
                rate = (y - prev) * self.f_s * 1e-3  # per ms
                if kind == "rocov" and self.cfg.mode == "falling":
                    fired |= rate <= -self.cfg.threshold
                else:
                    fired |= abs(rate) >= self.cfg.threshold
        return fired

    def step(self, x: Sequence[float], t: float) -> int:
        return self.latch(self.raw(x), t)


def threshold_step(state: DetectorState, x, t: float) -> int:
    return state.step(x, t)


def derivative_step(state: DetectorState, x, t: float) -> int:
    return state.step(x, t)


def rocov_step(state: DetectorState, x, t: float) -> int:
    return state.step(x, t)


def qcd_step(state: DetectorState, x, t: float) -> int:
    return state.step(x, t)


class PoolState:
    def __init__(self, configs: Sequence[DetectorConfig], f_s: float = F_SAMPLE):
        self.states = [DetectorState(c, f_s) for c in configs]

    def step(self, x, t: float) -> tuple[int, ...]:
        return tuple(s.step(x, t) for s in self.states)


def pool_step(states: PoolState, x, t: float):
    from .core import Decision

    return Decision(t, states.step(x, t))


# --- batch ----------------------------------------------------------------------


def _moving_average(x: np.ndarray, w: int) -> np.ndarray:
    """Column-wise mean of the last min(seen, w) samples, summed oldest first
    exactly like the streaming filter."""
    if w == 1:
        return x.copy()
    n = len(x)
    acc = np.zeros_like(x)
    count = np.zeros(n)
    for lag in range(w - 1, -1, -1):
        if lag < n:
            acc[lag:] = acc[lag:] + x[: n - lag]
            count[lag:] += 1
    return acc / count[:, None]


def _latch(raw: np.ndarray, hold: int) -> np.ndarray:
    """1 on every frame within ``hold`` frames after a raw firing (inclusive)."""
    cs = np.concatenate([[0], np.cumsum(raw.astype(np.int64))])
    n = len(raw)
    idx = np.arange(n)
    lo = np.maximum(idx - hold, 0)
    return (cs[idx + 1] - cs[lo] > 0).astype(np.int8)


def cusum_path(y: np.ndarray) -> np.ndarray:
    """S_k = max(0, S_{k-1} + y_k), S_0 = 0, via the running-minimum closed form."""
    w = np.cumsum(y, axis=0)
    floor = np.minimum(np.minimum.accumulate(w, axis=0), 0.0)
    return w - floor


def statistic(cfg: DetectorConfig, pu: np.ndarray, f_s: float = F_SAMPLE) -> np.ndarray:
    """Per-frame detection statistic (worst pole); the detector fires on a
    frame iff this reaches ``cfg.threshold``."""
    x = pu[:, list(_INPUTS[cfg.kind])]
    n = len(x)
    stat = np.zeros(n)
    if cfg.kind == "qcd":
        n_ref = max(1, int(round(cfg.reference_ms * 1e-3 * f_s)))
        if n <= n_ref:
            return stat
        ref = np.cumsum(x[:n_ref], axis=0)[-1] / n_ref  # sequential, as streamed
        tail = x[n_ref:]
        s_up = cusum_path((ref - tail) - cfg.drift)
        s_dn = cusum_path((tail - ref) - cfg.drift)
        stat[n_ref:] = np.maximum(s_up, s_dn).max(axis=1)
        return stat
    y = _moving_average(x, cfg.window)
    if cfg.kind == "current_threshold":
        return np.abs(y).max(axis=1)
    rate = (y[1:] - y[:-1]) * f_s * 1e-3
    if cfg.kind == "rocov" and cfg.mode == "falling":
        stat[1:] = np.maximum((-rate).max(axis=1), 0.0)
    else:
        stat[1:] = np.abs(rate).max(axis=1)
    return stat


def peak_statistic(cfg: DetectorConfig, pu: np.ndarray, f_s: float = F_SAMPLE) -> float:
    stat = statistic(cfg, pu, f_s)
    return float(stat.max()) if stat.size else 0.0


def raw_decisions(cfg: DetectorConfig, pu: np.ndarray, f_s: float = F_SAMPLE) -> np.ndarray:
    """Per-frame pre-latch firing of ``cfg`` on a record (N x 6 per-unit)."""
    return statistic(cfg, pu, f_s) >= cfg.threshold


def decide(cfg: DetectorConfig, pu: np.ndarray, f_s: float = F_SAMPLE) -> np.ndarray:
    hold = int(np.floor(cfg.hold_ms * 1e-3 * f_s + 1e-9))
    return _latch(raw_decisions(cfg, pu, f_s), hold)


def pool_decide(configs: Sequence[DetectorConfig], pu: np.ndarray, f_s: float = F_SAMPLE) -> np.ndarray:
    """N_frames x N_detectors decision matrix."""
    return np.stack([decide(c, pu, f_s) for c in configs], axis=1)
