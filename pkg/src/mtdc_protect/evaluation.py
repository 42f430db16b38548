"""Noise injection, latency, ROC/AUC and corpus-level reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import V_POLE_KV, FaultKind, ModelBundle, Normalization, WaveformRecord
from .detectors import DetectorConfig, KINDS, peak_statistic

# Sensor full scale: converter-1 rated dc current and the nominal pole voltage.
SENSOR_FULL_SCALE = Normalization((900.0 / 640.0, 900.0 / 640.0, V_POLE_KV, V_POLE_KV, V_POLE_KV, V_POLE_KV))

# Lumped pi-section lines let a small precursor reach the relay slightly ahead
# of the distributed-line travel time; trips inside this margin are not false starts.
FALSE_START_TOLERANCE_S = 0.1e-3

N_SWEEP = 41
DETECTOR_SCALES = tuple(float(s) for s in np.logspace(-1.0, 1.0, N_SWEEP))
HYBRID_CUTOFFS = tuple((j + 1) / (N_SWEEP + 1) for j in range(N_SWEEP))


class UndefinedLatency(ValueError):
    pass


class MetricError(ValueError):
    pass


def inject_noise(rec: WaveformRecord, sigma: float, seed: int,
                 normalization: Optional[Normalization] = None) -> WaveformRecord:
    """Add i.i.d. N(0, sigma^2) per channel and frame in the per-unit domain of
    ``normalization`` (sensor full scale by default), then convert back."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return rec
    norm = normalization or SENSOR_FULL_SCALE
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=rec.data.shape)
    return rec.with_data(rec.data + noise / norm.scale)


# --- latency --------------------------------------------------------------------


@dataclass(frozen=True)
class Latency:
    outcome: str  # "detected", "miss" or "false_start"
    value: Optional[float] = None  # trip time - arrival time [s]


def detection_latency(rec: WaveformRecord, trip, tolerance: float = FALSE_START_TOLERANCE_S) -> Latency:
    """Trip time relative to wavefront arrival.

    ``trip`` is a TripCommand, a trip time in seconds, or None. A trip more
    than ``tolerance`` ahead of arrival is a false start.
    """
    if rec.arrival_time is None:
        raise UndefinedLatency("record has no wavefront arrival; latency is undefined")
    if trip is None:
        return Latency("miss")
    t = float(getattr(trip, "t", trip))
    lat = t - rec.arrival_time
    if lat < -tolerance:
        return Latency("false_start", lat)
    return Latency("detected", lat)


# --- ROC ------------------------------------------------------------------------


@dataclass(frozen=True)
class RocPoint:
    scale: float
    fpr: float
    tpr: float

    def __post_init__(self):
        if not (0.0 <= self.fpr <= 1.0 and 0.0 <= self.tpr <= 1.0):
            raise MetricError("rates must lie in [0, 1]")


Subject = Union[DetectorConfig, ModelBundle]


def record_peak(rec: WaveformRecord, subject: Subject) -> float:
    """Largest sweep parameter at which ``subject`` still trips on ``rec``.

    For a detector this is the peak statistic over its unit threshold, so it
    fires at scale s iff peak >= s (thresholds scale linearly). For the hybrid
    it is the peak fused metric, tripping at cutoff c iff peak > c.
    """
    if isinstance(subject, DetectorConfig):
        return peak_statistic(subject, rec.per_unit(), rec.f_s) / subject.threshold
    from .learner import run_relay

    return float(run_relay(subject, rec).h.max())


def _fires(peak: np.ndarray, subject: Subject, s: float) -> np.ndarray:
    if isinstance(subject, DetectorConfig):
        return peak >= s
    return peak > s


def auc_anchored(points: Sequence[RocPoint]) -> float:
    pts = sorted({(p.fpr, p.tpr) for p in points} | {(0.0, 0.0), (1.0, 1.0)})
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def roc_from_peaks(peaks, labels, subject: Subject, sweep: Optional[Sequence[float]] = None):
    peaks = np.asarray(peaks, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both trip and no-trip records")
    if sweep is None:
        sweep = DETECTOR_SCALES if isinstance(subject, DetectorConfig) else HYBRID_CUTOFFS
    points = []
    for s in sweep:
        f = _fires(peaks, subject, s)
        points.append(RocPoint(float(s), float((f & ~labels).sum() / n_neg), float((f & labels).sum() / n_pos)))
    points.sort(key=lambda p: (p.fpr, p.tpr, p.scale))
    return points, auc_anchored(points)


def roc_curve(corpus: Sequence[WaveformRecord], subject: Subject, sweep: Optional[Sequence[float]] = None):
    """(points sorted by FPR, anchored trapezoidal AUC)."""
    peaks = [record_peak(r, subject) for r in corpus]
    return roc_from_peaks(peaks, [bool(r.label) for r in corpus], subject, sweep)


def roc_csv(points: Sequence[RocPoint]) -> str:
    lines = ["scale,fpr,tpr"] + [f"{p.scale!r},{p.fpr!r},{p.tpr!r}" for p in points]
    return "\n".join(lines) + "\n"


# --- corpus report --------------------------------------------------------------


def _percentile95(values: Sequence[float]) -> float:
    v = sorted(values)
    if not v:
        return math.nan
    # nearest-rank
    return v[max(0, math.ceil(0.95 * len(v)) - 1)]


@dataclass
class RecordOutcome:
    scenario_id: str
    kind: FaultKind
    label: bool
    tripped: bool
    trip_time: Optional[float]
    latency: Optional[Latency]


def evaluate_records(bundle: ModelBundle, corpus: Sequence[WaveformRecord]) -> list[RecordOutcome]:
    from .learner import detect

    out = []
    for rec in corpus:
        trip = detect(bundle, rec)
        lat = detection_latency(rec, trip) if (rec.label and rec.arrival_time is not None) else None
        out.append(RecordOutcome(rec.spec.scenario_id, rec.spec.fault, bool(rec.label), trip is not None,
                                 None if trip is None else trip.t, lat))
    return out


def summarize(outcomes: Sequence[RecordOutcome]) -> list[tuple[str, float]]:
    """Aggregate metrics as ordered (name, value) rows."""
    rows: list[tuple[str, float]] = []
    if not outcomes:
        return rows
    pos = [o for o in outcomes if o.label]
    neg = [o for o in outcomes if not o.label]
    rows.append(("records", float(len(outcomes))))
    for kind in (FaultKind.P2P, FaultKind.P2G_LOW, FaultKind.P2G_HIGH):
        sel = [o for o in pos if o.kind is kind]
        if sel:
            rows.append((f"detection_rate_{kind.value}", sum(o.tripped for o in sel) / len(sel)))
    if pos:
        detected = [o for o in pos if o.latency is not None and o.latency.outcome == "detected"]
        rows.append(("detection_rate", len(detected) / len(pos)))
        rows.append(("miss_rate", sum(not o.tripped for o in pos) / len(pos)))
        rows.append(("false_starts", float(sum(o.latency is not None and o.latency.outcome == "false_start"
                                               for o in pos))))
        lats = [o.latency.value for o in detected]
        rows.append(("latency_mean_ms", 1e3 * float(np.mean(lats)) if lats else math.nan))
        rows.append(("latency_p95_ms", 1e3 * _percentile95(lats) if lats else math.nan))
    if neg:
        ext = [o for o in neg if o.kind is FaultKind.EXTERNAL]
        nor = [o for o in neg if o.kind is FaultKind.NONE]
        rows.append(("false_trips_external", float(sum(o.tripped for o in ext))))
        rows.append(("false_trips_normal", float(sum(o.tripped for o in nor))))
        rows.append(("false_alarm_rate", sum(o.tripped for o in neg) / len(neg)))
    return rows


def evaluate_corpus(bundle: ModelBundle, corpus: Sequence[WaveformRecord]) -> list[tuple[str, float]]:
    return summarize(evaluate_records(bundle, corpus))


def report_csv(rows: Sequence[tuple[str, float]]) -> str:
    lines = ["metric,value"] + [f"{name},{value!r}" for name, value in rows]
    return "\n".join(lines) + "\n"


def subjects(bundle: ModelBundle) -> dict[str, Subject]:
    """ROC subjects: each pool detector by kind, then the hybrid."""
    out: dict[str, Subject] = {}
    for cfg in bundle.detector_configs:
        name = cfg.kind if cfg.kind in KINDS else f"detector{len(out) + 1}"
        out[name] = cfg
    out["hybrid"] = bundle
    return out
