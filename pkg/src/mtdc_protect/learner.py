"""Detector learner: per-cluster weight training, weighted-vote fusion and the relay."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .clustering import (
    DEFAULT_RESTARTS,
    K_CANDIDATES,
    ClusterModel,
    assign,
    kmeans_fit,
    select_k,
    silhouette,
    training_features,
)
from .core import (
    CALIBRATION_S,
    F_SAMPLE,
    Decision,
    ModelBundle,
    Normalization,
    SensorFrame,
    WaveformRecord,
)
from .detectors import DetectorConfig, PoolState, default_configs, pool_decide

log = logging.getLogger(__name__)

TRIP_CUTOFF = 0.5
DECISION_WINDOW_S = 10e-3  # training window after arrival for fault records
TRIP_LOG_HEADER = "t,breaker,h,cluster,d1,d2,d3,d4"


class ContractError(ValueError):
    pass


class DegenerateCorpus(ValueError):
    pass


@dataclass(eq=False)
class WeightTable:
    """``w[c - 1]`` is the weight row of cluster label ``c``."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 2:
            raise ContractError("weight table must be k x N")
        if np.any(self.w < 0):
            raise ContractError("weights must be non-negative")
        if not np.allclose(self.w.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ContractError("every weight row must sum to 1")

    def row(self, label: int) -> np.ndarray:
        return self.w[label - 1]

    @property
    def k(self) -> int:
        return self.w.shape[0]

    def __eq__(self, other):
        return isinstance(other, WeightTable) and np.array_equal(self.w, other.w)


@dataclass(frozen=True)
class TrainingSample:
    features: np.ndarray
    label: bool  # ground truth: trip
    decisions: tuple[int, ...]


@dataclass(frozen=True)
class TripCommand:
    breaker: str
    t: float
    h: float
    cluster: int
    decisions: tuple[int, ...]

    @property
    def contributing(self) -> tuple[int, ...]:
        """1-based indices of the detectors voting trip."""
        return tuple(n + 1 for n, d in enumerate(self.decisions) if d)

    def csv_row(self) -> str:
        return ",".join([repr(float(self.t)), self.breaker, repr(float(self.h)), str(self.cluster)]
                        + [str(d) for d in self.decisions])


# --- training -------------------------------------------------------------------


def train_weights(samples: Sequence[TrainingSample], cluster_model: ClusterModel,
                  clusters: Optional[Sequence[int]] = None) -> WeightTable:
    """Per cluster: correct rate of each detector against ground truth, normalised.

    A detector is correct on a sample when its decision equals the label.
    Clusters without samples, or where every detector is always wrong, keep
    the uniform initial row.
    """
    if not samples:
        raise DegenerateCorpus("no training samples")
    n_det = len(samples[0].decisions)
    if clusters is None:
        clusters = [assign(cluster_model, s.features) for s in samples]
    rows = []
    for c in cluster_model.label_ids:
        members = [s for s, lab in zip(samples, clusters) if lab == c]
        m = len(members)
        if m == 0:
            warnings.warn(f"cluster {c} has no training samples; keeping uniform weights", stacklevel=2)
            rows.append([1.0 / n_det] * n_det)
            continue
        counts = [0] * n_det
        for s in members:
            for n, d in enumerate(s.decisions):
                if int(d) == int(s.label):
                    counts[n] += 1
        rates = [cnt / m for cnt in counts]
        total = sum(rates)
        if total == 0:
            warnings.warn(f"no detector is ever correct in cluster {c}; keeping uniform weights", stacklevel=2)
            rows.append([1.0 / n_det] * n_det)
            continue
        rows.append([r / total for r in rates])
    return WeightTable(np.array(rows))


def record_decisions(rec: WaveformRecord, configs: Sequence[DetectorConfig],
                     normalization: Optional[Normalization] = None) -> tuple[int, ...]:
    """Did each detector fire: within the decision window after arrival for
    fault records, anywhere in the record otherwise."""
    dec = pool_decide(configs, rec.per_unit(normalization), rec.f_s)
    if rec.label and rec.arrival_time is not None:
        sel = (rec.t >= rec.arrival_time - 1e-12) & (rec.t <= rec.arrival_time + DECISION_WINDOW_S + 1e-12)
        dec = dec[sel]
    return tuple(int(v) for v in dec.any(axis=0)) if len(dec) else (0,) * len(configs)


def training_samples(records: Sequence[WaveformRecord], configs: Sequence[DetectorConfig]) -> list[TrainingSample]:
    X = training_features(records)
    return [TrainingSample(x, bool(r.label), record_decisions(r, configs)) for x, r in zip(X, records)]


def reference_normalization(records: Sequence[WaveformRecord]) -> Normalization:
    """Median pre-fault bases across a corpus (polarity of the first record)."""
    norms = [r.prefault_normalization() for r in records]
    bases = np.median(np.array([n.bases for n in norms]), axis=0)
    return Normalization(tuple(float(b) for b in bases), norms[0].polarity)


def train_bundle(records: Sequence[WaveformRecord], configs: Optional[Sequence[DetectorConfig]] = None,
                 candidates: Sequence[int] = K_CANDIDATES, k: Optional[int] = None,
                 restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> ModelBundle:
    """Offline training: features, k selection, clustering and weights."""
    records = list(records)
    configs = list(configs or default_configs())
    if len({bool(r.label) for r in records}) < 2:
        raise DegenerateCorpus("training corpus needs both trip and no-trip records")
    if len(records) < max(candidates if k is None else [k]) + 1:
        raise DegenerateCorpus("training corpus is smaller than k + 1")
    samples = training_samples(records, configs)
    X = np.array([s.features for s in samples])
    if np.ptp(X, axis=0).max() == 0:
        raise DegenerateCorpus("all training feature vectors are identical")
    if k is None:
        k, model, scores = select_k(X, candidates, seeds=restarts, seed=seed)
    else:
        model = kmeans_fit(X, k, seeds=restarts, seed=seed)
        scores = {k: silhouette(X, model)} if k >= 2 else {}
    table = train_weights(samples, model)
    return ModelBundle(model, table.w, configs, reference_normalization(records), silhouettes=scores)


# --- fusion and relay -----------------------------------------------------------


def fuse(w_row, d) -> tuple[float, int]:
    """Weighted vote h = sum w_n d_n; trip iff h > 0.5."""
    w_row = list(w_row)
    d = list(d.d if isinstance(d, Decision) else d)
    if len(w_row) != len(d):
        raise ContractError(f"{len(w_row)} weights but {len(d)} decisions")
    h = 0.0
    for w, v in zip(w_row, d):
        h += w * v
    return h, int(h > TRIP_CUTOFF)


def breaker_id(line: str, term: int) -> str:
    a, b = line[-2], line[-1]
    other = b if str(term) == a else a
    return f"CB{term}{other}"


@dataclass
class RelayTrace:
    """Per-frame internals of one relay run over a record."""

    t: np.ndarray
    clusters: np.ndarray
    decisions: np.ndarray
    h: np.ndarray
    trip: Optional[TripCommand]


def _self_calibrated(bundle: ModelBundle, data: np.ndarray, f_s: float) -> Normalization:
    """Bundle normalization with current bases re-measured on the calibration window."""
    n_cal = max(1, int(round(CALIBRATION_S * f_s)))
    measured = Normalization.from_prefault(data[:n_cal])
    bases = list(bundle.normalization.bases)
    bases[0], bases[1] = measured.bases[0], measured.bases[1]
    return Normalization(tuple(bases), bundle.normalization.polarity)


def run_relay(bundle: ModelBundle, rec: WaveformRecord, breaker: Optional[str] = None,
              self_calibrate: bool = True) -> RelayTrace:
    """Batch form of the online pipeline; identical to streaming :class:`Relay`."""
    norm = _self_calibrated(bundle, rec.data, rec.f_s) if self_calibrate else bundle.normalization
    pu = rec.per_unit(norm)
    dec = pool_decide(bundle.detector_configs, pu, rec.f_s)
    clusters = bundle.cluster_model.assign_many(pu)
    w = bundle.weight_table[clusters - 1]
    h = np.zeros(len(pu))
    for n in range(dec.shape[1]):  # same accumulation order as fuse()
        h = h + w[:, n] * dec[:, n]
    fired = np.flatnonzero(h > TRIP_CUTOFF)
    trip = None
    if fired.size:
        i = int(fired[0])
        br = breaker or breaker_id(rec.spec.line, int(rec.spec.line[-2]))
        trip = TripCommand(br, float(rec.t[i]), float(h[i]), int(clusters[i]), tuple(int(v) for v in dec[i]))
    return RelayTrace(rec.t, clusters, dec, h, trip)


def detect(bundle: ModelBundle, rec: WaveformRecord, **kw) -> Optional[TripCommand]:
    return run_relay(bundle, rec, **kw).trip


class Relay:
    """Streaming relay for one line end.

    The first calibration window of frames is buffered to measure the
    current bases; the buffer is then replayed through the pipeline, so the
    streaming output equals :func:`run_relay` frame for frame.
    """

    def __init__(self, bundle: ModelBundle, breaker: str = "CB13", f_s: float = F_SAMPLE,
                 self_calibrate: bool = True):
        self.bundle = bundle
        self.breaker = breaker
        self.f_s = f_s
        self.self_calibrate = self_calibrate
        self.n_cal = max(1, int(round(CALIBRATION_S * f_s)))
        self._buffer: list[SensorFrame] = []
        self.norm: Optional[Normalization] = None if self_calibrate else bundle.normalization
        self.pool = PoolState(bundle.detector_configs, f_s)
        self.trip: Optional[TripCommand] = None
        self.log: list[tuple[float, float, int, tuple[int, ...]]] = []

    def _process(self, frame: SensorFrame) -> Optional[TripCommand]:
        x = frame.as_vector() * self.norm.scale
        c = self.bundle.cluster_model.assign(x)
        decision = self.pool.step(x, frame.t)
        h, trip = fuse(self.bundle.weight_table[c - 1], decision)
        self.log.append((frame.t, h, c, decision))
        if trip and self.trip is None:
            self.trip = TripCommand(self.breaker, float(frame.t), float(h), c, decision)
            return self.trip
        return None

    def step(self, frame: SensorFrame) -> Optional[TripCommand]:
        if self.norm is None:
            self._buffer.append(frame)
            if len(self._buffer) < self.n_cal:
                return None
            data = np.array([f.as_vector() for f in self._buffer])
            self.norm = _self_calibrated(self.bundle, data, self.f_s)
            issued = None
            for f in self._buffer:
                issued = self._process(f) or issued
            self._buffer = []
            return issued
        return self._process(frame)

    def finish(self) -> Optional[TripCommand]:
        """Flush a record shorter than the calibration window."""
        if self.norm is None and self._buffer:
            data = np.array([f.as_vector() for f in self._buffer])
            self.norm = _self_calibrated(self.bundle, data, self.f_s)
            issued = None
            for f in self._buffer:
                issued = self._process(f) or issued
            self._buffer = []
            return issued
        return None


def relay_step(relay: Relay, frame: SensorFrame) -> Optional[TripCommand]:
    return relay.step(frame)


def trip_log_csv(trips: Iterable[TripCommand]) -> str:
    lines = [TRIP_LOG_HEADER] + [t.csv_row() for t in trips]
    return "\n".join(lines) + "\n"
