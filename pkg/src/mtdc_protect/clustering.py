"""Context clustering: k-means over per-unit 6-vectors, silhouette k-selection, PCA."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import FaultKind, WaveformRecord

log = logging.getLogger(__name__)

FEATURE_DELAY_S = 0.5e-3  # feature instant after wavefront arrival
MAX_ITER = 300
DEFAULT_RESTARTS = 32
K_CANDIDATES = (2, 3, 4)


class ClusterConfigError(ValueError):
    pass


class DegenerateData(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Fitted centroids; row ``j`` carries label ``j + 1``."""

    centroids: np.ndarray
    inertia: float = 0.0

    def __post_init__(self):
        c = np.array(self.centroids, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ClusterConfigError("centroids must be a non-empty k x d matrix")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def label_ids(self) -> tuple[int, ...]:
        return tuple(range(1, self.k + 1))

    def assign(self, x) -> int:
        return assign(self, x)

    def assign_many(self, X) -> np.ndarray:
        return _nearest(np.asarray(X, dtype=float), self.centroids) + 1

    def __eq__(self, other):
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return np.array_equal(self.centroids, other.centroids)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. the lowest label on ties
    return np.argmin(_sq_dists(X, C), axis=1)


def assign(model: ClusterModel, x) -> int:
    """Label (1-based) of the nearest centroid; ties go to the lowest label."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return int(_nearest(x, model.centroids)[0]) + 1


# --- features -------------------------------------------------------------------


def extract_features(rec: WaveformRecord, at: float, normalization=None) -> np.ndarray:
    """Per-unit channel vector of the frame nearest ``at``."""
    pu = rec.per_unit(normalization)
    return pu[rec.frame_index(at)].copy()


def training_instant(rec: WaveformRecord) -> float:
    """Feature instant used for training: shortly after the wavefront for faults,
    mid-way through the quiescent pre-event span otherwise."""
    if rec.arrival_time is not None:
        return rec.arrival_time + FEATURE_DELAY_S
    t0 = float(rec.t[0])
    quiet_end = rec.spec.t_fault if rec.spec.flow_step_ka else float(rec.t[-1])
    return t0 + 0.5 * (min(quiet_end, float(rec.t[-1])) - t0)


def training_features(records: Iterable[WaveformRecord]) -> np.ndarray:
    return np.array([extract_features(r, training_instant(r)) for r in records])


# --- k-means --------------------------------------------------------------------


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int = MAX_ITER):
    """Lloyd iterations from ``C``; returns (centroids, labels, inertia, history)."""
    C = C.copy()
    labels = _nearest(X, C)
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, C)
        history.append(float(d[np.arange(len(X)), labels].sum()))
        for j in range(C.shape[0]):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                # re-seed at the point farthest from its current centroid
                far = int(np.argmax(d[np.arange(len(X)), labels]))
                C[j] = X[far]
                labels[far] = j
        new = _nearest(X, C)
        if np.array_equal(new, labels):
            break
        labels = new
    labels = _nearest(X, C)
    d = _sq_dists(X, C)
    inertia = float(d[np.arange(len(X)), labels].sum())
    history.append(inertia)
    return C, labels, inertia, history


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            j = int(rng.integers(n))
        else:
            j = int(rng.choice(n, p=d2 / total))
        idx.append(j)
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    return X[idx].copy()


def kmeans_fit(X, k: int, seeds: int = DEFAULT_RESTARTS, seed: int = 0,
               max_iter: int = MAX_ITER) -> ClusterModel:
    """Best-of-``seeds`` k-means (k-means++ starts, Lloyd refinement) by inertia."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ClusterConfigError("X must be an n x d matrix")
    if k < 1:
        raise ClusterConfigError("k must be >= 1")
    if len(X) < k:
        raise ClusterConfigError(f"need at least k={k} observations, got {len(X)}")
    if seeds < 1:
        raise ClusterConfigError("need at least one restart")
    best: Optional[tuple] = None
    for r in range(seeds):
        rng = np.random.default_rng([seed, r])
        C, labels, inertia, history = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        if np.any(np.diff(history) > 1e-9 * max(1.0, history[0])):
            raise AssertionError("Lloyd inertia increased")
        if best is None or inertia < best[2] - 1e-12:
            best = (C, labels, inertia)
    C, labels, inertia = best
    # canonical label order: sort centroids lexicographically so label ids do
    # not depend on which restart won
    order = np.lexsort(C.T[::-1])
    return ClusterModel(C[order], inertia)


def labels_of(model: ClusterModel, X) -> np.ndarray:
    return model.assign_many(X)


# --- silhouette and k selection --------------------------------------------------


def silhouette(X, model: ClusterModel, labels: Optional[np.ndarray] = None) -> float:
    """Mean silhouette; singleton clusters score 0 and a = b = 0 scores 0."""
    X = np.asarray(X, dtype=float)
    if model.k < 2:
        raise ClusterConfigError("silhouette is undefined for k = 1")
    if labels is None:
        labels = model.assign_many(X)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if len(present) < 2:
        raise ClusterConfigError("silhouette needs at least two non-empty clusters")
    d = np.sqrt(np.maximum(_sq_dists(X, X), 0.0))
    s = np.zeros(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, labels == c].mean() for c in present if c != labels[i])
        m = max(a, b)
        s[i] = 0.0 if m == 0 else (b - a) / m
    return float(s.mean())


def select_k(X, candidates: Sequence[int] = K_CANDIDATES, seeds: int = DEFAULT_RESTARTS, seed: int = 0):
    """Return (k*, model, {k: silhouette}); ties resolve to the smaller k."""
    if not candidates:
        raise ClusterConfigError("no candidate k")
    scores = {}
    models = {}
    for k in sorted(candidates):
        model = kmeans_fit(X, k, seeds=seeds, seed=seed)
        scores[k] = silhouette(X, model)
        models[k] = model
        log.info("k=%d silhouette=%.4f", k, scores[k])
    best = max(sorted(scores), key=lambda k: (scores[k], -k))
    return best, models[best], scores


# --- PCA ------------------------------------------------------------------------


def pca_project(X, n_components: int = 2):
    """Project mean-centred X on its top principal components.

    Returns (coords, explained-variance fractions, components). Each
    component is signed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        raise DegenerateData("PCA needs at least two observations")
    Xc = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    var = sv ** 2
    total = var.sum()
    if total <= 1e-300:
        raise DegenerateData("observations have zero variance")
    comps = vt[:n_components].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    coords = Xc @ comps.T
    if coords.shape[1] < n_components:
        coords = np.pad(coords, ((0, 0), (0, n_components - coords.shape[1])))
    frac = np.zeros(n_components)
    frac[: len(var[:n_components])] = var[:n_components] / total
    return coords, frac, comps


def pca_plot_csv(X, labels) -> str:
    coords, _, _ = pca_project(X)
    lines = ["pc1,pc2,label"]
    for (p1, p2), lab in zip(coords, labels):
        lines.append(f"{p1!r},{p2!r},{int(lab)}")
    return "\n".join(lines) + "\n"


def dominant_kinds(model: ClusterModel, X, kinds: Sequence[FaultKind]) -> dict[int, dict[str, int]]:
    """Per-label count of the scenario kinds whose training vector it holds."""
    labels = model.assign_many(X)
    out: dict[int, dict[str, int]] = {lab: {} for lab in model.label_ids}
    for lab, kind in zip(labels, kinds):
        key = kind.value
        out[int(lab)][key] = out[int(lab)].get(key, 0) + 1
    return out
