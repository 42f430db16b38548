"""Shared domain vocabulary: frames, scenarios, records, decisions, model bundles."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

# Channel ordering shared by per-unit conversion, clustering and detectors.
CHANNELS = ("i_pos", "i_neg", "vl_pos", "vl_neg", "vr_pos", "vr_neg")
I_POS, I_NEG, VL_POS, VL_NEG, VR_POS, VR_NEG = range(6)
CSV_HEADER = ("t",) + CHANNELS

F_SAMPLE = 50e3
V_POLE_KV = 320.0
CALIBRATION_S = 10e-3
FORMAT_VERSION = 1


class InvalidNormalization(ValueError):
    pass


class ScenarioError(ValueError):
    pass


class Pole(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class FaultKind(Enum):
    NONE = "none"
    P2P = "P2P"
    P2G_LOW = "P2G_low"
    P2G_HIGH = "P2G_high"
    EXTERNAL = "external"

    @property
    def is_pole_to_ground(self) -> bool:
        return self in (FaultKind.P2G_LOW, FaultKind.P2G_HIGH)


@dataclass(frozen=True)
class SensorFrame:
    t: float
    line_current: tuple[float, float]
    line_voltage: tuple[float, float]
    reactor_voltage: tuple[float, float]

    def as_vector(self) -> np.ndarray:
        return np.array(self.line_current + self.line_voltage + self.reactor_voltage, dtype=float)

    @classmethod
    def from_vector(cls, t: float, x: Sequence[float]) -> "SensorFrame":
        x = [float(v) for v in x]
        return cls(float(t), (x[0], x[1]), (x[2], x[3]), (x[4], x[5]))


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation run.

    ``line`` is the monitored line; the relay sits at its first-named terminal
    (``Line13`` -> terminal 1). For ``EXTERNAL`` faults ``fault_line`` names the
    faulted neighbour and ``location_km`` is measured along it from its own
    first-named terminal; ``pole`` set means a pole-to-ground external fault,
    unset means pole-to-pole.

    ``flow_step_ka`` describes a fault-free power-flow change: from ``t_fault`` on,
    the far-end converter of the monitored line ramps its absorbed current up
    by this amount.
    """

    line: str = "Line13"
    fault: FaultKind = FaultKind.NONE
    location_km: float = 0.0
    impedance_ohm: float = 0.0
    t_fault: float = 0.02
    duration: float = 0.035
    noise_sigma: float = 0.0
    seed: int = 0
    pole: Optional[Pole] = None
    fault_line: Optional[str] = None
    flow_step_ka: float = 0.0

    def __lt__(self, other):  # enums are not orderable; sort on a tuple key
        return self.sort_key() < other.sort_key()

    def sort_key(self) -> tuple:
        return (
            self.line,
            self.fault.value,
            self.fault_line or "",
            self.pole.value if self.pole else "",
            self.location_km,
            self.impedance_ohm,
            self.noise_sigma,
            self.seed,
            self.t_fault,
            self.duration,
            self.flow_step_ka,
        )

    @property
    def faulted_line(self) -> Optional[str]:
        if self.fault is FaultKind.NONE:
            return None
        return self.fault_line if self.fault is FaultKind.EXTERNAL else self.line

    @property
    def is_internal(self) -> bool:
        return self.fault in (FaultKind.P2P, FaultKind.P2G_LOW, FaultKind.P2G_HIGH)

    def validate(self, line_lengths: Optional[dict[str, float]] = None) -> None:
        if not self.t_fault < self.duration:
            raise ScenarioError(f"t_fault={self.t_fault} must precede duration={self.duration}")
        if self.noise_sigma < 0:
            raise ScenarioError("noise_sigma must be non-negative")
        if self.flow_step_ka and self.fault is not FaultKind.NONE:
            raise ScenarioError("power-flow steps are only modelled on fault-free scenarios")
        if self.fault is FaultKind.NONE:
            return
        if self.impedance_ohm < 0:
            raise ScenarioError("impedance_ohm must be non-negative")
        if self.impedance_ohm == 0 and self.fault is FaultKind.EXTERNAL:
            raise ScenarioError("zero fault impedance is only allowed for P2P/P2G faults")
        if self.fault.is_pole_to_ground and self.pole is None:
            raise ScenarioError("P2G faults need a faulted pole")
        if self.fault is FaultKind.EXTERNAL:
            if not self.fault_line or self.fault_line == self.line:
                raise ScenarioError("external faults need a fault_line other than the monitored line")
        if line_lengths is not None:
            name = self.faulted_line
            if name not in line_lengths:
                raise ScenarioError(f"unknown line {name!r}")
            if not 0 <= self.location_km <= line_lengths[name]:
                raise ScenarioError(
                    f"location_km={self.location_km} outside [0, {line_lengths[name]}] on {name}"
                )

    def to_dict(self) -> dict:
        return {
            "line": self.line,
            "fault": self.fault.value,
            "location_km": self.location_km,
            "impedance_ohm": self.impedance_ohm,
            "t_fault": self.t_fault,
            "duration": self.duration,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "pole": self.pole.value if self.pole else None,
            "fault_line": self.fault_line,
            "flow_step_ka": self.flow_step_ka,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ScenarioError(f"unknown scenario field(s): {sorted(unknown)}")
        kw = dict(d)
        try:
            if "fault" in kw:
                kw["fault"] = FaultKind(kw["fault"])
            if kw.get("pole") is not None:
                kw["pole"] = Pole(kw["pole"])
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
        for name in ("location_km", "impedance_ohm", "t_fault", "duration", "noise_sigma", "flow_step_ka"):
            if name in kw:
                try:
                    kw[name] = float(kw[name])
                except (TypeError, ValueError):
                    raise ScenarioError(f"field {name!r} must be a number, got {kw[name]!r}") from None
        if "seed" in kw:
            if not isinstance(kw["seed"], int):
                raise ScenarioError(f"field 'seed' must be an integer, got {kw['seed']!r}")
        return cls(**kw)

    @property
    def scenario_id(self) -> str:
        parts = [self.line, self.fault.value]
        if self.fault is FaultKind.EXTERNAL:
            parts.append(self.fault_line)
        if self.pole is not None:
            parts.append("pos" if self.pole is Pole.POSITIVE else "neg")
        if self.fault is not FaultKind.NONE:
            parts.append(f"{self.location_km:g}km")
            parts.append(f"{self.impedance_ohm:g}ohm")
        if self.flow_step_ka:
            parts.append(f"step{self.flow_step_ka:g}kA")
        parts.append(f"n{self.noise_sigma:g}")
        parts.append(f"s{self.seed}")
        return "_".join(parts)


@dataclass(frozen=True)
class Normalization:
    """Per-channel bases and sign conventions for per-unit conversion.

    ``polarity`` flips channels so that both poles read positive in normal
    operation (negative-pole voltages and return currents become +1).
    """

    bases: tuple[float, ...]
    polarity: tuple[float, ...] = (1.0,) * 6

    def __post_init__(self):
        if len(self.bases) != 6 or len(self.polarity) != 6:
            raise InvalidNormalization("normalization needs exactly 6 entries")
        object.__setattr__(self, "bases", tuple(float(b) for b in self.bases))
        object.__setattr__(self, "polarity", tuple(float(p) for p in self.polarity))
        for name, b in zip(CHANNELS, self.bases):
            if not (math.isfinite(b) and b > 0):
                raise InvalidNormalization(f"base for {name} must be strictly positive, got {b}")
        for name, p in zip(CHANNELS, self.polarity):
            if p not in (1.0, -1.0):
                raise InvalidNormalization(f"polarity for {name} must be +1 or -1, got {p}")

    @property
    def scale(self) -> np.ndarray:
        return np.asarray(self.polarity, dtype=float) / np.asarray(self.bases, dtype=float)

    @classmethod
    def from_prefault(cls, data: np.ndarray, v_base: float = V_POLE_KV) -> "Normalization":
        """Self-normalize from pre-fault samples (rows in channel order, SI kA/kV)."""
        mean = np.asarray(data, dtype=float).mean(axis=0)
        i_base = np.abs(mean[[I_POS, I_NEG]])
        if np.any(i_base <= 0):
            raise InvalidNormalization("pre-fault line current is zero; cannot self-normalize")
        v_sign = [1.0 if mean[VL_POS] >= 0 else -1.0, 1.0 if mean[VL_NEG] >= 0 else -1.0]
        i_sign = [1.0 if mean[I_POS] >= 0 else -1.0, 1.0 if mean[I_NEG] >= 0 else -1.0]
        bases = (float(i_base[0]), float(i_base[1]), v_base, v_base, v_base, v_base)
        polarity = (i_sign[0], i_sign[1], v_sign[0], v_sign[1], v_sign[0], v_sign[1])
        return cls(bases, polarity)

    def to_json(self) -> list[dict]:
        return [
            {"channel": c, "base": b, "polarity": p}
            for c, b, p in zip(CHANNELS, self.bases, self.polarity)
        ]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "Normalization":
        if len(rows) != 6:
            raise InvalidNormalization("normalization needs exactly 6 entries")
        if [r["channel"] for r in rows] != list(CHANNELS):
            raise InvalidNormalization("normalization channels out of order")
        return cls(tuple(float(r["base"]) for r in rows), tuple(float(r["polarity"]) for r in rows))


def to_per_unit(frame, normalization) -> np.ndarray:
    """Per-unit 6-vector of a frame (SensorFrame or raw 6-vector / Nx6 array)."""
    if not isinstance(normalization, Normalization):
        normalization = Normalization(tuple(float(b) for b in normalization))
    x = frame.as_vector() if isinstance(frame, SensorFrame) else np.asarray(frame, dtype=float)
    return x * normalization.scale


@dataclass(frozen=True)
class WaveformRecord:
    """Time-indexed measurements at one relay, channels in ``CHANNELS`` order."""

    spec: ScenarioSpec
    t: np.ndarray
    data: np.ndarray
    label: bool
    arrival_time: Optional[float]
    f_s: float = F_SAMPLE

    def __len__(self):
        return len(self.t)

    @property
    def frames(self) -> Iterator[SensorFrame]:
        for t, row in zip(self.t, self.data):
            yield SensorFrame.from_vector(t, row)

    def frame_index(self, at: float) -> int:
        if not (self.t[0] - 0.5 / self.f_s <= at <= self.t[-1] + 0.5 / self.f_s):
            raise IndexError(f"time {at} outside record span [{self.t[0]}, {self.t[-1]}]")
        return int(np.argmin(np.abs(self.t - at)))

    def prefault_normalization(self) -> Normalization:
        n = max(1, int(round(CALIBRATION_S * self.f_s)))
        return Normalization.from_prefault(self.data[:n])

    def per_unit(self, normalization: Optional[Normalization] = None) -> np.ndarray:
        norm = normalization or self.prefault_normalization()
        return self.data * norm.scale

    def with_data(self, data: np.ndarray) -> "WaveformRecord":
        return replace(self, data=data)

    def __eq__(self, other):
        if not isinstance(other, WaveformRecord):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.label == other.label
            and self.arrival_time == other.arrival_time
            and self.f_s == other.f_s
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def expected_label(spec: ScenarioSpec) -> bool:
    return spec.is_internal


def validate_record(rec: WaveformRecord, tol: float = 1e-9) -> list[str]:
    """List every violated frame/record invariant; empty when well-formed."""
    problems = []
    t = np.asarray(rec.t, dtype=float)
    data = np.asarray(rec.data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 6:
        problems.append(f"expected 6 channels per frame, got shape {data.shape}")
    if data.shape[0] != t.shape[0]:
        problems.append(f"{t.shape[0]} timestamps but {data.shape[0]} frames")
    if t.size and t[0] < 0:
        problems.append(f"negative timestamp {t[0]}")
    if not np.all(np.isfinite(data)):
        problems.append("non-finite channel values")
    if t.size > 1:
        dt = np.diff(t)
        bad = np.flatnonzero(dt <= 0)
        if bad.size:
            problems.append(f"non-monotonic time at frame {bad[0] + 1} (t={t[bad[0] + 1]})")
        off = np.flatnonzero(np.abs(dt - 1.0 / rec.f_s) > tol)
        if off.size:
            problems.append(f"irregular sample spacing at frame {off[0] + 1}")
    if rec.label != expected_label(rec.spec):
        want = "trip" if expected_label(rec.spec) else "no-trip"
        problems.append(f"label inconsistent with fault kind {rec.spec.fault.value}: expected {want}")
    if rec.spec.fault is FaultKind.NONE:
        if rec.arrival_time is not None:
            problems.append("arrival_time set on a fault-free record")
    else:
        if rec.arrival_time is None:
            problems.append("arrival_time missing on a fault record")
        elif rec.arrival_time < rec.spec.t_fault:
            problems.append("arrival_time precedes t_fault")
    return problems


# --- waveform CSV -----------------------------------------------------------


def write_waveform_csv(rec: WaveformRecord, path) -> None:
    Path(path).write_text(waveform_csv_text(rec))


class CsvFormatError(ValueError):
    pass


def read_waveform_csv(path, spec: Optional[ScenarioSpec] = None, label: Optional[bool] = None,
                      arrival_time: Optional[float] = None) -> WaveformRecord:
    raw = Path(path).read_bytes()
    text = raw.decode("ascii")
    lines = text.split("\n")
    header = lines[0].strip().split(",")
    if tuple(header) != CSV_HEADER:
        raise CsvFormatError(f"header mismatch: expected {','.join(CSV_HEADER)}, got {lines[0]!r}")
    if len(lines) > 1 and lines[-1] != "":
        start = len(text) - len(lines[-1])
        raise CsvFormatError(f"truncated frame at byte offset {start} (no terminating newline)")
    rows = []
    offset = len(lines[0]) + 1
    for ln in lines[1:]:
        if ln == "":
            offset += 1
            continue
        parts = ln.split(",")
        if len(parts) != 7:
            raise CsvFormatError(f"truncated or malformed frame at byte offset {offset}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CsvFormatError(f"non-numeric field at byte offset {offset}") from None
        offset += len(ln) + 1
    arr = np.array(rows, dtype=float).reshape(-1, 7)
    spec = spec or ScenarioSpec()
    return WaveformRecord(
        spec=spec,
        t=arr[:, 0].copy(),
        data=arr[:, 1:].copy(),
        label=expected_label(spec) if label is None else label,
        arrival_time=arrival_time,
    )


# --- decisions and the persisted bundle ----------------------------------------


@dataclass(frozen=True)
class Decision:
    t: float
    d: tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.d):
            raise ValueError(f"decisions must be binary, got {self.d}")


@dataclass
class ModelBundle:
    cluster_model: "object"
    weight_table: np.ndarray
    detector_configs: list
    normalization: Normalization
    format_version: int = FORMAT_VERSION
    silhouettes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight_table = np.asarray(self.weight_table, dtype=float)
        if self.weight_table.shape[0] != self.cluster_model.k:
            raise ValueError(
                f"weight table has {self.weight_table.shape[0]} rows for k={self.cluster_model.k}"
            )
        if self.weight_table.shape[1] != len(self.detector_configs):
            raise ValueError("weight table columns must match detector count")

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "centroids": self.cluster_model.centroids.tolist(),
            "weights": [
                {"label": c + 1, "weights": row.tolist()} for c, row in enumerate(self.weight_table)
            ],
            "detectors": [cfg.to_json() for cfg in self.detector_configs],
            "normalization": self.normalization.to_json(),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelBundle":
        from .clustering import ClusterModel
        from .detectors import DetectorConfig

        doc = json.loads(text)
        missing = {"format_version", "centroids", "weights", "detectors", "normalization"} - set(doc)
        if missing:
            raise ValueError(f"model bundle missing keys: {sorted(missing)}")
        if doc["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported bundle format_version {doc['format_version']}")
        rows = sorted(doc["weights"], key=lambda r: r["label"])
        return cls(
            cluster_model=ClusterModel(np.array(doc["centroids"], dtype=float)),
            weight_table=np.array([r["weights"] for r in rows], dtype=float),
            detector_configs=[DetectorConfig.from_json(d) for d in doc["detectors"]],
            normalization=Normalization.from_json(doc["normalization"]),
            format_version=doc["format_version"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls.from_json(Path(path).read_text())

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return (
            self.format_version == other.format_version
            and np.array_equal(self.cluster_model.centroids, other.cluster_model.centroids)
            and np.array_equal(self.weight_table, other.weight_table)
            and self.detector_configs == other.detector_configs
            and self.normalization == other.normalization
        )


def waveform_csv_text(rec: WaveformRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t, row in zip(rec.t, rec.data):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return buf.getvalue()
