"""On-disk corpus layout: one waveform CSV per scenario plus two manifests.

``manifest.csv`` is the human-facing table; ``scenarios.json`` keeps the full
ScenarioSpec of every record so a corpus can be reloaded losslessly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .core import ScenarioSpec, WaveformRecord, read_waveform_csv, waveform_csv_text

MANIFEST = "manifest.csv"
SCENARIOS = "scenarios.json"
MANIFEST_HEADER = ("id", "line", "kind", "location_km", "impedance_ohm", "label", "arrival_time")


class CorpusFormatError(ValueError):
    pass


def manifest_csv(records: Sequence[WaveformRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for r in records:
        s = r.spec
        w.writerow([s.scenario_id, s.line, s.fault.value, repr(s.location_km), repr(s.impedance_ohm),
                    int(r.label), "" if r.arrival_time is None else repr(r.arrival_time)])
    return buf.getvalue()


def write_corpus(records: Sequence[WaveformRecord], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    ids = [r.spec.scenario_id for r in records]
    if len(set(ids)) != len(ids):
        raise CorpusFormatError("scenario ids are not unique")
    for r in records:
        p = out / f"{r.spec.scenario_id}.csv"
        p.write_text(waveform_csv_text(r))
        written.append(p)
    (out / MANIFEST).write_text(manifest_csv(records))
    doc = [{"id": r.spec.scenario_id, "spec": r.spec.to_dict(), "label": bool(r.label),
            "arrival_time": r.arrival_time} for r in records]
    (out / SCENARIOS).write_text(json.dumps(doc, indent=1) + "\n")
    return written + [out / MANIFEST, out / SCENARIOS]


def read_corpus(corpus_dir) -> list[WaveformRecord]:
    root = Path(corpus_dir)
    index = root / SCENARIOS
    if not index.is_file():
        raise CorpusFormatError(f"{root} has no {SCENARIOS}")
    try:
        doc = json.loads(index.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{index}: line {exc.lineno}: {exc.msg}") from None
    records = []
    for entry in doc:
        spec = ScenarioSpec.from_dict(entry["spec"])
        records.append(read_waveform_csv(root / f"{entry['id']}.csv", spec=spec, label=bool(entry["label"]),
                                         arrival_time=entry["arrival_time"]))
    return records
