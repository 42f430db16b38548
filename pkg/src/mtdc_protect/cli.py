"""Command-line front end: simulate, corpus, train, detect, evaluate.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 degenerate data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .clustering import ClusterConfigError, DegenerateData, pca_plot_csv, training_features
from .core import CsvFormatError, InvalidNormalization, ModelBundle, ScenarioError, ScenarioSpec, read_waveform_csv
from .corpus_io import CorpusFormatError, read_corpus, write_corpus
from .evaluation import MetricError, evaluate_records, inject_noise, report_csv, roc_csv, roc_curve, subjects, summarize
from .gridsim.network import NumericalDivergence
from .gridsim.scenario import CorpusRecipe, gen_corpus, run_scenario
from .gridsim.topology import ConfigurationError, GridTopology
from .learner import ContractError, DegenerateCorpus, Relay, breaker_id, relay_step, train_bundle, trip_log_csv
from .recipes import RECIPES

log = logging.getLogger("mtdc_protect")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_DEGENERATE = 4

MANIFEST_NAME = "run_manifest.json"


class InvalidInput(ValueError):
    pass


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: str
    seed: Optional[int]
    out: str
    version: str
    input_hash: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST_NAME
        path.write_text(self.to_json())
        return path


def content_hash(paths: Sequence[Path]) -> str:
    """SHA-256 over file contents; directories contribute their files in name order."""
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name == MANIFEST_NAME:
                continue
            h.update(f.name.encode())
            h.update(b"\0")
            h.update(f.read_bytes())
    return h.hexdigest()


def _load_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, command: str, inputs: Sequence[Path], config: str = "") -> RunManifest:
    return RunManifest(command, config, getattr(args, "seed", None), str(args.out), __version__,
                       content_hash(inputs))


# --- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg_path = Path(args.config)
    doc = _load_json(cfg_path)
    if not isinstance(doc, dict):
        raise InvalidInput(f"{cfg_path}: top level must be an object of scenario fields")
    try:
        spec = ScenarioSpec.from_dict(doc)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        spec.validate(GridTopology().line_lengths)
    except (ScenarioError, TypeError) as exc:
        raise InvalidInput(f"{cfg_path}: {exc}") from None
    rec = run_scenario(spec)
    out = _out_dir(args)
    write_corpus([rec], out)
    _manifest(args, "simulate", [cfg_path], str(cfg_path)).write(out)
    print(f"{spec.scenario_id}: {len(rec)} frames")
    return EXIT_OK


def _recipe(arg: str, seed: Optional[int]) -> tuple[CorpusRecipe, Optional[Path]]:
    if arg in RECIPES:
        recipe, path = RECIPES[arg](), None
    else:
        path = Path(arg)
        doc = _load_json(path)
        if not isinstance(doc, dict):
            raise InvalidInput(f"{path}: top level must be an object of recipe fields")
        try:
            recipe = CorpusRecipe.from_json(doc)
        except (ConfigurationError, TypeError) as exc:
            raise InvalidInput(f"{path}: {exc}") from None
    if seed is not None:
        recipe = replace(recipe, seed=seed)
    return recipe, path


def cmd_corpus(args) -> int:
    recipe, path = _recipe(args.recipe, args.seed)
    try:
        recipe.specs()
    except (ConfigurationError, ScenarioError) as exc:
        raise InvalidInput(str(exc)) from None
    records = gen_corpus(recipe, workers=args.workers)
    out = _out_dir(args)
    write_corpus(records, out)
    (out / "recipe.json").write_text(json.dumps(recipe.to_json(), indent=2, sort_keys=True) + "\n")
    _manifest(args, "corpus", [out / "recipe.json"], args.recipe).write(out)
    n_pos = sum(r.label for r in records)
    print(f"{len(records)} records ({n_pos} trip, {len(records) - n_pos} no-trip) -> {out}")
    return EXIT_OK


def _read_corpus(path: str):
    try:
        return read_corpus(path)
    except (CorpusFormatError, CsvFormatError, ScenarioError, OSError, KeyError) as exc:
        raise InvalidInput(f"corpus {path}: {exc}") from None


def cmd_train(args) -> int:
    records = _read_corpus(args.corpus)
    bundle = train_bundle(records, k=args.k, restarts=args.restarts, seed=args.seed)
    out = _out_dir(args)
    bundle.save(out / "bundle.json")
    X = training_features(records)
    (out / "pca.csv").write_text(pca_plot_csv(X, bundle.cluster_model.assign_many(X)))
    _manifest(args, "train", [Path(args.corpus)], args.corpus).write(out)
    for k, s in sorted(bundle.silhouettes.items()):
        print(f"silhouette k={k}: {s:.4f}")
    for c, row in enumerate(bundle.weight_table, start=1):
        print(f"cluster {c} weights: " + " ".join(f"{w:.3f}" for w in row))
    return EXIT_OK


def _load_bundle(path: str) -> ModelBundle:
    try:
        return ModelBundle.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidInput(f"bundle {path}: {exc}") from None


def cmd_detect(args) -> int:
    bundle = _load_bundle(args.bundle)
    try:
        rec = read_waveform_csv(args.waveform)
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidInput(f"{args.waveform}: {exc}") from None
    breaker = args.breaker or breaker_id(args.line, int(args.line[-2]))
    relay = Relay(bundle, breaker, rec.f_s)
    trips = []
    for frame in rec.frames:
        cmd = relay_step(relay, frame)
        if cmd is not None:
            trips.append(cmd)
    cmd = relay.finish()
    if cmd is not None:
        trips.append(cmd)
    out = _out_dir(args)
    (out / "trip_log.csv").write_text(trip_log_csv(trips))
    _manifest(args, "detect", [Path(args.bundle), Path(args.waveform)], args.waveform).write(out)
    print(f"{len(trips)} trip(s)" + (f", first at t={trips[0].t!r} s on {trips[0].breaker}" if trips else ""))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle = _load_bundle(args.bundle)
    records = _read_corpus(args.corpus)
    if args.noise:
        records = [inject_noise(r, args.noise, args.seed * 2**32 + r.spec.seed) for r in records]
    out = _out_dir(args)
    rows = summarize(evaluate_records(bundle, records))
    (out / "report.csv").write_text(report_csv(rows))
    aucs = {}
    for name, subject in subjects(bundle).items():
        points, auc = roc_curve(records, subject)
        (out / f"roc_{name}.csv").write_text(roc_csv(points))
        aucs[name] = auc
    _manifest(args, "evaluate", [Path(args.bundle), Path(args.corpus)], args.corpus).write(out)
    for name, value in rows:
        print(f"{name}: {value:g}")
    for name, auc in aucs.items():
        print(f"AUC {name}: {auc:.4f}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtdc-protect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario and write its waveform CSV")
    s.add_argument("config", help="scenario JSON (ScenarioSpec fields)")
    s.add_argument("--out", default="out/simulate")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("corpus", help="generate a labelled corpus directory")
    s.add_argument("recipe", help=f"recipe JSON or a built-in name ({', '.join(RECIPES)})")
    s.add_argument("--out", default="out/corpus")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_corpus)

    s = sub.add_parser("train", help="fit clusters and detector weights")
    s.add_argument("corpus", help="corpus directory")
    s.add_argument("--out", default="out/train")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=int, help="fix k instead of silhouette selection")
    s.add_argument("--restarts", type=int, default=32)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="stream a waveform CSV through the relay")
    s.add_argument("bundle")
    s.add_argument("waveform")
    s.add_argument("--out", default="out/detect")
    s.add_argument("--line", default="Line13", help="monitored line (breaker naming)")
    s.add_argument("--breaker", help="override the breaker id in the trip log")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="report and ROC curves on a corpus")
    s.add_argument("bundle")
    s.add_argument("corpus")
    s.add_argument("--out", default="out/evaluate")
    s.add_argument("--noise", type=float, default=0.0, help="add Gaussian noise of this sigma (p.u.)")
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, CsvFormatError, ContractError, InvalidNormalization) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalDivergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DegenerateCorpus, DegenerateData, ClusterConfigError, MetricError) as exc:
        print(f"degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ScenarioError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
