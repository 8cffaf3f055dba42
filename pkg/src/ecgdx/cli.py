"""Command-line front end: ``ecgdx synth|train|eval|explain``.

Exit codes: 0 success, 2 configuration or schema error, 3 I/O error,
4 single-class labels. Outputs are staged in memory and written via
temp-file-and-rename only after a command has fully succeeded.

Every run writes a JSON manifest. Input digests are BLAKE2b with an 8-byte
(64-bit) digest over the raw file bytes, recorded as hex.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import DEFAULT_MAX_DOTS, beeswarm_csv, beeswarm_svg, global_importance, sample_rows, shap_values
from .boosting import BoostedModel, TrainConfig, train
from .cohort import FoldAssignment, cohort_to_csv, load_cohort, make_folds, normalize_target
from .errors import EcgdxError, SingleClass
from .metrics import DEFAULT_N_BOOTSTRAP, evaluate, reports_to_csv
from .registry import load_spec, resolve_spec_path
from .synth import synth_cohort

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SINGLE_CLASS = 0, 2, 3, 4
HASH_ALGORITHM = "blake2b-64"


class ConfigError(EcgdxError):
    pass


def file_digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class StagedOutputs:
    """Collect output files and publish them together."""

    def __init__(self):
        self.files: dict[Path, str] = {}

    def add(self, path, text: str) -> Path:
        path = Path(path)
        self.files[path] = text
        return path

    def commit(self) -> None:
        temps = []
        try:
            for path, text in self.files.items():
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
                tmp.write_text(text, encoding="utf-8")
                temps.append((tmp, path))
            for tmp, path in temps:
                os.replace(tmp, path)
        finally:
            for tmp, _ in temps:
                if tmp.exists():
                    tmp.unlink()


def _manifest(args, started: float, inputs: dict, outputs: list, config: dict) -> str:
    data = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else list(args.argv),
        "tool_version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "config": config,
        "hash_algorithm": HASH_ALGORITHM,
        "inputs": {str(p): {"digest": file_digest(p), "bytes": os.path.getsize(p)} for p in inputs.values()},
        "input_roles": {role: str(p) for role, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(timespec="seconds"),
        "duration_s": round(time.time() - started, 3),
    }
    return json.dumps(data, indent=2) + "\n"


def _sidecar_manifest(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _read_json(path, what: str):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{what} {path}: invalid JSON ({exc})") from None


def _load_model(path) -> BoostedModel:
    return BoostedModel.from_dict(_read_json(path, "model"))


def _load_folds(args, n_rows: int) -> FoldAssignment:
    path = Path(args.folds) if args.folds else Path(args.model).with_name("folds.csv")
    if not path.exists():
        raise ConfigError(f"split 'test' needs a fold file; {path} not found (pass --folds)")
    folds = FoldAssignment.from_csv(path.read_text(encoding="utf-8"))
    if len(folds.fold_of_row) != n_rows:
        raise ConfigError(f"fold file {path} covers {len(folds.fold_of_row)} rows, cohort has {n_rows}")
    args._folds_path = path
    return folds


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    spec_path = resolve_spec_path(args.spec)
    spec = load_spec(spec_path)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    cohort = synth_cohort(spec, args.n, args.seed)
    out = Path(args.out)
    staged = StagedOutputs()
    staged.add(out, cohort_to_csv(cohort))
    manifest = _sidecar_manifest(out)
    staged.add(manifest, _manifest(args, started, {"spec": spec_path}, [out, manifest], {"n": args.n}))
    staged.commit()
    print(f"wrote {args.n} rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    inputs = {"cohort": Path(args.cohort)}
    config_data = {}
    if args.config:
        inputs["config"] = Path(args.config)
        config_data = _read_json(args.config, "config")
    if not isinstance(config_data, dict):
        raise ConfigError("config: top level must be a JSON object")
    config_data = {**config_data, "seed": args.seed}
    config = TrainConfig.from_dict(config_data)

    cohort = load_cohort(args.cohort)
    target = normalize_target(args.target)
    cohort.label(target)
    folds = make_folds(cohort, target, args.seed)
    model = train(cohort.subset(folds.train_rows), cohort.subset(folds.val_rows), target, config,
                  n_threads=args.threads)

    out_dir = Path(args.out)
    staged = StagedOutputs()
    paths = [
        staged.add(out_dir / "model.json", model.to_json()),
        staged.add(out_dir / "folds.csv", folds.to_csv()),
        staged.add(out_dir / "history.json", json.dumps(model.history, indent=2) + "\n"),
    ]
    manifest = out_dir / "manifest.json"
    staged.add(manifest, _manifest(args, started, inputs, paths + [manifest],
                                   {"target": target, "train": config.to_dict()}))
    staged.commit()
    print(f"trained {target}: best_iteration={model.best_iteration} "
          f"(grew {model.history['rounds_grown']} rounds) -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    cohort = load_cohort(args.cohort)
    model.check_schema(cohort.schema)
    inputs = {"model": Path(args.model), "cohort": Path(args.cohort)}
    if args.split == "test":
        folds = _load_folds(args, cohort.n_rows)
        inputs["folds"] = args._folds_path
        cohort = cohort.subset(folds.test_rows)
    report = evaluate(model, cohort, model.target_code, args.n_bootstrap, args.seed, n_threads=args.threads)

    out = Path(args.out)
    text = reports_to_csv([report]) if out.suffix.lower() == ".csv" else report.to_json()
    staged = StagedOutputs()
    staged.add(out, text)
    manifest = _sidecar_manifest(out)
    staged.add(manifest, _manifest(args, started, inputs, [out, manifest],
                                   {"split": args.split, "n_bootstrap": args.n_bootstrap}))
    staged.commit()
    print(f"{report.target_code}: AUROC {report.auroc:.4f} ({report.ci_low:.4f}, {report.ci_high:.4f}) "
          f"[prev {100 * report.prevalence:.2f}%, n={report.n_test}]")
    return EXIT_OK


def cmd_explain(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    cohort = load_cohort(args.cohort)
    model.check_schema(cohort.schema)
    inputs = {"model": Path(args.model), "cohort": Path(args.cohort)}
    if args.max_dots < 1:
        raise ConfigError("--max-dots must be >= 1")
    if args.split == "test":
        folds = _load_folds(args, cohort.n_rows)
        inputs["folds"] = args._folds_path
        rows = folds.test_rows
    else:
        rows = np.arange(cohort.n_rows)
    rows = rows[sample_rows(len(rows), args.max_dots, args.seed)]
    attr = shap_values(model, cohort.features[rows], n_threads=args.threads)
    attr.row_index = rows

    out_dir = Path(args.out)
    staged = StagedOutputs()
    paths = [
        staged.add(out_dir / "beeswarm.csv", beeswarm_csv(attr)),
        staged.add(out_dir / "beeswarm.svg", beeswarm_svg(attr, args.seed, title=model.target_code)),
    ]
    if args.attributions:
        paths.append(staged.add(out_dir / "attributions.csv", attr.to_csv()))
    manifest = out_dir / "manifest.json"
    ranking = global_importance(attr)
    staged.add(manifest, _manifest(args, started, inputs, paths + [manifest],
                                   {"split": args.split, "max_dots": args.max_dots, "n_rows": len(rows),
                                    "importance": ranking}))
    staged.commit()
    top = ", ".join(f"{name} ({v:.3f})" for name, v in ranking[:3])
    print(f"explained {len(rows)} rows; top features: {top}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgdx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=_seed, default=0, help="seed for every random choice (default 0)")
    shared.add_argument("--threads", type=_positive, default=1, help="worker threads (default 1)")
    shared.add_argument("--out", required=True, help="output path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic cohort CSV")
    p.add_argument("--spec", required=True, help="cohort spec JSON, or a bundled name (mimic_like, ecgview_like)")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[shared], help="fit one per-target model with early stopping")
    p.add_argument("--cohort", required=True)
    p.add_argument("--target", required=True, help="diagnosis code, with or without the dx_ prefix")
    p.add_argument("--config", help="JSON with TrainConfig fields")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="AUROC with bootstrap CI")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test",
                   help="'test' = held-out fold of the training cohort; 'all' = every row (external cohort)")
    p.add_argument("--folds", help="fold CSV (default: folds.csv next to the model)")
    p.add_argument("--n-bootstrap", type=_positive, default=DEFAULT_N_BOOTSTRAP)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[shared], help="Shapley beeswarm CSV and SVG")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--folds")
    p.add_argument("--max-dots", type=int, default=DEFAULT_MAX_DOTS, help="rows drawn in the figure")
    p.add_argument("--attributions", action="store_true", help="also write the full attribution matrix")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except SingleClass as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGLE_CLASS
    except (EcgdxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
