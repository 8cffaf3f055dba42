"""
Batch run over the target registry
==================================

One CLI invocation per step and code: synthesize both cohorts once, then for
every registry code train on the internal cohort, evaluate on its test fold
and on the whole external cohort, and write a table next to the published
numbers.

    python demos/run_registry.py --n 50000 --out registry_run
    python demos/run_registry.py --codes C34 C61 --n 20000 --out quick
"""
import argparse
import csv
import json
from pathlib import Path

from ecgdx.cli import EXIT_OK, EXIT_SINGLE_CLASS, main
from ecgdx.registry import load_targets

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--n", type=int, default=50_000, help="rows per synthetic cohort")
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--threads", type=int, default=1)
parser.add_argument("--codes", nargs="*", help="subset of registry codes (default: all)")
parser.add_argument("--out", default="registry_run")
args = parser.parse_args()

out = Path(args.out)
common = ["--seed", str(args.seed), "--threads", str(args.threads)]
internal, external = out / "internal.csv", out / "external.csv"
for spec, path in (("mimic_like", internal), ("ecgview_like", external)):
    if main(["synth", "--spec", spec, "--n", str(args.n), "--out", str(path), *common]) != EXIT_OK:
        raise SystemExit(f"synth {spec} failed")

entries = [e for e in load_targets() if not args.codes or e.code in args.codes]
rows = []
for entry in entries:
    run = out / entry.code
    code = main(["train", "--cohort", str(internal), "--target", entry.code, "--out", str(run), *common])
    if code == EXIT_SINGLE_CLASS:
        # rare codes can leave the validation fold without positives at small n
        print(f"{entry.code}: skipped, a split has a single class at n={args.n}")
        continue
    if code != EXIT_OK:
        raise SystemExit(f"train {entry.code} failed with exit code {code}")
    model = str(run / "model.json")
    results = {}
    for name, cohort, split in (("internal", internal, "test"), ("external", external, "all")):
        report = run / f"{name}.json"
        code = main(["eval", "--model", model, "--cohort", str(cohort), "--split", split,
                     "--out", str(report), *common])
        results[name] = json.loads(report.read_text()) if code == EXIT_OK else None
    rows.append((entry, results))

table = out / "registry_results.csv"
with open(table, "w", newline="") as fh:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["code", "description", "cohort", "auroc", "ci_low", "ci_high", "prevalence", "n_test",
                     "published_auroc", "published_prevalence"])
    for entry, results in rows:
        for name in ("internal", "external"):
            r, pub = results[name], getattr(entry, name)
            cells = ["", "", "", "", ""] if r is None else [
                f"{r['auroc']:.4f}", f"{r['ci_low']:.4f}", f"{r['ci_high']:.4f}", f"{r['prevalence']:.5f}", r["n_test"]]
            writer.writerow([entry.code, entry.description, name, *cells, pub["auroc"], pub["prevalence"]])
print(table.read_text())
