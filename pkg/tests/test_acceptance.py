"""Acceptance suite: one test per headline criterion.

Each test logs a PASS/FAIL line through the ``record`` fixture before
asserting, so the terminal summary lists every criterion even on failure.
Seeds are fixed in advance (the CLI defaults for the internal run, the next
integer for the external cohort) and never tuned.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import make_spec, planted, random_cohort
from test_attribution import random_model, random_rows
from ecgdx.attribution import global_importance, shap_brute, shap_values
from ecgdx.boosting import BoostedModel, Leaf, TrainConfig, grow_tree, train
from ecgdx.cli import main
from ecgdx.cohort import FoldAssignment, load_cohort
from ecgdx.metrics import auroc, auroc_pairwise, bootstrap_ci
from ecgdx.registry import load_spec
from ecgdx.synth import bayes_auroc, logistic_shift_auroc, synth_cohort

TARGET = "C34"
N_ROWS = 50_000
INTERNAL_SEED, EXTERNAL_SEED = 0, 1
PLANTED = {"age_years", "qt_interval_ms", "rr_interval_ms"}


def run_pipeline(d, threads):
    """synth -> train -> eval (internal, external) -> explain through the CLI."""
    cohort, external = d / "internal.csv", d / "external.csv"
    common = ["--threads", str(threads)]
    t0 = time.perf_counter()
    assert main(["synth", "--spec", "mimic_like", "--n", str(N_ROWS), "--seed", str(INTERNAL_SEED),
                 "--out", str(cohort), *common]) == 0
    assert main(["train", "--cohort", str(cohort), "--target", TARGET, "--seed", str(INTERNAL_SEED),
                 "--out", str(d / "model"), *common]) == 0
    model = d / "model" / "model.json"
    assert main(["eval", "--model", str(model), "--cohort", str(cohort), "--split", "test",
                 "--seed", str(INTERNAL_SEED), "--out", str(d / "internal.json"), *common]) == 0
    internal_s = time.perf_counter() - t0
    assert main(["synth", "--spec", "ecgview_like", "--n", str(N_ROWS), "--seed", str(EXTERNAL_SEED),
                 "--out", str(external), *common]) == 0
    assert main(["eval", "--model", str(model), "--cohort", str(external), "--split", "all",
                 "--seed", str(INTERNAL_SEED), "--out", str(d / "external.json"), *common]) == 0
    assert main(["explain", "--model", str(model), "--cohort", str(cohort), "--split", "test",
                 "--seed", str(INTERNAL_SEED), "--out", str(d / "explain"), *common]) == 0
    return internal_s


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipeline")
    seconds = run_pipeline(d, threads=1)
    return d, seconds


def _report(d, name):
    return json.loads((d / f"{name}.json").read_text())


# -- 1 ---------------------------------------------------------------------------

def test_auroc_oracle(record):
    rng = np.random.default_rng(2024)
    instances = []
    for k in range(200):
        n = int(rng.integers(2, 51))
        # half the instances draw from a small grid to force ties
        s = rng.integers(0, 6, n) / 4 if k % 2 else rng.normal(size=n)
        y = np.zeros(n, dtype=int)
        y[rng.permutation(n)[: int(rng.integers(1, n))]] = 1
        instances.append((s, y))
    t0 = time.perf_counter()
    equal = sum(auroc(s, y) == auroc_pairwise(s, y) for s, y in instances)
    elapsed = time.perf_counter() - t0
    ok = record("AUROC oracle", equal == 200 and elapsed < 1.0,
                f"{equal}/200 bitwise equal in {elapsed:.3f} s (limit 1 s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------

def test_shapley_oracle(record, pipeline):
    d, _ = pipeline
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        model = random_model(rng, max_trees=5, max_depth=3, n_features=6)
        X = random_rows(rng, 10)
        attr = shap_values(model, X)
        for i, row in enumerate(X):
            base, phi = shap_brute(model, row)
            worst = max(worst, abs(base - attr.base_value), float(np.abs(phi - attr.phi[i]).max()))
    full = BoostedModel.from_json((d / "model" / "model.json").read_text())
    cohort = load_cohort(d / "internal.csv")
    rows = np.random.default_rng(78).choice(cohort.n_rows, 1000, replace=False)
    X = cohort.features[rows]
    attr = shap_values(full, X)
    local = float(np.abs(attr.base_value + attr.phi.sum(axis=1) - full.margins(X)).max())
    elapsed = time.perf_counter() - t0
    ok = record("Shapley oracle", worst <= 1e-9 and local <= 1e-9 and elapsed < 30,
                f"max |row - brute| {worst:.2e}, local accuracy {local:.2e} on 1000 rows of a "
                f"{len(full.trees)}-tree model, {elapsed:.1f} s (limits 1e-9, 1e-9, 30 s)")
    assert ok


# -- 3 ---------------------------------------------------------------------------

def _leaves_with_rows(tree, X, rows):
    if isinstance(tree, Leaf):
        return [(tree, rows)]
    x = X[rows, tree.feature_index]
    left = np.where(np.isnan(x), tree.default_left, x < tree.threshold)
    return _leaves_with_rows(tree.left, X, rows[left]) + _leaves_with_rows(tree.right, X, rows[~left])


def test_leaf_weight_stationarity(record):
    rng = np.random.default_rng(31)
    nodes = []
    while len(nodes) < 50:
        c = random_cohort(rng, 400, p_missing=0.1)
        y = c.label("A").astype(float)
        p = rng.uniform(0.05, 0.95, c.n_rows)
        g, h = p - y, p * (1 - p)
        cfg = TrainConfig(max_depth=3, learning_rate=1.0, lambda_l2=float(rng.uniform(0, 3)), min_child_weight=0.5)
        tree = grow_tree(g, h, c.features, cfg)
        for leaf, rows in _leaves_with_rows(tree, c.features, np.arange(c.n_rows)):
            nodes.append((leaf.weight, g[rows].sum(), h[rows].sum(), cfg.lambda_l2))
    nodes = nodes[:50]
    good = 0
    for w, G, H, lam in nodes:
        obj = lambda v: G * v + 0.5 * (H + lam) * v * v  # noqa: E731
        closed = math.isclose(w, -G / (H + lam), rel_tol=1e-12, abs_tol=1e-15)
        good += closed and obj(w + 1e-4) > obj(w) and obj(w - 1e-4) > obj(w)
    ok = record("Leaf-weight stationarity", good == 50, f"{good}/50 nodes are strict minima under +-1e-4")
    assert ok


# -- 4 ---------------------------------------------------------------------------

def test_signal_recovery(record, pipeline):
    d, seconds = pipeline
    internal = _report(d, "internal")["auroc"]
    oracle = bayes_auroc(load_spec("mimic_like"), TARGET)
    gap = internal - oracle
    ok = record("End-to-end signal recovery",
                abs(gap) <= 0.05 and internal >= 0.70 and seconds < 120,
                f"internal test AUROC {internal:.4f} vs Bayes {oracle:.4f} (gap {gap:+.4f}, limit 0.05; "
                f"floor 0.70); synth+train+eval {seconds:.1f} s (limit 120 s)")
    assert ok


# -- 5 ---------------------------------------------------------------------------

def test_external_shift(record, pipeline):
    d, _ = pipeline
    internal = _report(d, "internal")["auroc"]
    ext = _report(d, "external")
    ok = record("External-shift experiment", 0.65 <= ext["auroc"] < internal,
                f"external AUROC {ext['auroc']:.4f} (CI {ext['ci_low']:.4f}-{ext['ci_high']:.4f}, "
                f"n={ext['n_test']}) vs internal {internal:.4f}; need 0.65 <= external < internal")
    assert ok


# -- 6 ---------------------------------------------------------------------------

def test_early_stopping_trace(record):
    peak = 15
    trace = [0.6 + 0.01 * k for k in range(peak)] + [0.6 + 0.01 * (peak - 1)] * 40
    calls = iter(trace)
    c = random_cohort(np.random.default_rng(6), 300)
    model = train(c, c, "A", TrainConfig(patience=10), metric=lambda m, y: next(calls))
    grown = model.history["rounds_grown"]
    ok = record("Early stopping",
                model.best_iteration == peak and len(model.trees) == peak and grown == peak + 10,
                f"peak at round {peak}: stopped after {grown} rounds, best_iteration "
                f"{model.best_iteration}, {len(model.trees)} trees kept")
    assert ok


# -- 7 ---------------------------------------------------------------------------

def test_bootstrap_behaviour(record):
    # planted shift on one feature so that the feature itself scores at AUROC 0.8
    shift = brentq(lambda x: logistic_shift_auroc(x) - 0.8, 0.0, 10.0)
    effect = shift / (2 * math.log(3))
    spec = make_spec({"A": planted(0.3, ("qt_interval_ms", 1, effect))})
    truth = logistic_shift_auroc(shift)

    def sample(seed):
        c = synth_cohort(spec, 2000, seed)
        return c.column("qt_interval_ms"), c.label("A")

    s, y = sample(0)
    runs = [bootstrap_ci(s, y, 1000, seed=5, n_threads=t) for t in (1, 1, 2, 4)]
    same = all(r == runs[0] for r in runs)
    width = runs[0][1] - runs[0][0]
    covered = 0
    for rep in range(200):
        s, y = sample(1000 + rep)
        lo, hi = bootstrap_ci(s, y, 1000, seed=rep)
        covered += lo <= truth <= hi
    ok = record("Bootstrap behaviour", same and width < 0.06 and covered >= 186,
                f"identical CI over runs and 1/2/4 threads: {same}; width {width:.4f} at n=2000, "
                f"AUROC {auroc(*sample(0)):.3f} (limit 0.06); coverage of {truth:.3f} "
                f"{covered}/200 = {covered / 2:.1f}% (floor 93%)")
    assert ok


# -- 8 ---------------------------------------------------------------------------

def test_explainability_sanity(record, pipeline):
    d, _ = pipeline
    manifest = json.loads((d / "explain" / "manifest.json").read_text())
    ranking = manifest["config"]["importance"]
    top3 = [name for name, _ in ranking[:3]]
    first_in_csv = (d / "explain" / "beeswarm.csv").read_text().splitlines()[1].split(",")[0]
    ok = record("Explainability sanity", set(top3) == PLANTED and first_in_csv == top3[0],
                f"top 3 by mean |phi|: {', '.join(top3)}; planted: {', '.join(sorted(PLANTED))}")
    assert ok


# -- 9 ---------------------------------------------------------------------------

def test_pipeline_determinism(record, pipeline, tmp_path):
    d, _ = pipeline
    run_pipeline(tmp_path, threads=3)
    files = ["internal.csv", "external.csv", "model/model.json", "model/folds.csv", "internal.json",
             "external.json", "explain/beeswarm.csv", "explain/beeswarm.svg"]
    differ = [f for f in files if (d / f).read_bytes() != (tmp_path / f).read_bytes()]
    folds = FoldAssignment.from_csv((d / "model" / "folds.csv").read_text())
    ok = record("Determinism", not differ and len(folds.test_rows) > 0,
                f"{len(files) - len(differ)}/{len(files)} artifacts byte-identical across reruns "
                f"(1 vs 3 threads)" + (f"; differ: {', '.join(differ)}" if differ else ""))
    assert ok
