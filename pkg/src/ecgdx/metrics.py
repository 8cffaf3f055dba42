"""AUROC and percentile-bootstrap confidence intervals."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, ResampleExhausted, SingleClass

DEFAULT_N_BOOTSTRAP = 1000
REPORT_COLUMNS = ("target_code", "auroc", "ci_low", "ci_high", "prevalence", "n_test")


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"scores {s.shape} and labels {y.shape} differ")
    y = y.astype(bool)
    n_pos = int(np.count_nonzero(y))
    if n_pos == 0 or n_pos == len(y):
        raise SingleClass("AUROC needs at least one positive and one negative")
    return s, y, n_pos


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC from average ranks; tied pairs count one half."""
    s, y, n_pos = _check(scores, labels)
    n_neg = len(y) - n_pos
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_pairwise(scores, labels) -> float:
    """O(n^2) reference: count wins and ties over every positive/negative pair."""
    s, y, n_pos = _check(scores, labels)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (n_pos * len(neg)))


def _tie_groups(s: np.ndarray) -> np.ndarray:
    """Dense rank of each score: equal scores share a group, groups ascend with score."""
    _, inverse = np.unique(s, return_inverse=True)
    return inverse.ravel()


def _auroc_resampled(groups: np.ndarray, n_groups: int, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """AUROC of each row of resample indices ``idx`` (shape ``B x n``).

    Counts positives and negatives per tie group; a positive beats every
    negative in lower groups and ties half of those in its own group.
    """
    B = idx.shape[0]
    cell = groups[idx] * 2 + y[idx]
    flat = cell + (np.arange(B) * 2 * n_groups)[:, None]
    counts = np.bincount(flat.ravel(), minlength=B * 2 * n_groups).reshape(B, n_groups, 2)
    neg, pos = counts[:, :, 0], counts[:, :, 1]
    neg_below = np.cumsum(neg, axis=1) - neg
    wins = (pos * (2 * neg_below + neg)).sum(axis=1) / 2.0
    return wins / (pos.sum(axis=1) * neg.sum(axis=1))


def _resample_indices(n, y, seed, iteration, max_attempts):
    """Indices for one bootstrap replicate; redraws single-class samples."""
    rng = np.random.default_rng([seed, iteration])
    for attempt in range(1, max_attempts + 1):
        idx = rng.integers(0, n, n)
        k = np.count_nonzero(y[idx])
        if 0 < k < n:
            return idx, attempt
    return None, max_attempts


def bootstrap_aurocs(scores, labels, n_bootstrap: int = DEFAULT_N_BOOTSTRAP, seed: int = 0,
                     n_threads: int = 1, chunk: int = 64, max_draws: int | None = None) -> np.ndarray:
    """AUROC of each bootstrap replicate.

    Replicate ``i`` draws from its own generator seeded by ``(seed, i)``, so
    the result does not depend on ``n_threads``. Single-class resamples are
    redrawn; at most ``max_draws`` (default ``100 * n_bootstrap``) draws are
    made in total.
    """
    s, y, _ = _check(scores, labels)
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be >= 1")
    n = len(s)
    budget = 100 * n_bootstrap if max_draws is None else max_draws
    groups = _tie_groups(s)
    n_groups = int(groups.max()) + 1
    y_int = y.astype(np.int64)

    def run(start):
        stop = min(start + chunk, n_bootstrap)
        rows, used = [], 0
        for i in range(start, stop):
            idx, attempts = _resample_indices(n, y, seed, i, budget)
            used += attempts
            if idx is None:
                return None, used
            rows.append(idx)
        idx = np.stack(rows)
        return _auroc_resampled(groups, n_groups, y_int, idx), used

    starts = range(0, n_bootstrap, chunk)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(st) for st in starts]
    total = sum(used for _, used in results)
    if any(r is None for r, _ in results) or total > budget:
        raise ResampleExhausted(f"needed more than {budget} draws to get {n_bootstrap} two-class resamples")
    return np.concatenate([r for r, _ in results])


def bootstrap_ci(scores, labels, n_bootstrap: int = DEFAULT_N_BOOTSTRAP, alpha: float = 0.05,
                 seed: int = 0, n_threads: int = 1) -> tuple[float, float]:
    """Percentile interval of bootstrap AUROCs (linear-interpolation quantiles)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    stats = bootstrap_aurocs(scores, labels, n_bootstrap, seed, n_threads)
    low, high = np.quantile(stats, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return float(low), float(high)


@dataclass(frozen=True)
class EvalReport:
    target_code: str
    auroc: float
    ci_low: float
    ci_high: float
    n_test: int
    prevalence: float
    n_bootstrap: int
    seed: int
    alpha: float = 0.05
    source_tag: str = ""

    def __post_init__(self):
        if not (0.0 <= self.ci_low <= self.ci_high <= 1.0):
            raise ValueError(f"invalid interval ({self.ci_low}, {self.ci_high})")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)


def reports_to_csv(reports) -> str:
    """One row per report, laid out like a per-code results table."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow([r.target_code, repr(r.auroc), repr(r.ci_low), repr(r.ci_high),
                         repr(r.prevalence), r.n_test])
    return out.getvalue()


def evaluate(model, test_set, target: str | None = None, n_bootstrap: int = DEFAULT_N_BOOTSTRAP,
             seed: int = 0, alpha: float = 0.05, n_threads: int = 1) -> EvalReport:
    """Score ``test_set`` with ``model`` and report AUROC with a bootstrap CI."""
    target = target if target is not None else model.target_code
    y = test_set.label(target)
    scores = model.proba(test_set)
    point = auroc(scores, y)
    low, high = bootstrap_ci(scores, y, n_bootstrap, alpha, seed, n_threads)
    return EvalReport(
        target_code=model.target_code,
        auroc=point,
        ci_low=low,
        ci_high=high,
        n_test=int(len(y)),
        prevalence=float(np.count_nonzero(y)) / len(y),
        n_bootstrap=n_bootstrap,
        seed=seed,
        alpha=alpha,
        source_tag=test_set.source_tag,
    )
