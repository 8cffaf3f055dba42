"""Exact Shapley values for boosted tree models.

The value of a feature coalition ``S`` for one tree is the cover-weighted
conditional expectation of its output: at a split on a feature in ``S`` the
row's own branch is followed, at any other split both branches are averaged
with weights proportional to their training cover.

For a single leaf this value factorizes over the distinct features on its
root path. Feature ``j`` contributes ``o_j`` (1 if the row agrees with every
split on ``j`` along the path, else 0) when present, and ``z_j`` (the product
of the cover fractions of those splits) when absent. The Shapley value of a
product game has a closed form through the coefficients of
``prod_{j != i} (z_j + o_j t)``. Since ``o`` is binary, each leaf needs a
table over at most ``2**depth`` agreement patterns, which rows then index
into. Summing leaves and trees gives the model's attributions.

:func:`shap_brute` evaluates the Shapley formula over every coalition
directly and serves as the reference.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .boosting import BoostedModel, FlatTree, Leaf, TreeNode, features_used
from .errors import SchemaMismatch, TooManyFeatures

MAX_BRUTE_FEATURES = 15
DEFAULT_MAX_DOTS = 5000


@dataclass
class AttributionMatrix:
    base_value: float
    phi: np.ndarray
    values: np.ndarray
    feature_names: tuple[str, ...]
    row_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.phi.shape != self.values.shape or self.phi.shape[1] != len(self.feature_names):
            raise ValueError("phi and values must both be n_rows x n_features")
        if self.row_index is None:
            self.row_index = np.arange(self.phi.shape[0])
        self.row_index = np.asarray(self.row_index, dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["row_index", *(f"phi_{n}" for n in self.feature_names), "base_value"])
        for r, row in zip(self.row_index, self.phi):
            writer.writerow([int(r), *(repr(float(v)) for v in row), repr(self.base_value)])
        return out.getvalue()


# -- value function ------------------------------------------------------------

def _goes_left(node, x: float) -> bool:
    return node.default_left if math.isnan(x) else x < node.threshold


def tree_expectation(tree: TreeNode, row, active_set) -> float:
    """Cover-weighted expected output of ``tree`` given the features in ``active_set``."""
    if isinstance(tree, Leaf):
        return tree.weight
    if tree.feature_index in active_set:
        x = float(row[tree.feature_index])
        return tree_expectation(tree.left if _goes_left(tree, x) else tree.right, row, active_set)
    left = tree_expectation(tree.left, row, active_set)
    right = tree_expectation(tree.right, row, active_set)
    return (tree.left.cover * left + tree.right.cover * right) / tree.cover


# -- reference implementation --------------------------------------------------

def shapley_weight(size: int, n_players: int) -> float:
    return math.factorial(size) * math.factorial(n_players - size - 1) / math.factorial(n_players)


def shap_brute(model: BoostedModel, row) -> tuple[float, np.ndarray]:
    """Shapley values by enumerating every coalition of the features the model uses."""
    row = _check_row(model, row)
    players = sorted(set().union(*(features_used(t) for t in model.trees))) if model.trees else []
    if len(players) > MAX_BRUTE_FEATURES:
        raise TooManyFeatures(f"{len(players)} features exceed the enumeration bound {MAX_BRUTE_FEATURES}")

    def v(coalition) -> float:
        return sum(tree_expectation(t, row, coalition) for t in model.trees)

    phi = np.zeros(len(model.schema))
    d = len(players)
    values = {}
    for size in range(d + 1):
        for coalition in combinations(players, size):
            values[frozenset(coalition)] = v(frozenset(coalition))
    for i in players:
        others = [p for p in players if p != i]
        total = 0.0
        for size in range(d):
            w = shapley_weight(size, d)
            for coalition in combinations(others, size):
                s = frozenset(coalition)
                total += w * (values[s | {i}] - values[s])
        phi[i] = total
    return model.base_score + values[frozenset()], phi


# -- production algorithm ------------------------------------------------------

def _leaf_paths(flat: FlatTree):
    """Yield ``(leaf_value, [(node, went_left), ...])`` for every leaf."""
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        if flat.feature[node] < 0:
            yield flat.value[node], path
            continue
        stack.append((flat.right[node], path + [(node, False)]))
        stack.append((flat.left[node], path + [(node, True)]))


def _product_game_table(z: np.ndarray, O: np.ndarray) -> np.ndarray:
    """Shapley values of ``prod_j (o_j if j in S else z_j)`` for each row of ``O``.

    ``z`` has length d; ``O`` is ``m x d`` with entries in {0, 1}. Returns an
    ``m x d`` matrix.
    """
    m, d = O.shape
    weights = np.array([shapley_weight(k, d) for k in range(d)])
    # prefix[i] = prod_{j<i}, suffix[i] = prod_{j>=i}; polynomials as (degree+1, m)
    prefix = [np.ones((1, m))]
    for j in range(d):
        prefix.append(_times_linear(prefix[-1], z[j], O[:, j]))
    suffix = [np.ones((1, m))]
    for j in reversed(range(d)):
        suffix.append(_times_linear(suffix[-1], z[j], O[:, j]))
    suffix.reverse()
    out = np.empty((m, d))
    for i in range(d):
        a, b = prefix[i], suffix[i + 1]
        coeffs = np.zeros((d, m))
        for p in range(a.shape[0]):
            coeffs[p:p + b.shape[0]] += a[p] * b
        out[:, i] = (O[:, i] - z[i]) * (weights @ coeffs)
    return out


def _times_linear(poly: np.ndarray, z: float, o: np.ndarray) -> np.ndarray:
    out = np.zeros((poly.shape[0] + 1, poly.shape[1]))
    out[:-1] += z * poly
    out[1:] += o * poly
    return out


def _tree_shap(flat: FlatTree, X: np.ndarray, phi: np.ndarray) -> float:
    """Add one tree's attributions for the rows of ``X`` into ``phi``; return its expectation."""
    internal = np.flatnonzero(flat.feature >= 0)
    routes = {}
    for k in internal:
        x = X[:, flat.feature[k]]
        routes[k] = np.where(np.isnan(x), flat.default_left[k], x < flat.threshold[k])
    base = 0.0
    for value, path in _leaf_paths(flat):
        feats: list[int] = []
        z: dict[int, float] = {}
        agree: dict[int, np.ndarray] = {}
        for node, went_left in path:
            f = int(flat.feature[node])
            child = flat.left[node] if went_left else flat.right[node]
            frac = flat.cover[child] / flat.cover[node]
            follow = routes[node] if went_left else ~routes[node]
            if f in z:
                z[f] *= frac
                agree[f] = agree[f] & follow
            else:
                feats.append(f)
                z[f] = frac
                agree[f] = follow
        zs = np.array([z[f] for f in feats])
        base += value * float(np.prod(zs)) if feats else value
        if not feats:
            continue
        d = len(feats)
        patterns = ((np.arange(2 ** d)[:, None] >> np.arange(d)[None, :]) & 1).astype(np.float64)
        table = value * _product_game_table(zs, patterns)
        code = np.zeros(X.shape[0], dtype=np.int64)
        for j, f in enumerate(feats):
            code |= agree[f].astype(np.int64) << j
        for j, f in enumerate(feats):
            phi[:, f] += table[code, j]
    return base


def _check_row(model: BoostedModel, row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (len(model.schema),):
        raise SchemaMismatch(f"expected a row of {len(model.schema)} features, got shape {row.shape}")
    return row


def expected_value(model: BoostedModel) -> float:
    """Cover-weighted expected margin, i.e. the attribution base value."""
    return model.base_score + sum(tree_expectation(t, (), frozenset()) for t in model.trees)


def shap_values(model: BoostedModel, X, n_threads: int = 1, chunk: int = 2048) -> AttributionMatrix:
    """Attributions for every row of ``X`` (a matrix or a :class:`CohortTable`)."""
    from .cohort import CohortTable

    if isinstance(X, CohortTable):
        model.check_schema(X.schema)
        X = X.features
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.schema):
        raise SchemaMismatch(f"expected rows with {len(model.schema)} features, got shape {X.shape}")

    def run(start):
        block = X[start:start + chunk]
        phi = np.zeros(block.shape)
        for flat in model.flat_trees:
            _tree_shap(flat, block, phi)
        return phi

    starts = range(0, X.shape[0], chunk)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            blocks = list(pool.map(run, starts))
    else:
        blocks = [run(s) for s in starts]
    phi = np.concatenate(blocks) if blocks else np.zeros((0, X.shape[1]))
    base = model.base_score
    for flat in model.flat_trees:
        base += _tree_shap(flat, X[:0], np.zeros((0, X.shape[1])))
    return AttributionMatrix(base, phi, X.copy(), tuple(model.schema))


def shap_row(model: BoostedModel, row) -> tuple[float, np.ndarray]:
    row = _check_row(model, row)
    attr = shap_values(model, row[None, :])
    return attr.base_value, attr.phi[0]


# -- summaries and export ------------------------------------------------------

def global_importance(attr: AttributionMatrix) -> list[tuple[str, float]]:
    """Features by mean absolute attribution, largest first; ties keep schema order."""
    if attr.n_rows < 1:
        raise ValueError("need at least one row")
    mean_abs = np.abs(attr.phi).mean(axis=0)
    order = sorted(range(len(mean_abs)), key=lambda j: (-mean_abs[j], j))
    return [(attr.feature_names[j], float(mean_abs[j])) for j in order]


def value_percentiles(values: np.ndarray) -> np.ndarray:
    """Per-column percentile in [0, 1] of each present value; NaN stays NaN.

    Uses average ranks, so a column's maximum maps to 1.0 and its minimum to
    0.0; a column with one distinct value maps to 0.5.
    """
    out = np.full(values.shape, np.nan)
    for j in range(values.shape[1]):
        col = values[:, j]
        present = ~np.isnan(col)
        m = int(present.sum())
        if m == 1:
            out[present, j] = 0.5
        elif m > 1:
            out[present, j] = (rankdata(col[present]) - 1.0) / (m - 1.0)
    return out


def sample_rows(n_rows: int, max_rows: int, seed: int) -> np.ndarray:
    """Sorted row subset of size ``min(n_rows, max_rows)``."""
    if n_rows <= max_rows:
        return np.arange(n_rows)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_rows, size=max_rows, replace=False))


def subsample(attr: AttributionMatrix, max_rows: int, seed: int) -> AttributionMatrix:
    keep = sample_rows(attr.n_rows, max_rows, seed)
    if len(keep) == attr.n_rows:
        return attr
    return AttributionMatrix(attr.base_value, attr.phi[keep], attr.values[keep], attr.feature_names,
                             attr.row_index[keep])


def beeswarm_csv(attr: AttributionMatrix) -> str:
    pct = value_percentiles(attr.values)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["feature", "row_index", "feature_value", "shap_value", "feature_value_percentile"])
    for name, _ in global_importance(attr):
        j = attr.feature_names.index(name)
        for i in range(attr.n_rows):
            x = attr.values[i, j]
            writer.writerow([
                name,
                int(attr.row_index[i]),
                "" if np.isnan(x) else repr(float(x)),
                repr(float(attr.phi[i, j])),
                "" if np.isnan(pct[i, j]) else repr(float(pct[i, j])),
            ])
    return out.getvalue()


LOW_RGB = (0, 139, 251)
HIGH_RGB = (255, 0, 82)
MISSING_RGB = (158, 158, 158)


def percentile_color(p: float) -> str:
    """Hex colour on the blue (low) to red (high) scale; grey for NaN."""
    if np.isnan(p):
        rgb = MISSING_RGB
    else:
        p = min(max(float(p), 0.0), 1.0)
        rgb = tuple(int(round(lo + (hi - lo) * p)) for lo, hi in zip(LOW_RGB, HIGH_RGB))
    return "#%02x%02x%02x" % rgb


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-12 * span:
        ticks.append(round(first + k * step, 12))
        k += 1
    return ticks


def beeswarm_svg(attr: AttributionMatrix, seed: int = 0, title: str = "") -> str:
    """Static beeswarm: one dot per (row, feature), features ordered by importance."""
    ranking = global_importance(attr)
    pct = value_percentiles(attr.values)
    rng = np.random.default_rng(seed)

    row_h, left, right, top, bottom = 34, 170, 90, 40 if title else 20, 50
    width = 860
    plot_w = width - left - right
    height = top + row_h * len(ranking) + bottom
    lo = float(min(attr.phi.min(), 0.0)) if attr.n_rows else -1.0
    hi = float(max(attr.phi.max(), 0.0)) if attr.n_rows else 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.04 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def sx(v):
        return left + (v - lo) / (hi - lo) * plot_w

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_escape(title)}</text>')
    y_axis = top + row_h * len(ranking)
    for t in _nice_ticks(lo, hi):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{y_axis}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{x:.2f}" y="{y_axis + 16}" text-anchor="middle">{t:g}</text>')
    x0 = sx(0.0)
    parts.append(f'<line x1="{x0:.2f}" y1="{top}" x2="{x0:.2f}" y2="{y_axis}" stroke="#999999"/>')
    parts.append(f'<line x1="{left}" y1="{y_axis}" x2="{left + plot_w}" y2="{y_axis}" stroke="#333333"/>')
    parts.append(f'<text x="{left + plot_w / 2:.1f}" y="{y_axis + 36}" text-anchor="middle">'
                 f'Shapley value (impact on log-odds)</text>')

    for k, (name, _) in enumerate(ranking):
        j = attr.feature_names.index(name)
        yc = top + row_h * k + row_h / 2
        parts.append(f'<text x="{left - 10}" y="{yc + 4:.1f}" text-anchor="end">{_escape(name)}</text>')
        jitter = rng.uniform(-0.38, 0.38, attr.n_rows) * row_h
        for i in range(attr.n_rows):
            parts.append(f'<circle cx="{sx(attr.phi[i, j]):.2f}" cy="{yc + jitter[i]:.2f}" r="2.6" '
                         f'fill="{percentile_color(pct[i, j])}" fill-opacity="0.8"/>')

    # colour bar
    bx, by, bh = width - right + 30, top, row_h * len(ranking)
    parts.append('<defs><linearGradient id="fv" x1="0" y1="1" x2="0" y2="0">'
                 f'<stop offset="0" stop-color="{percentile_color(0.0)}"/>'
                 f'<stop offset="1" stop-color="{percentile_color(1.0)}"/></linearGradient></defs>')
    parts.append(f'<rect x="{bx}" y="{by}" width="10" height="{bh}" fill="url(#fv)"/>')
    parts.append(f'<text x="{bx + 14}" y="{by + 10}">High</text>')
    parts.append(f'<text x="{bx + 14}" y="{by + bh}">Low</text>')
    parts.append(f'<text transform="translate({bx - 6},{by + bh / 2:.1f}) rotate(-90)" '
                 f'text-anchor="middle">Feature value</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def beeswarm_export(attr: AttributionMatrix, out_dir, seed: int = 0, max_rows: int = DEFAULT_MAX_DOTS,
                    title: str = "") -> tuple[Path, Path]:
    """Write ``beeswarm.csv`` and ``beeswarm.svg`` into ``out_dir``.

    At most ``max_rows`` rows (a seeded sample) are drawn.
    """
    attr = subsample(attr, max_rows, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = out_dir / "beeswarm.csv", out_dir / "beeswarm.svg"
    _write_atomic(csv_path, beeswarm_csv(attr))
    _write_atomic(svg_path, beeswarm_svg(attr, seed, title))
    return csv_path, svg_path


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
