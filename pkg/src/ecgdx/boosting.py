"""Second-order gradient boosted trees for binary targets.

Trees are grown depth-first with an exact greedy split search over sorted
feature values. Rows with a missing value are routed along a learned default
direction: during the scan they are tried on both sides and the better side
is kept. Leaf weights are Newton steps ``-G / (H + lambda)`` on the logistic
loss, already multiplied by the learning rate, so a model's margin is simply
``base_score + sum(leaf weights)``.

Boosting stops early once the validation AUROC has not improved for
``patience`` consecutive rounds; the returned model is truncated to the best
round.
"""
from __future__ import annotations

import json
import math
from functools import partial
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .cohort import DEFAULT_SCHEMA, CohortTable, FeatureSchema, normalize_target
from .errors import EmptySet, SchemaMismatch, SingleClassTrain, SingleClassVal, SpecError
from .metrics import auroc

FORMAT_VERSION = 1
MIN_IMPROVEMENT = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_depth: int = 6
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    min_child_weight: float = 1.0
    max_rounds: int = 1000
    patience: int = 10
    seed: int = 0
    pos_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise SpecError("learning_rate: must lie in (0, 1]")
        if self.max_depth < 1:
            raise SpecError("max_depth: must be >= 1")
        if self.patience < 1:
            raise SpecError("patience: must be >= 1")
        if self.max_rounds < 1:
            raise SpecError("max_rounds: must be >= 1")
        for name in ("lambda_l2", "gamma_min_gain", "min_child_weight"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name}: must be >= 0")
        if not self.pos_weight > 0:
            raise SpecError("pos_weight: must be > 0")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise SpecError("config: top level must be a JSON object")
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise SpecError(f"{key}: unknown config key")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SpecError(f"{key}: expected a number, got {value!r}")
            if key in ("max_depth", "max_rounds", "patience", "seed"):
                if float(value) != int(value):
                    raise SpecError(f"{key}: expected an integer, got {value!r}")
                value = int(value)
            else:
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Leaf:
    weight: float
    cover: float


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    default_left: bool
    left: "TreeNode"
    right: "TreeNode"
    cover: float
    gain: float = 0.0


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    default_left: bool
    gain: float


def leaf_weight(G: float, H: float, lambda_l2: float) -> float:
    return -G / (H + lambda_l2)


def split_gain(GL, HL, GR, HR, lambda_l2, gamma=0.0):
    """Loss reduction of a split; works elementwise on arrays."""
    return 0.5 * (GL * GL / (HL + lambda_l2) + GR * GR / (HR + lambda_l2)
                  - (GL + GR) ** 2 / (HL + HR + lambda_l2)) - gamma


def _midpoint(a, b):
    mid = 0.5 * (a + b)
    # adjacent floats: the midpoint may round onto a, which would send a right
    return np.where(mid > a, mid, b)


def _scan_sorted(values, g, h, G_miss, H_miss, has_missing, feature_index, config):
    """Best split over present values already sorted ascending."""
    m = len(values)
    if m < 2:
        return None
    distinct = np.flatnonzero(values[1:] > values[:-1])
    if len(distinct) == 0:
        return None
    cg = np.cumsum(g)
    ch = np.cumsum(h)
    G_pres, H_pres = cg[-1], ch[-1]
    GL, HL = cg[distinct], ch[distinct]
    lam, mcw, gamma = config.lambda_l2, config.min_child_weight, config.gamma_min_gain

    # default_left = True: missing rows join the left child
    GLl, HLl = GL + G_miss, HL + H_miss
    GRl, HRl = G_pres - GL, H_pres - HL
    gain_l = split_gain(GLl, HLl, GRl, HRl, lam, gamma)
    gain_l = np.where((HLl >= mcw) & (HRl >= mcw), gain_l, -np.inf)
    if has_missing:
        GRr, HRr = G_pres - GL + G_miss, H_pres - HL + H_miss
        gain_r = split_gain(GL, HL, GRr, HRr, lam, gamma)
        gain_r = np.where((HL >= mcw) & (HRr >= mcw), gain_r, -np.inf)
    else:
        gain_r = np.full_like(gain_l, -np.inf)

    best = max(gain_l.max(), gain_r.max())
    if not best > 0:
        return None
    il = np.flatnonzero(gain_l == best)
    ir = np.flatnonzero(gain_r == best)
    i_left = il[0] if len(il) else m
    i_right = ir[0] if len(ir) else m
    default_left = i_left <= i_right
    pos = distinct[i_left if default_left else i_right]
    threshold = float(_midpoint(values[pos], values[pos + 1]))
    return SplitCandidate(int(feature_index), threshold, bool(default_left), float(best))


def best_split(values, gradients, hessians, feature_index: int, config: "TrainConfig") -> Optional[SplitCandidate]:
    """Exact greedy split of one node on one feature.

    ``values`` holds the node's feature column (``NaN`` = missing). Candidate
    thresholds are midpoints between adjacent distinct present values. Ties
    go to the lower threshold, then to ``default_left=True``. Returns ``None``
    when no admissible split has positive gain.
    """
    values = np.asarray(values, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    missing = np.isnan(values)
    present = np.flatnonzero(~missing)
    order = present[np.argsort(values[present], kind="stable")]
    return _scan_sorted(values[order], g[order], h[order],
                        float(g[missing].sum()), float(h[missing].sum()), bool(missing.any()),
                        feature_index, config)


def _better(a: Optional[SplitCandidate], b: Optional[SplitCandidate]) -> Optional[SplitCandidate]:
    """Pick between candidates from features scanned in ascending order."""
    if b is None:
        return a
    if a is None or b.gain > a.gain:
        return b
    return a


class _TreeGrower:
    """Depth-first exact greedy growth over one fixed feature matrix."""

    def __init__(self, X: np.ndarray, config: TrainConfig, n_threads: int = 1):
        self.X = X
        self.config = config
        self.n, self.p = X.shape
        # NaN sorts last, so each order is [present ascending..., missing...]
        self.order = [np.argsort(X[:, j], kind="stable") for j in range(self.p)]
        self.n_present = [int(np.count_nonzero(~np.isnan(X[:, j]))) for j in range(self.p)]
        self.pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def grow(self, g: np.ndarray, h: np.ndarray) -> TreeNode:
        self.g, self.h = g, h
        return self._build(np.arange(self.n), 0)

    def _sorted_rows(self, rows: np.ndarray, in_node: Optional[np.ndarray], j: int):
        col = self.X[:, j]
        if in_node is not None:
            present = self.order[j][: self.n_present[j]]
            ordered = present[in_node[present]]
        else:
            vals = col[rows]
            keep = ~np.isnan(vals)
            sub = rows[keep]
            ordered = sub[np.argsort(vals[keep], kind="stable")]
        return ordered

    def _scan_feature(self, rows, in_node, j):
        ordered = self._sorted_rows(rows, in_node, j)
        g, h = self.g[ordered], self.h[ordered]
        n_missing = len(rows) - len(ordered)
        if n_missing:
            col = self.X[rows, j]
            miss = rows[np.isnan(col)]
            G_miss, H_miss = float(self.g[miss].sum()), float(self.h[miss].sum())
        else:
            G_miss = H_miss = 0.0
        return _scan_sorted(self.X[ordered, j], g, h, G_miss, H_miss, n_missing > 0, j, self.config)

    def _leaf(self, rows: np.ndarray) -> Leaf:
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        w = leaf_weight(G, H, self.config.lambda_l2) * self.config.learning_rate
        return Leaf(weight=float(w), cover=H)

    def _build(self, rows: np.ndarray, depth: int) -> TreeNode:
        if depth >= self.config.max_depth or len(rows) < 2:
            return self._leaf(rows)
        in_node = None
        if len(rows) * 8 > self.n:
            in_node = np.zeros(self.n, dtype=bool)
            in_node[rows] = True
        scan = partial(self._scan_feature, rows, in_node)
        if self.pool is not None:
            results = list(self.pool.map(scan, range(self.p)))
        else:
            results = [scan(j) for j in range(self.p)]
        best = None
        for cand in results:
            best = _better(best, cand)
        if best is None:
            return self._leaf(rows)
        col = self.X[rows, best.feature_index]
        go_left = np.where(np.isnan(col), best.default_left, col < best.threshold)
        left = self._build(rows[go_left], depth + 1)
        right = self._build(rows[~go_left], depth + 1)
        return Split(best.feature_index, best.threshold, best.default_left, left, right,
                     cover=left.cover + right.cover, gain=best.gain)


def grow_tree(gradients, hessians, features, config: TrainConfig, n_threads: int = 1) -> TreeNode:
    """Fit one regression tree to first/second-order loss derivatives."""
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    X = np.asarray(features, dtype=np.float64)
    if g.shape != h.shape or g.ndim != 1 or len(g) == 0 or X.shape[0] != len(g):
        raise ValueError("gradients, hessians and feature rows must have the same non-zero length")
    grower = _TreeGrower(X, config, n_threads)
    try:
        return grower.grow(g, h)
    finally:
        grower.close()


# -- flattened trees for prediction -----------------------------------------

@dataclass(frozen=True)
class FlatTree:
    feature: np.ndarray       # -1 at leaves
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray         # leaf weight, 0 at splits
    cover: np.ndarray

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0


def flatten(tree: TreeNode) -> FlatTree:
    """Preorder array layout; node 0 is the root."""
    feature, threshold, default_left, left, right, value, cover = [], [], [], [], [], [], []

    def visit(node):
        k = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        default_left.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(node.cover)
        if isinstance(node, Leaf):
            value[k] = node.weight
        else:
            feature[k] = node.feature_index
            threshold[k] = node.threshold
            default_left[k] = node.default_left
            left[k] = visit(node.left)
            right[k] = visit(node.right)
        return k

    visit(tree)
    return FlatTree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(default_left, dtype=bool),
                    np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                    np.array(value), np.array(cover))


def apply_flat(flat: FlatTree, X: np.ndarray) -> np.ndarray:
    """Leaf index reached by each row of ``X``."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(~flat.is_leaf[node])
    while len(active):
        nd = node[active]
        x = X[active, flat.feature[nd]]
        go_left = np.where(np.isnan(x), flat.default_left[nd], x < flat.threshold[nd])
        node[active] = np.where(go_left, flat.left[nd], flat.right[nd])
        active = active[~flat.is_leaf[node[active]]]
    return node


def tree_depth(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def iter_splits(tree: TreeNode):
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Split):
            yield node
            stack.extend((node.right, node.left))


def features_used(tree: TreeNode) -> set[int]:
    return {s.feature_index for s in iter_splits(tree)}


# -- the model -----------------------------------------------------------------

@dataclass
class BoostedModel:
    base_score: float
    trees: list[TreeNode]
    best_iteration: int
    target_code: str
    schema: tuple[str, ...] = DEFAULT_SCHEMA.names
    history: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.trees = list(self.trees)
        self.schema = tuple(self.schema)
        if self.best_iteration != len(self.trees):
            raise ValueError("best_iteration must equal the number of trees")
        self._flat: Optional[list[FlatTree]] = None

    @property
    def flat_trees(self) -> list[FlatTree]:
        if self._flat is None:
            self._flat = [flatten(t) for t in self.trees]
        return self._flat

    def check_schema(self, schema: Union[FeatureSchema, tuple, list]) -> None:
        names = tuple(schema.names if isinstance(schema, FeatureSchema) else schema)
        if names != self.schema:
            raise SchemaMismatch(f"model schema {list(self.schema)} does not match {list(names)}")

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, CohortTable):
            self.check_schema(X.schema)
            return X.features
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaMismatch(f"expected rows with {len(self.schema)} features, got shape {X.shape}")
        return X

    def margins(self, X) -> np.ndarray:
        X = self._matrix(X)
        out = np.full(X.shape[0], self.base_score)
        for flat in self.flat_trees:
            out += flat.value[apply_flat(flat, X)]
        return out

    def proba(self, X) -> np.ndarray:
        return expit(self.margins(X))

    def truncated(self, n_trees: int) -> "BoostedModel":
        return BoostedModel(self.base_score, self.trees[:n_trees], n_trees, self.target_code, self.schema,
                            history=self.history)

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "target_code": self.target_code,
            "base_score": self.base_score,
            "best_iteration": self.best_iteration,
            "schema": list(self.schema),
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "BoostedModel":
        if data.get("format_version") != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format_version {data.get('format_version')!r}")
        try:
            return cls(
                base_score=float(data["base_score"]),
                trees=[_node_from_dict(t) for t in data["trees"]],
                best_iteration=int(data["best_iteration"]),
                target_code=str(data["target_code"]),
                schema=tuple(data["schema"]),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"malformed model file: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "BoostedModel":
        return cls.from_dict(json.loads(text))


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"weight": node.weight, "cover": node.cover}
    return {
        "feature": node.feature_index,
        "threshold": node.threshold,
        "default_left": node.default_left,
        "cover": node.cover,
        "gain": node.gain,
        "children": [_node_to_dict(node.left), _node_to_dict(node.right)],
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "children" in d:
        left, right = d["children"]
        return Split(int(d["feature"]), float(d["threshold"]), bool(d["default_left"]),
                     _node_from_dict(left), _node_from_dict(right), float(d["cover"]), float(d.get("gain", 0.0)))
    return Leaf(float(d["weight"]), float(d["cover"]))


def predict_margin(model: BoostedModel, row) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (len(model.schema),):
        raise SchemaMismatch(f"expected a row of {len(model.schema)} features, got shape {row.shape}")
    return float(model.margins(row[None, :])[0])


def predict_proba(model: BoostedModel, row) -> float:
    return float(expit(predict_margin(model, row)))


# -- training ------------------------------------------------------------------

class EarlyStopping:
    """Track a maximized metric; signal a stop after ``patience`` stale rounds."""

    def __init__(self, patience: int, min_delta: float = MIN_IMPROVEMENT):
        self.patience = patience
        self.min_delta = min_delta
        self.best_score = -math.inf
        self.best_round = 0
        self.rounds = 0

    def update(self, score: float) -> bool:
        self.rounds += 1
        if score > self.best_score + self.min_delta:
            self.best_score = score
            self.best_round = self.rounds
        return self.rounds - self.best_round >= self.patience


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^m) - y*m, stable for large |m|
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def train(train_set: CohortTable, val_set: CohortTable, target: str, config: TrainConfig = TrainConfig(),
          metric: Callable[[np.ndarray, np.ndarray], float] = auroc, n_threads: int = 1) -> BoostedModel:
    """Boost trees on ``train_set`` with early stopping on ``val_set``.

    ``metric(val_margins, val_labels)`` is maximized; it defaults to AUROC.
    The returned model keeps the trees up to the best round (earliest on
    ties). ``model.history`` records per-round validation scores and
    training losses.
    """
    if train_set.n_rows == 0 or val_set.n_rows == 0:
        raise EmptySet("train and validation sets must be non-empty")
    y = train_set.label(target).astype(np.float64)
    y_val = val_set.label(target)
    if y.min() == y.max():
        raise SingleClassTrain(f"training set for {target!r} has a single class")
    if y_val.min() == y_val.max():
        raise SingleClassVal(f"validation set for {target!r} has a single class")
    if train_set.schema != val_set.schema:
        raise SchemaMismatch("train and validation schemas differ")

    p = float(y.mean())
    base_score = math.log(p / (1.0 - p))
    X, X_val = train_set.features, val_set.features
    margin = np.full(len(y), base_score)
    margin_val = np.full(len(y_val), base_score)
    sample_weight = np.where(y == 1, config.pos_weight, 1.0)

    grower = _TreeGrower(X, config, n_threads)
    stopper = EarlyStopping(config.patience)
    trees, val_scores, losses = [], [], [logistic_loss(margin, y)]
    try:
        for _ in range(config.max_rounds):
            prob = expit(margin)
            g = (prob - y) * sample_weight
            h = prob * (1.0 - prob) * sample_weight
            tree = grower.grow(g, h)
            flat = flatten(tree)
            trees.append(tree)
            margin += flat.value[apply_flat(flat, X)]
            margin_val += flat.value[apply_flat(flat, X_val)]
            losses.append(logistic_loss(margin, y))
            score = float(metric(margin_val, y_val))
            val_scores.append(score)
            if stopper.update(score):
                break
    finally:
        grower.close()

    best = stopper.best_round
    return BoostedModel(
        base_score=base_score,
        trees=trees[:best],
        best_iteration=best,
        target_code=normalize_target(target),
        schema=train_set.schema.names,
        history={"val_metric": val_scores, "train_loss": losses, "rounds_grown": len(trees)},
    )
