"""Cohort tables: the harmonized feature schema, CSV I/O, strata and folds.

A cohort is a dense ``n_rows x 10`` float matrix (``NaN`` marks a missing ECG
measurement) plus one binary label vector per diagnosis code. Label columns in
CSV files carry a ``dx_`` prefix, e.g. ``dx_C34``; in memory the prefix is
dropped and targets are addressed by their bare code.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BadValue, EmptyCohort, MissingColumn, SingleClass, TooFewRows, UnknownTarget

ECG_FEATURES = (
    "rr_interval_ms",
    "pr_interval_ms",
    "qrs_duration_ms",
    "qt_interval_ms",
    "qtc_interval_ms",
    "p_wave_axis_deg",
    "qrs_axis_deg",
    "t_wave_axis_deg",
)
DEMOGRAPHIC_FEATURES = ("age_years", "sex")
LABEL_PREFIX = "dx_"

N_FOLDS = 20
TRAIN_FOLDS = tuple(range(18))
VAL_FOLD = 18
TEST_FOLD = 19

MIN_AGE = 18.0


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered predictor names. Only the ECG measurements may be missing."""

    names: tuple[str, ...] = ECG_FEATURES + DEMOGRAPHIC_FEATURES

    def __post_init__(self):
        if len(self.names) != 10 or len(set(self.names)) != 10:
            raise ValueError("schema must list exactly 10 distinct features")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    @property
    def nullable(self) -> tuple[bool, ...]:
        return tuple(n in ECG_FEATURES for n in self.names)

    def is_axis(self, name: str) -> bool:
        return name.endswith("_deg")

    def is_interval(self, name: str) -> bool:
        return name.endswith("_ms")


DEFAULT_SCHEMA = FeatureSchema()


def normalize_target(target: str) -> str:
    """Accept ``"C34"`` or ``"dx_C34"``."""
    return target[len(LABEL_PREFIX):] if target.startswith(LABEL_PREFIX) else target


@dataclass
class CohortTable:
    features: np.ndarray
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    source_tag: str = ""
    schema: FeatureSchema = DEFAULT_SCHEMA

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != len(self.schema):
            raise ValueError(f"features must be n x {len(self.schema)}, got {self.features.shape}")
        n = self.features.shape[0]
        labels = {}
        for code, y in self.labels.items():
            y = np.asarray(y, dtype=np.int8)
            if y.shape != (n,):
                raise ValueError(f"label {code!r} has length {y.shape}, expected {n}")
            if np.any((y != 0) & (y != 1)):
                raise BadValue(f"label {code!r} has values outside {{0,1}}")
            labels[normalize_target(code)] = y
        self.labels = labels
        self._check_demographics()

    def _check_demographics(self):
        names = self.schema.names
        for j, nullable in enumerate(self.schema.nullable):
            if not nullable and np.isnan(self.features[:, j]).any():
                raise BadValue(f"{names[j]} may not be missing")
        if "age_years" in names:
            age = self.features[:, self.schema.index("age_years")]
            if not np.all(np.isfinite(age)) or np.any(age < MIN_AGE):
                raise BadValue(f"age_years must be finite and >= {MIN_AGE:g}")
        if "sex" in names:
            sex = self.features[:, self.schema.index("sex")]
            if np.any((sex != 0) & (sex != 1)):
                raise BadValue("sex must be 0 (female) or 1 (male)")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def targets(self) -> list[str]:
        return list(self.labels)

    def label(self, target: str) -> np.ndarray:
        code = normalize_target(target)
        if code not in self.labels:
            raise UnknownTarget(f"target {target!r} not in cohort (have {sorted(self.labels)})")
        return self.labels[code]

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.schema.index(name)]

    def subset(self, rows) -> "CohortTable":
        rows = np.asarray(rows, dtype=np.intp) if len(rows) == 0 else np.asarray(rows)
        return CohortTable(
            features=self.features[rows],
            labels={k: v[rows] for k, v in self.labels.items()},
            source_tag=self.source_tag,
            schema=self.schema,
        )


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise BadValue(f"line {line}: column {column!r} has non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise BadValue(f"line {line}: column {column!r} has non-finite value {text!r}")
    return value


def load_cohort(path, schema: FeatureSchema = DEFAULT_SCHEMA, source_tag: str | None = None) -> CohortTable:
    """Read a cohort CSV.

    The header must contain every schema column and at least one ``dx_<code>``
    label column; other columns are ignored. An empty cell in an ECG column is
    read as missing. Raises :class:`MissingColumn`, :class:`BadValue` or
    :class:`EmptyCohort`.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_cohort(fh, schema, source_tag if source_tag is not None else os.path.basename(str(path)))


def read_cohort_csv(text: str, schema: FeatureSchema = DEFAULT_SCHEMA, source_tag: str = "") -> CohortTable:
    return _read_cohort(io.StringIO(text), schema, source_tag)


def _read_cohort(fh, schema: FeatureSchema, source_tag: str) -> CohortTable:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyCohort("cohort file is empty") from None
    positions = {name: i for i, name in enumerate(header)}
    for name in schema.names:
        if name not in positions:
            raise MissingColumn(f"missing column {name!r}")
    label_cols = [h for h in header if h.startswith(LABEL_PREFIX) and len(h) > len(LABEL_PREFIX)]
    if not label_cols:
        raise MissingColumn(f"no label column with prefix {LABEL_PREFIX!r}")

    nullable = schema.nullable
    rows, labels = [], {c: [] for c in label_cols}
    for line, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) < len(header):
            raise BadValue(f"line {line}: expected {len(header)} cells, got {len(record)}")
        values = []
        for j, name in enumerate(schema.names):
            cell = record[positions[name]].strip()
            if cell == "":
                if not nullable[j]:
                    raise BadValue(f"line {line}: column {name!r} may not be empty")
                values.append(np.nan)
            else:
                values.append(_parse_float(cell, name, line))
        rows.append(values)
        for c in label_cols:
            cell = record[positions[c]].strip()
            y = _parse_float(cell, c, line) if cell else -1.0
            if y not in (0.0, 1.0):
                raise BadValue(f"line {line}: label {c!r} must be 0 or 1, got {cell!r}")
            labels[c].append(int(y))
    if not rows:
        raise EmptyCohort("cohort has no data rows")
    try:
        return CohortTable(
            features=np.array(rows, dtype=np.float64),
            labels={c: np.array(v, dtype=np.int8) for c, v in labels.items()},
            source_tag=source_tag,
            schema=schema,
        )
    except BadValue:
        raise
    except ValueError as exc:
        raise BadValue(str(exc)) from None


def _format_value(x: float) -> str:
    if np.isnan(x):
        return ""
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def cohort_to_csv(cohort: CohortTable) -> str:
    """Serialize to CSV text; floats keep full round-trip precision."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    codes = cohort.targets
    writer.writerow(list(cohort.schema.names) + [LABEL_PREFIX + c for c in codes])
    label_cols = [cohort.labels[c] for c in codes]
    for i in range(cohort.n_rows):
        writer.writerow(
            [_format_value(x) for x in cohort.features[i]] + [str(int(y[i])) for y in label_cols]
        )
    return out.getvalue()


def write_cohort(cohort: CohortTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cohort_to_csv(cohort))


def prevalence(cohort: CohortTable, target: str) -> float:
    y = cohort.label(target)
    return float(np.count_nonzero(y)) / len(y)


def age_quartile(age: np.ndarray) -> np.ndarray:
    """Quartile index 0..3 of each age relative to the column's own quartiles."""
    age = np.asarray(age, dtype=np.float64)
    bounds = np.quantile(age, [0.25, 0.5, 0.75])
    return np.searchsorted(bounds, age, side="right").astype(np.int64)


def assign_strata(cohort: CohortTable, target: str) -> np.ndarray:
    """Stratum id per row encoding (label, sex, age quartile) as ``8*y + 4*sex + q``."""
    y = cohort.label(target).astype(np.int64)
    sex = cohort.column("sex").astype(np.int64)
    q = age_quartile(cohort.column("age_years"))
    return 8 * y + 4 * sex + q


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_row: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fold_of_row, dtype=np.int64)
        if f.ndim != 1 or np.any((f < 0) | (f >= N_FOLDS)):
            raise ValueError(f"fold indices must lie in 0..{N_FOLDS - 1}")
        object.__setattr__(self, "fold_of_row", f)

    @property
    def train_rows(self) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row < VAL_FOLD)

    @property
    def val_rows(self) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == VAL_FOLD)

    @property
    def test_rows(self) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == TEST_FOLD)

    def rows(self, split: str) -> np.ndarray:
        try:
            return {"train": self.train_rows, "val": self.val_rows, "test": self.test_rows}[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None

    def to_csv(self) -> str:
        lines = ["row_index,fold"]
        lines += [f"{i},{f}" for i, f in enumerate(self.fold_of_row)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "FoldAssignment":
        reader = csv.DictReader(io.StringIO(text))
        pairs = sorted((int(r["row_index"]), int(r["fold"])) for r in reader)
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise BadValue("fold file must list every row index exactly once")
        return cls(np.array([f for _, f in pairs], dtype=np.int64))


def make_folds(cohort: CohortTable, target: str, seed: int) -> FoldAssignment:
    """Stratified 18:1:1 split realized as 20 equal folds.

    Rows of each stratum are shuffled with a generator seeded by ``seed`` and
    dealt round-robin. The deal continues where the previous stratum stopped,
    so overall fold sizes differ by at most one as well.
    """
    y = cohort.label(target)
    n = cohort.n_rows
    if n < N_FOLDS:
        raise TooFewRows(f"need at least {N_FOLDS} rows, got {n}")
    if y.min() == y.max():
        raise SingleClass(f"target {target!r} has a single class")
    strata = assign_strata(cohort, target)
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    offset = 0
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        members = members[rng.permutation(len(members))]
        folds[members] = (offset + np.arange(len(members))) % N_FOLDS
        offset = (offset + len(members)) % N_FOLDS
    return FoldAssignment(folds)


def fold_counts(strata: np.ndarray, folds: FoldAssignment) -> dict[int, np.ndarray]:
    """Per-stratum row counts in each of the 20 folds."""
    return {
        int(s): np.bincount(folds.fold_of_row[strata == s], minlength=N_FOLDS)
        for s in np.unique(strata)
    }


def from_columns(columns: Mapping[str, Sequence[float]], labels: Mapping[str, Sequence[int]],
                 source_tag: str = "", schema: FeatureSchema = DEFAULT_SCHEMA) -> CohortTable:
    """Build a table from per-feature columns; absent ECG columns become missing."""
    n = len(next(iter(labels.values()))) if labels else len(next(iter(columns.values())))
    X = np.full((n, len(schema)), np.nan)
    for j, name in enumerate(schema.names):
        if name in columns:
            X[:, j] = np.asarray(columns[name], dtype=np.float64)
        elif not schema.nullable[j]:
            raise MissingColumn(f"missing column {name!r}")
    return CohortTable(X, dict(labels), source_tag=source_tag, schema=schema)
