"""Synthetic cohorts calibrated to published median/IQR summaries.

Every feature is drawn independently from a logistic distribution whose
median and interquartile range match the requested values. The logistic
quartiles sit at ``median +/- s*ln(3)``, so ``IQR = 2*s*ln(3)`` fixes the
scale ``s``. Label-positive rows get planted location shifts of
``direction * effect_size * IQR`` on selected features.

:func:`bayes_auroc` integrates the resulting class-conditional densities to
give the best AUROC any classifier can reach on a generated cohort.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .cohort import DEFAULT_SCHEMA, ECG_FEATURES, MIN_AGE, CohortTable, FeatureSchema
from .errors import SpecError

LN3 = math.log(3.0)
MIN_INTERVAL_MS = 1.0
AXIS_RANGE = (-180.0, 180.0)
DEFAULT_MAX_AGE = 110.0

# Child indices of the seed sequence; fixed so adding targets never perturbs
# the feature streams.
_SEX_STREAM, _AGE_STREAM, _MISSING_STREAM = 0, 1, 10
_FEATURE_STREAM0 = 2
_TARGET_STREAM0 = 11


def logistic_scale(iqr: float) -> float:
    return iqr / (2.0 * LN3)


@dataclass(frozen=True)
class Signal:
    feature: str
    direction: int
    effect_size: float


@dataclass(frozen=True)
class TargetSpec:
    prevalence: float
    signal: tuple[Signal, ...] = ()
    description: str = ""


@dataclass(frozen=True)
class CohortSpec:
    """Marginal summaries and planted label signals for one synthetic cohort.

    ``features`` maps each ECG feature to ``(median, iqr)``. ``age`` is a
    ``(median, iqr)`` pair; generated ages are clipped to ``age_bounds``.
    ``missing_fraction`` optionally blanks a fraction of each ECG column.
    """

    features: dict[str, tuple[float, float]]
    female_fraction: float
    age: tuple[float, float]
    targets: dict[str, TargetSpec]
    age_bounds: tuple[float, float] = (MIN_AGE, DEFAULT_MAX_AGE)
    missing_fraction: dict[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        missing = [f for f in ECG_FEATURES if f not in self.features]
        if missing:
            raise SpecError(f"features: missing entries for {missing}")
        for name, (median, iqr) in self.features.items():
            if name not in ECG_FEATURES:
                raise SpecError(f"features.{name}: not an ECG feature of the schema")
            if not (math.isfinite(median) and math.isfinite(iqr) and iqr > 0):
                raise SpecError(f"features.{name}: need finite median and iqr > 0")
        if not 0.0 <= self.female_fraction <= 1.0:
            raise SpecError("female_fraction: must lie in [0, 1]")
        if not self.age[1] > 0:
            raise SpecError("age.iqr: must be > 0")
        lo, hi = self.age_bounds
        if not (MIN_AGE <= lo < hi):
            raise SpecError(f"age bounds must satisfy {MIN_AGE:g} <= min < max")
        if not self.targets:
            raise SpecError("targets: at least one target is required")
        for code, t in self.targets.items():
            if not 0.0 < t.prevalence < 1.0:
                raise SpecError(f"targets.{code}.prevalence: must lie in (0, 1)")
            for sig in t.signal:
                if sig.feature not in self.features and sig.feature != "age_years":
                    raise SpecError(f"targets.{code}.signal: cannot shift feature {sig.feature!r}")
                if sig.direction not in (-1, 1):
                    raise SpecError(f"targets.{code}.signal.direction: must be +1 or -1")
                if not math.isfinite(sig.effect_size) or sig.effect_size < 0:
                    raise SpecError(f"targets.{code}.signal.effect_size: must be finite and >= 0")
        for name, frac in self.missing_fraction.items():
            if name not in ECG_FEATURES or not 0.0 <= frac < 1.0:
                raise SpecError(f"missing_fraction.{name}: must be an ECG feature with fraction in [0, 1)")

    def median_iqr(self, feature: str) -> tuple[float, float]:
        return self.age if feature == "age_years" else self.features[feature]

    def shifts(self, target: str) -> dict[str, float]:
        """Absolute shift per feature applied to positives of ``target``."""
        out: dict[str, float] = {}
        for sig in self.targets[target].signal:
            iqr = self.median_iqr(sig.feature)[1]
            out[sig.feature] = out.get(sig.feature, 0.0) + sig.direction * sig.effect_size * iqr
        return out

    def clip_bounds(self, feature: str) -> tuple[float, float]:
        if feature == "age_years":
            return self.age_bounds
        if feature.endswith("_deg"):
            return AXIS_RANGE
        return (MIN_INTERVAL_MS, math.inf)

    def with_targets(self, targets: dict[str, TargetSpec]) -> "CohortSpec":
        return CohortSpec(self.features, self.female_fraction, self.age, targets,
                          self.age_bounds, self.missing_fraction, self.name)

    # -- JSON ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "CohortSpec":
        if not isinstance(data, dict):
            raise SpecError("spec: top level must be a JSON object")
        for key in ("features", "female_fraction", "age", "targets"):
            if key not in data:
                raise SpecError(f"{key}: required key missing")
        features = {}
        if not isinstance(data["features"], dict):
            raise SpecError("features: must be an object")
        for fname, entry in data["features"].items():
            features[fname] = _median_iqr(entry, f"features.{fname}")
        missing = {}
        for fname, entry in data["features"].items():
            if isinstance(entry, dict) and "missing_fraction" in entry:
                missing[fname] = _number(entry["missing_fraction"], f"features.{fname}.missing_fraction")
        age_entry = data["age"]
        age = _median_iqr(age_entry, "age")
        bounds = (
            _number(age_entry.get("min", MIN_AGE), "age.min"),
            _number(age_entry.get("max", DEFAULT_MAX_AGE), "age.max"),
        )
        if not isinstance(data["targets"], dict):
            raise SpecError("targets: must be an object")
        targets = {}
        for code, entry in data["targets"].items():
            where = f"targets.{code}"
            if not isinstance(entry, dict) or "prevalence" not in entry:
                raise SpecError(f"{where}.prevalence: required key missing")
            raw = entry.get("signal", [])
            if not isinstance(raw, list):
                raise SpecError(f"{where}.signal: must be a list")
            signals = []
            for k, s in enumerate(raw):
                if not isinstance(s, dict):
                    raise SpecError(f"{where}.signal[{k}]: must be an object")
                for key in ("feature", "direction", "effect_size"):
                    if key not in s:
                        raise SpecError(f"{where}.signal[{k}].{key}: required key missing")
                direction = _number(s["direction"], f"{where}.signal[{k}].direction")
                if direction not in (-1, 1):
                    raise SpecError(f"{where}.signal[{k}].direction: must be +1 or -1")
                signals.append(Signal(str(s["feature"]), int(direction),
                                      _number(s["effect_size"], f"{where}.signal[{k}].effect_size")))
            targets[code] = TargetSpec(
                prevalence=_number(entry["prevalence"], f"{where}.prevalence"),
                signal=tuple(signals),
                description=str(entry.get("description", "")),
            )
        return cls(
            features=features,
            female_fraction=_number(data["female_fraction"], "female_fraction"),
            age=age,
            targets=targets,
            age_bounds=bounds,
            missing_fraction=missing,
            name=str(data.get("name", name)),
        )

    @classmethod
    def from_json(cls, path) -> "CohortSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path.name}: invalid JSON ({exc})") from None
        return cls.from_dict(data, name=path.stem)

    def to_dict(self) -> dict:
        feats = {}
        for fname, (m, iqr) in self.features.items():
            feats[fname] = {"median": m, "iqr": iqr}
            if fname in self.missing_fraction:
                feats[fname]["missing_fraction"] = self.missing_fraction[fname]
        return {
            "name": self.name,
            "features": feats,
            "female_fraction": self.female_fraction,
            "age": {"median": self.age[0], "iqr": self.age[1],
                    "min": self.age_bounds[0], "max": self.age_bounds[1]},
            "targets": {
                code: {
                    "prevalence": t.prevalence,
                    **({"description": t.description} if t.description else {}),
                    "signal": [{"feature": s.feature, "direction": s.direction, "effect_size": s.effect_size}
                               for s in t.signal],
                }
                for code, t in self.targets.items()
            },
        }


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SpecError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _median_iqr(entry, where: str) -> tuple[float, float]:
    if not isinstance(entry, dict):
        raise SpecError(f"{where}: expected an object with median and iqr")
    for key in ("median", "iqr"):
        if key not in entry:
            raise SpecError(f"{where}.{key}: required key missing")
    median, iqr = _number(entry["median"], f"{where}.median"), _number(entry["iqr"], f"{where}.iqr")
    if iqr <= 0:
        raise SpecError(f"{where}.iqr: must be > 0")
    return median, iqr


def synth_cohort(spec: CohortSpec, n: int, seed: int, source_tag: str | None = None,
                 schema: FeatureSchema = DEFAULT_SCHEMA) -> CohortTable:
    """Draw ``n`` rows from ``spec``. Deterministic in ``(spec, n, seed)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    children = np.random.SeedSequence(seed).spawn(_TARGET_STREAM0 + len(spec.targets))
    rng = [np.random.default_rng(c) for c in children]

    X = np.empty((n, len(schema)))
    male = rng[_SEX_STREAM].random(n) >= spec.female_fraction
    X[:, schema.index("sex")] = male.astype(np.float64)
    age_median, age_iqr = spec.age
    X[:, schema.index("age_years")] = rng[_AGE_STREAM].logistic(age_median, logistic_scale(age_iqr), n)
    for k, fname in enumerate(ECG_FEATURES):
        median, iqr = spec.features[fname]
        X[:, schema.index(fname)] = rng[_FEATURE_STREAM0 + k].logistic(median, logistic_scale(iqr), n)

    labels = {}
    for t, (code, target) in enumerate(spec.targets.items()):
        y = rng[_TARGET_STREAM0 + t].random(n) < target.prevalence
        labels[code] = y.astype(np.int8)
        for fname, delta in spec.shifts(code).items():
            X[y, schema.index(fname)] += delta

    for fname in ECG_FEATURES + ("age_years",):
        lo, hi = spec.clip_bounds(fname)
        j = schema.index(fname)
        X[:, j] = np.clip(X[:, j], lo, hi)

    miss_rng = rng[_MISSING_STREAM]
    for fname in ECG_FEATURES:
        u = miss_rng.random(n)
        frac = spec.missing_fraction.get(fname, 0.0)
        if frac > 0:
            X[u < frac, schema.index(fname)] = np.nan

    tag = source_tag if source_tag is not None else (spec.name or "synthetic")
    return CohortTable(X, labels, source_tag=tag, schema=schema)


# -- Bayes-optimal AUROC -----------------------------------------------------

def background_shifts(spec: CohortSpec, target: str, feature: str, min_prob: float = 1e-12):
    """Distribution of the shift that *other* targets add to ``feature``.

    Labels of different targets are independent, so the total is a sum of
    independent two-point variables. Returns ``(shifts, probs)``; components
    below ``min_prob`` are dropped and the rest renormalized.
    """
    dist = {0.0: 1.0}
    for code, t in spec.targets.items():
        if code == target:
            continue
        delta = spec.shifts(code).get(feature, 0.0)
        if delta == 0.0:
            continue
        nxt: dict[float, float] = {}
        for shift, prob in dist.items():
            for add, w in ((0.0, 1.0 - t.prevalence), (delta, t.prevalence)):
                q = prob * w
                if q >= min_prob:
                    nxt[shift + add] = nxt.get(shift + add, 0.0) + q
        dist = nxt
    shifts = np.array(sorted(dist))
    probs = np.array([dist[k] for k in sorted(dist)])
    return shifts, probs / probs.sum()


def _mixture_cdf(x: np.ndarray, loc: np.ndarray, weights: np.ndarray, s: float) -> np.ndarray:
    out = np.zeros_like(x)
    for mu, w in zip(loc, weights):
        out += w * stats.logistic.cdf(x, loc=mu, scale=s)
    return out


def _feature_llr(median, s, delta, background, lo, hi, n_cells):
    """Discretized observation of one clipped feature under both classes.

    Returns per-cell log-likelihood ratios and class masses ``(llr, p0, p1)``;
    the two clip atoms are cells of their own.
    """
    shifts, weights = background
    loc0 = median + shifts
    loc1 = loc0 + delta
    a = max(lo, min(loc0.min(), loc1.min()) - 45 * s)
    b = min(hi, max(loc0.max(), loc1.max()) + 45 * s)
    edges = np.linspace(a, b, n_cells + 1)
    c0, c1 = _mixture_cdf(edges, loc0, weights, s), _mixture_cdf(edges, loc1, weights, s)
    p0 = np.concatenate([[c0[0]], np.diff(c0), [1.0 - c0[-1]]])
    p1 = np.concatenate([[c1[0]], np.diff(c1), [1.0 - c1[-1]]])
    keep = (p0 > 0) & (p1 > 0)
    p0, p1 = p0[keep], p1[keep]
    return np.log(p1) - np.log(p0), p0, p1


def bayes_auroc(spec: CohortSpec, target: str, n_cells: int = 20000, n_bins: int = 20001) -> float:
    """AUROC of the exact likelihood-ratio score for ``target``.

    Each shifted feature is discretized finely and its log-likelihood ratio
    binned onto a shared grid; class-conditional score distributions are the
    convolutions of the per-feature ones (features are independent given the
    label). Shifts planted for other targets enter as a mixture over their
    labels. Missing cells carry no information and are ignored; unshifted
    features contribute nothing.
    """
    shifts = {f: d for f, d in spec.shifts(target).items() if d != 0.0}
    if not shifts:
        return 0.5
    parts = []
    for fname, delta in shifts.items():
        median, iqr = spec.median_iqr(fname)
        lo, hi = spec.clip_bounds(fname)
        parts.append(_feature_llr(median, logistic_scale(iqr), delta,
                                  background_shifts(spec, target, fname), lo, hi, n_cells))
    span = sum(np.abs(llr).max() for llr, _, _ in parts)
    h = 2.0 * span / (n_bins - 1)
    total0 = total1 = np.ones(1)
    for llr, p0, p1 in parts:
        idx = np.rint(llr / h).astype(np.int64)
        base = idx.min()
        h0 = np.bincount(idx - base, weights=p0)
        h1 = np.bincount(idx - base, weights=p1)
        total0 = np.convolve(total0, h0)
        total1 = np.convolve(total1, h1)
    total0 /= total0.sum()
    total1 /= total1.sum()
    below = np.concatenate([[0.0], np.cumsum(total0)[:-1]])
    return float(np.sum(total1 * (below + 0.5 * total0)))


def logistic_shift_auroc(shift_in_scales: float) -> float:
    """P(X1 > X0) for unit logistics whose locations differ by ``shift_in_scales``.

    Direct quadrature of ``integral f(x - d) F(x) dx``; independent of
    :func:`bayes_auroc` and valid for a single unclipped feature.
    """
    d = float(shift_in_scales)
    f = stats.logistic.pdf
    F = stats.logistic.cdf
    value, _ = integrate.quad(lambda x: f(x - d) * F(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
    return float(value)
