"""
Cohorts, strata and the 18:1:1 split
====================================

Generate a synthetic cohort from the bundled internal-cohort summary, look at
its marginals, and build the stratified fold assignment used for training.
"""
import numpy as np

from ecgdx import assign_strata, make_folds, prevalence, synth_cohort
from ecgdx.cohort import fold_counts
from ecgdx.registry import load_spec

spec = load_spec("mimic_like")
cohort = synth_cohort(spec, 20_000, seed=0)
print(f"{cohort.n_rows} rows, {len(cohort.targets)} diagnosis columns")

# %%
# Every feature starts from a logistic law matched to the published median
# and IQR; positives of each target are then shifted by their signal plan.
# Rows negative for every target therefore carry the calibrated base law,
# while the full cohort drifts wherever common targets share a shift (age
# moves up because the two prostate codes cover about a fifth of the rows).
clean = np.all([cohort.label(c) == 0 for c in cohort.targets], axis=0)
print(f"{clean.sum()} rows are negative for every target")
print(f"{'':>18s}  {'spec':>13s}  {'all-negative rows':>19s}  {'full cohort':>13s}")
for name in [*spec.features, "age_years"]:
    median, iqr = spec.median_iqr(name)
    col = cohort.column(name)
    cells = []
    for rows in (clean, slice(None)):
        q1, q2, q3 = np.nanquantile(col[rows], [0.25, 0.5, 0.75])
        cells.append(f"{q2:7.1f} ({q3 - q1:5.1f})")
    print(f"{name:>18s}  {median:6.1f} ({iqr:5.1f})  {cells[0]:>19s}  {cells[1]:>13s}")

# %%
# Labels are Bernoulli draws at the registry prevalence.
for code in ("C34", "C61", "N40"):
    print(f"{code}: prevalence {100 * prevalence(cohort, code):.2f}% (spec {100 * spec.targets[code].prevalence:.2f}%)")

# %%
# Strata combine the label, sex and age quartile into one of 16 ids; rows are
# then dealt round-robin into 20 folds within each stratum.
strata = assign_strata(cohort, "C34")
print("rows per stratum:", np.bincount(strata, minlength=16))

folds = make_folds(cohort, "C34", seed=0)
print(f"train {len(folds.train_rows)}, validation {len(folds.val_rows)}, test {len(folds.test_rows)}")

# Every stratum is spread evenly: per-fold counts differ by at most one.
counts = fold_counts(strata, folds)
print("per-stratum spread (max - min over folds):", {s: int(c.max() - c.min()) for s, c in counts.items()})
