"""
Exact Shapley values and the beeswarm
=====================================

Attribute a trained model's margins to features, check them against subset
enumeration, and export a beeswarm figure.
"""
import sys
from pathlib import Path

import numpy as np

from ecgdx import make_folds, synth_cohort, train
from ecgdx.attribution import beeswarm_export, global_importance, shap_brute, shap_values, tree_expectation
from ecgdx.boosting import BoostedModel, Leaf, Split
from ecgdx.registry import load_spec

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "beeswarm"

# %%
# The value of a coalition is the cover-weighted expectation of a tree: splits
# on features outside the coalition average both children by training cover.
tree = Split(0, 800.0, True, Leaf(-1.0, 30.0), Leaf(2.0, 10.0), 40.0)
row = np.zeros(10)
row[0] = 900.0
print("v({}) =", tree_expectation(tree, row, set()), " v({rr}) =", tree_expectation(tree, row, {0}))

# %%
# Train a model for prostate cancer, whose plan shifts age up and the QRS and
# P axes down.
cohort = synth_cohort(load_spec("mimic_like"), 30_000, seed=2)
folds = make_folds(cohort, "C61", seed=2)
model = train(cohort.subset(folds.train_rows), cohort.subset(folds.val_rows), "C61")
print(f"{len(model.trees)} trees")

test = cohort.subset(folds.test_rows)
attr = shap_values(model, test.features)
margins = model.margins(test)
print("largest local-accuracy error:", np.abs(attr.base_value + attr.phi.sum(axis=1) - margins).max())

# %%
# The brute-force reference enumerates all 2^10 coalitions; slow, but it
# agrees with the fast path.
small = BoostedModel(model.base_score, model.trees[:3], 3, "C61")
fast = shap_values(small, test.features[:2])
for i in range(2):
    _, phi = shap_brute(small, test.features[i])
    print(f"row {i}: max |fast - brute| = {np.abs(phi - fast.phi[i]).max():.1e}")

# %%
# Global importance is the mean absolute attribution.
for name, value in global_importance(attr)[:5]:
    print(f"{name:>18s}  {value:.4f}")

csv_path, svg_path = beeswarm_export(attr, out_dir, seed=0, title="C61")
print("wrote", csv_path, "and", svg_path)
