"""
Boosting one diagnosis with early stopping
==========================================

Train a per-code classifier on the training folds, watch validation AUROC,
and inspect the stored trees.
"""
import json

import numpy as np

from ecgdx import TrainConfig, make_folds, synth_cohort, train
from ecgdx.boosting import features_used, tree_depth
from ecgdx.registry import load_spec

cohort = synth_cohort(load_spec("mimic_like"), 30_000, seed=1)
folds = make_folds(cohort, "N40", seed=1)
train_set, val_set = cohort.subset(folds.train_rows), cohort.subset(folds.val_rows)

# %%
# Defaults: depth 6, learning rate 0.1, lambda 1, patience 10. Training stops
# ten rounds after the best validation AUROC and keeps only the trees up to
# that round.
config = TrainConfig()
model = train(train_set, val_set, "N40", config)
scores = model.history["val_metric"]
print(f"grew {model.history['rounds_grown']} rounds, kept {model.best_iteration}")
print(f"base score {model.base_score:.3f} = log-odds of the training prevalence")
for k in range(0, len(scores), max(1, len(scores) // 10)):
    bar = "#" * int(60 * (scores[k] - 0.5) / 0.5)
    print(f"round {k + 1:4d}  val AUROC {scores[k]:.4f}  {bar}")

# %%
# Training loss can only go down: each leaf weight minimizes the second
# order objective given the tree structure.
loss = np.array(model.history["train_loss"])
print("training loss non-increasing:", bool(np.all(np.diff(loss) <= 1e-15)))

# %%
# The trees are plain data. Depth, the features each tree uses, and the JSON
# form a model is saved in.
first = model.trees[0]
print(f"first tree: depth {tree_depth(first)}, features {sorted(features_used(first))}")
doc = json.loads(model.to_json())
print("model file keys:", list(doc))
print("root node:", {k: v for k, v in doc["trees"][0].items() if k != "children"})

# %%
# Shallower, more regularized trees for comparison.
heavy = train(train_set, val_set, "N40", TrainConfig(lambda_l2=50.0, max_depth=3))
print(f"lambda 50, depth 3: kept {heavy.best_iteration} trees, best val AUROC "
      f"{max(heavy.history['val_metric']):.4f} vs {max(scores):.4f}")
