"""Device identification on a labelled synthetic capture.

Feature importance picks the columns, a random forest is cross-validated,
and window predictions of one device are averaged over n observations.
"""

# %%
import numpy as np

from scent.ident import ModelSpec, feature_importance, kfold_cv, pretty_feature_name, train_forest
from scent.ident.synthetic import synthetic_dataset

ds = synthetic_dataset(duration=1800, seed=0, window=5.0)
print(len(ds), "windows;", ds.class_counts())

# %%
forest = train_forest(ds.X, ds.y, ds.n_classes, n_trees=50, seed=0)
ranked, selected = feature_importance(forest, threshold=0.06, names=ds.feature_names)
for name, score in ranked[:8]:
    print(f"{score:.3f}  {pretty_feature_name(name)}")
print("selected:", selected)

# %%
res = kfold_cv(ds.select(selected), ModelSpec("forest", {"n_trees": 50}), k=10, seed=0)
print(res.report(1).table())

# %%
curve = res.macro_f1_curve([1, 2, 5, 10, 20])
for n, f1 in curve.items():
    print(f"n={n:2d}  macro-F1 {f1:.3f}")

# %%
# a single tree and kNN on the same columns, for comparison
for kind in ("tree", "knn"):
    r = kfold_cv(ds.select(selected), ModelSpec(kind), k=10, seed=0)
    print(kind, np.round([r.report(n).macro_f1 for n in (1, 20)], 3))
