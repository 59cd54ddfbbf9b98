"""JSON model files.

Layout: ``{"format": "scent-model", "version": 1, "kind": ..., "classes": [...],
"feature_names": [...], "model": {...}}`` where ``model`` holds the tree
arrays (``feature``, ``threshold``, ``left``, ``right``, ``value``,
``importance``), a list of such trees for a forest, or the stored training
matrix and scaling for kNN.
"""
from __future__ import annotations

import json
import os
from typing import Any, Sequence

import numpy as np

from .knn import KnnModel
from .trees import ForestModel, TreeModel

FORMAT = "scent-model"
VERSION = 1


def _tree_to_json(t: TreeModel) -> dict[str, Any]:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "importance": t.importance.tolist(),
    }


def _tree_from_json(d: dict, n_classes: int, n_features: int) -> TreeModel:
    return TreeModel(
        n_classes=n_classes,
        n_features=n_features,
        feature=np.array(d["feature"], dtype=np.int64),
        threshold=np.array(d["threshold"], dtype=float),
        left=np.array(d["left"], dtype=np.int64),
        right=np.array(d["right"], dtype=np.int64),
        value=np.array(d["value"], dtype=float).reshape(-1, n_classes),
        importance=np.array(d["importance"], dtype=float),
    )


def save_model(path: str | os.PathLike, model, classes: Sequence[str], feature_names: Sequence[str]) -> None:
    if isinstance(model, TreeModel):
        kind, body = "tree", _tree_to_json(model)
    elif isinstance(model, ForestModel):
        kind, body = "forest", {"trees": [_tree_to_json(t) for t in model.trees]}
    elif isinstance(model, KnnModel):
        kind, body = "knn", {"X": model.X.tolist(), "y": model.y.tolist(), "mean": model.mean.tolist(),
                             "scale": model.scale.tolist(), "k": model.k}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, "classes": list(classes),
           "feature_names": list(feature_names), "model": body}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path: str | os.PathLike):
    """Returns ``(model, classes, feature_names)``."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise ValueError(f"{path}: not a version {VERSION} {FORMAT} file")
    classes, names, body = doc["classes"], doc["feature_names"], doc["model"]
    C, d = len(classes), len(names)
    kind = doc["kind"]
    if kind == "tree":
        model = _tree_from_json(body, C, d)
    elif kind == "forest":
        model = ForestModel(C, d, [_tree_from_json(t, C, d) for t in body["trees"]])
    elif kind == "knn":
        model = KnnModel(np.array(body["X"], dtype=float).reshape(-1, d), np.array(body["y"], dtype=np.int64),
                         np.array(body["mean"], dtype=float), np.array(body["scale"], dtype=float), body["k"], C)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return model, classes, names
