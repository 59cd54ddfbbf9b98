"""Cross-validation, per-class metrics and multi-window observation combining."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .data import Dataset
from .knn import train_knn
from .trees import train_forest, train_tree


class ClassTooSmall(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "forest"  # "tree" | "forest" | "knn"
    params: dict = field(default_factory=dict)

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int, seed: int = 0):
        p = dict(self.params)
        if self.kind == "tree":
            return train_tree(X, y, n_classes, **p)
        if self.kind == "forest":
            p.setdefault("seed", seed)
            return train_forest(X, y, n_classes, **p)
        if self.kind == "knn":
            return train_knn(X, y, n_classes, **p)
        raise ValueError(f"unknown model kind {self.kind!r}")


@dataclass
class EvalReport:
    classes: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    accuracy: float
    macro: dict[str, float]
    weighted: dict[str, float]
    confusion: list[list[int]]
    n_obs: int = 1
    folds: list[dict[str, float]] = field(default_factory=list)

    @property
    def macro_f1(self) -> float:
        return self.macro["f1"]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def table(self) -> str:
        w = max(len(c) for c in self.classes + ["Weighted Avg."])
        lines = [f"{'':{w}}  precision  recall  f1-score  support"]
        for c, p, r, f, s in zip(self.classes, self.precision, self.recall, self.f1, self.support):
            lines.append(f"{c:{w}}  {p:9.2f}  {r:6.2f}  {f:8.2f}  {s:7d}")
        total = sum(self.support)
        lines.append(f"{'Accuracy':{w}}  {'':9}  {'':6}  {self.accuracy:8.2f}  {total:7d}")
        for name, d in (("Macro Avg.", self.macro), ("Weighted Avg.", self.weighted)):
            lines.append(f"{name:{w}}  {d['precision']:9.2f}  {d['recall']:6.2f}  {d['f1']:8.2f}  {total:7d}")
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def per_class_scores(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 and support per class; 0 wherever a ratio is 0/0."""
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    support = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1, support.astype(np.int64)


def macro_average(values: Sequence[float]) -> float:
    return float(np.mean(values))


def compute_metrics(cm: np.ndarray, classes: Optional[Sequence[str]] = None, n_obs: int = 1) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    precision, recall, f1, support = per_class_scores(cm)
    total = support.sum()
    w = support / total if total else np.zeros_like(support, dtype=float)
    return EvalReport(
        classes=list(classes) if classes is not None else [str(i) for i in range(len(cm))],
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        accuracy=float(np.trace(cm) / total) if total else 0.0,
        macro={"precision": macro_average(precision), "recall": macro_average(recall), "f1": macro_average(f1)},
        weighted={"precision": float(w @ precision), "recall": float(w @ recall), "f1": float(w @ f1)},
        confusion=cm.tolist(),
        n_obs=n_obs,
    )


def combine_observations(proba: np.ndarray, devices: Sequence, n: int, order: Optional[Sequence] = None,
                         labels: Optional[Sequence[int]] = None):
    """Average class probabilities over consecutive groups of ``n`` windows per device.

    Rows of each device are taken in ``order`` (e.g. window start time); the
    last group of a device may be shorter than ``n``.  Returns
    ``(combined_proba, predicted, group_labels, group_devices)``; predicted
    classes are the argmax, ties going to the lowest class index.
    ``group_labels`` is None when ``labels`` is not given.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    proba = np.asarray(proba, dtype=float)
    devices = np.asarray(devices)
    order = np.arange(len(proba)) if order is None else np.asarray(order)
    rows_by_dev: dict = {}
    for i in np.lexsort((np.arange(len(proba)), order)):
        rows_by_dev.setdefault(devices[i], []).append(i)
    out, glabels, gdevs = [], [], []
    for dev in sorted(rows_by_dev, key=lambda d: rows_by_dev[d][0]):
        rows = rows_by_dev[dev]
        for start in range(0, len(rows), n):
            grp = rows[start:start + n]
            out.append(proba[grp].mean(axis=0))
            gdevs.append(dev)
            if labels is not None:
                glabels.append(int(np.asarray(labels)[grp[0]]))
    combined = np.array(out).reshape(-1, proba.shape[1])
    return combined, np.argmax(combined, axis=1), (np.array(glabels) if labels is not None else None), gdevs


def stratified_folds(y: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Fold index per row; each class is spread round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        rows = np.nonzero(y == c)[0]
        if len(rows) < k:
            warnings.warn(f"class {c} has {len(rows)} rows, fewer than {k} folds", ClassTooSmall, stacklevel=3)
        rows = rows[rng.permutation(len(rows))]
        fold[rows] = (offset + np.arange(len(rows))) % k
        offset = (offset + len(rows)) % k
    return fold


@dataclass
class CVResult:
    dataset: Dataset
    proba: np.ndarray  # out-of-fold class probabilities
    fold: np.ndarray
    k: int

    def report(self, n: int = 1) -> EvalReport:
        ds = self.dataset
        C = ds.n_classes
        _, pred, glab, _ = combine_observations(self.proba, ds.devices, n, ds.windows, ds.y)
        rep = compute_metrics(confusion_matrix(glab, pred, C), ds.classes, n_obs=n)
        for f in range(self.k):
            rows = np.nonzero(self.fold == f)[0]
            if len(rows) == 0:
                continue
            _, fp, fl, _ = combine_observations(self.proba[rows], ds.devices[rows], n, ds.windows[rows], ds.y[rows])
            fr = compute_metrics(confusion_matrix(fl, fp, C), ds.classes, n_obs=n)
            rep.folds.append({"fold": f, "rows": int(len(rows)), "accuracy": fr.accuracy, "macro_f1": fr.macro_f1})
        return rep

    def macro_f1_curve(self, ns: Sequence[int]) -> dict[int, float]:
        return {n: self.report(n).macro_f1 for n in ns}


def kfold_cv(ds: Dataset, spec: ModelSpec, k: int = 10, seed: int = 0) -> CVResult:
    """Stratified k-fold CV; every row is predicted once by a model that never saw it."""
    fold = stratified_folds(ds.y, k, seed)
    proba = np.zeros((len(ds), ds.n_classes))
    for f in range(k):
        test = fold == f
        if not test.any():
            continue
        train = ~test
        model = spec.fit(ds.X[train], ds.y[train], ds.n_classes, seed=seed + f)
        proba[test] = model.predict_proba(ds.X[test])
    return CVResult(ds, proba, fold, k)
