"""Device identification from windowed traffic features."""
from .data import UNLABELLED, Dataset, EmptyDataset, SchemaMismatch, load_and_clean, load_label_map, pretty_feature_name
from .evaluation import (
    ClassTooSmall,
    CVResult,
    EvalReport,
    ModelSpec,
    combine_observations,
    compute_metrics,
    confusion_matrix,
    kfold_cv,
    stratified_folds,
)
from .knn import KnnModel, knn_predict, train_knn
from .model_io import load_model, save_model
from .trees import DegenerateData, ForestModel, TreeModel, feature_importance, train_forest, train_tree

__all__ = [
    "UNLABELLED", "Dataset", "EmptyDataset", "SchemaMismatch", "load_and_clean", "load_label_map",
    "pretty_feature_name", "ClassTooSmall", "CVResult", "EvalReport", "ModelSpec", "combine_observations",
    "compute_metrics", "confusion_matrix", "kfold_cv", "stratified_folds", "KnnModel", "knn_predict",
    "train_knn", "load_model", "save_model", "DegenerateData", "ForestModel", "TreeModel",
    "feature_importance", "train_forest", "train_tree",
]
