"""Full-reference point cloud quality assessment from local PCA descriptors."""

__version__ = "0.1.0"

from .errors import (
    EvaluationError,
    InputError,
    LayoutMismatch,
    ModelError,
    PCQAError,
)
from .evaluation import SubjectiveDataset, generate_splits, krasula_analysis, load_manifest, plcc, srocc
from .pointcloud import ColorSpace, PointCloud, load_ply, merge_duplicates, rgb_to_ycbcr, write_ply
from .predictors import (
    DEFAULT_K,
    EPS,
    FEATURE_NAMES,
    LAYOUT_VERSION,
    FeatureVector,
    extract_features,
    prepare_reference,
)
from .regression import ForestParams, QualityModel, load_model, predict, rfe_select, save_model, train_forest

__all__ = [
    "ColorSpace",
    "DEFAULT_K",
    "EPS",
    "EvaluationError",
    "FEATURE_NAMES",
    "FeatureVector",
    "ForestParams",
    "InputError",
    "LAYOUT_VERSION",
    "LayoutMismatch",
    "ModelError",
    "PCQAError",
    "PointCloud",
    "QualityModel",
    "SubjectiveDataset",
    "extract_features",
    "generate_splits",
    "krasula_analysis",
    "load_manifest",
    "load_model",
    "load_ply",
    "merge_duplicates",
    "plcc",
    "predict",
    "prepare_reference",
    "rfe_select",
    "rgb_to_ycbcr",
    "save_model",
    "srocc",
    "train_forest",
    "write_ply",
]
