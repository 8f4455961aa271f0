"""Point-cloud classification and part segmentation with an
inductive-bias-aided transformer, on a self-contained float64 autodiff core.
"""

from . import autodiff
from .autodiff import Module, Parameter, Tensor, backward
from .config import RunConfig, load_config
from .data import Dataset, gen_synthetic, load_off, load_xyz, normalize_cloud
from .estimator import PointCloudClassifier, PointPartSegmenter
from .geometry import NeighborGraph, PointCloud, knn_graph, relative_geometry, sample_points
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import (AblationSwitches, AttentiveFeaturePooling, IbtLayer,
                     LocalityAwareTransformer, RelativePositionEncoding)
from .model import IbtClassifier, IbtConfig, IbtSegmenter
from .trainer import (MetricsReport, SgdMomentum, cross_entropy,
                      evaluate_classification, evaluate_segmentation, train)

__version__ = "0.1.0"

__all__ = [
    "AblationSwitches", "AttentiveFeaturePooling", "Dataset", "GradCheckReport",
    "IbtClassifier", "IbtConfig", "IbtLayer", "IbtSegmenter",
    "LocalityAwareTransformer", "MetricsReport", "Module", "NeighborGraph",
    "Parameter", "PointCloud", "PointCloudClassifier", "PointPartSegmenter",
    "RelativePositionEncoding", "RunConfig", "SgdMomentum", "Tensor",
    "autodiff", "backward", "cross_entropy", "evaluate_classification",
    "evaluate_segmentation", "finite_diff_check", "gen_synthetic", "knn_graph",
    "load_config", "load_off", "load_xyz", "normalize_cloud",
    "relative_geometry", "sample_points", "train",
]
