"""Attention-only point cloud classification and retrieval toolkit."""

from .data import (
    LabeledDataset,
    PointCloud,
    SamplingSpec,
    augment,
    farthest_point_sample,
    knn_indices,
    normalize_unit_sphere,
    uniform_sample,
)
from .gradcheck import GradCheckReport, gradient_check
from .model import (
    ForwardResult,
    ForwardTrace,
    ModelConfig,
    ModelParams,
    PointTransformer,
    RoutingResult,
    adaptive_k,
    count_parameters,
    embed_points,
    forward,
    glu,
    group_features,
    group_route,
    iterative_transformer,
    multi_head_attention,
    routing_loss,
    sdp_attention,
    smooth_cross_entropy,
    soft_routing_loss,
    total_loss,
    weighted_aggregate,
)
from .optim import Adam
from .tensor import Tape, Tensor, backward

__all__ = [
    "Adam",
    "ForwardResult",
    "ForwardTrace",
    "GradCheckReport",
    "LabeledDataset",
    "ModelConfig",
    "ModelParams",
    "PointCloud",
    "PointTransformer",
    "RoutingResult",
    "SamplingSpec",
    "Tape",
    "Tensor",
    "adaptive_k",
    "augment",
    "backward",
    "count_parameters",
    "embed_points",
    "farthest_point_sample",
    "forward",
    "glu",
    "gradient_check",
    "group_features",
    "group_route",
    "iterative_transformer",
    "knn_indices",
    "multi_head_attention",
    "normalize_unit_sphere",
    "routing_loss",
    "sdp_attention",
    "smooth_cross_entropy",
    "soft_routing_loss",
    "total_loss",
    "uniform_sample",
    "weighted_aggregate",
]

__version__ = "0.1.0"
