"""Refine monocular depth maps with rendered-depth uncertainty and Gaussian fusion."""

from ._kernels import BACKEND
from .fusion import (
    ABLATIONS,
    FieldViewSource,
    FusionConfig,
    InjectedViewSource,
    RefinedDepth,
    aggregate_views,
    bayes_fuse,
    estimate_prior_variance,
    fit_affine_wls,
    fuse_once,
    refine,
)
from .geometry import Intrinsics, PerturbationSpec, Pose, Ray, backproject, perturb_pose, pixel_to_ray, project
from .maps import DepthMap, VarianceMap
from .metrics import MetricsReport, evaluate
from .scene import AnalyticScene, Box, Plane, Sphere, box_in_room, softness_panels
from .simulate import MonoCorruption, corrupt_depth, ground_truth_depth
from .views import CandidateSet, RenderedView, forward_warp, reproject_to_reference, synthesize_views
from .volume import depth_moments, render_depth_map, sample_ray, termination_weights

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "BACKEND", "AnalyticScene", "Box", "CandidateSet", "DepthMap", "FieldViewSource",
    "FusionConfig", "InjectedViewSource", "Intrinsics", "MetricsReport", "MonoCorruption",
    "PerturbationSpec", "Plane", "Pose", "Ray", "RefinedDepth", "RenderedView", "Sphere", "VarianceMap",
    "aggregate_views", "backproject", "bayes_fuse", "box_in_room", "corrupt_depth", "depth_moments",
    "estimate_prior_variance", "evaluate", "fit_affine_wls", "forward_warp", "fuse_once",
    "ground_truth_depth", "perturb_pose", "pixel_to_ray", "project", "refine", "render_depth_map",
    "reproject_to_reference", "sample_ray", "softness_panels", "synthesize_views", "termination_weights",
]
