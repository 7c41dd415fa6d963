"""Ground truth and simulated monocular priors for analytic scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Intrinsics, Pose
from .maps import DepthMap
from .scene import AnalyticScene


@dataclass(frozen=True)
class MonoCorruption:
    """Blur (px), then affine ``scale * d + shift``, then additive Gaussian noise (m)."""

    blur_px: float = 3.0
    noise_m: float = 0.02
    scale: float = 1.1
    shift: float = 0.2

    def __post_init__(self):
        if self.blur_px < 0 or self.noise_m < 0:
            raise ValueError("blur and noise must be non-negative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def ground_truth_depth(scene: AnalyticScene, intr: Intrinsics, pose: Pose, near: float = 0.0) -> DepthMap:
    return DepthMap.from_array(scene.exact_depth(intr, pose, near))


def corrupt_depth(gt: DepthMap, corruption: MonoCorruption, seed: int = 0) -> DepthMap:
    """Smooth, rescale and noise a depth map the way monocular estimators err.

    Invalid pixels are filled by nearest valid values before blurring and stay
    invalid in the output.
    """
    values = gt.values
    if not gt.valid.all():
        idx = ndimage.distance_transform_edt(~gt.valid, return_distances=False, return_indices=True)
        values = values[tuple(idx)]
    if corruption.blur_px > 0:
        values = ndimage.gaussian_filter(values, corruption.blur_px, mode="nearest")
    values = corruption.scale * values + corruption.shift
    if corruption.noise_m > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, corruption.noise_m, size=values.shape)
    valid = gt.valid & (values > 0)
    return DepthMap(np.where(valid, values, np.nan), valid)
