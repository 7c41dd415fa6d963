"""Synthetic viewpoints and reprojection of per-view depth into a reference camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Intrinsics, PerturbationSpec, Pose, backproject_map, perturb_pose, project_points
from .maps import VARIANCE_FLOOR, DepthMap, VarianceMap


@dataclass
class SyntheticView:
    pose: Pose
    depth: DepthMap
    hole_fraction: float


@dataclass
class RenderedView:
    pose: Pose
    depth: DepthMap
    variance: VarianceMap


def forward_warp(
    depth: DepthMap,
    intr: Intrinsics,
    src_pose: Pose,
    dst_pose: Pose,
    payload: np.ndarray | None = None,
) -> tuple[DepthMap, np.ndarray]:
    """Splat ``depth`` into ``dst_pose`` with a nearest-pixel z-buffer.

    Returns the warped depth (camera z of ``dst_pose``) and the payload
    carried by the winning source pixel of each target pixel (NaN in holes).
    """
    if payload is None:
        payload = np.zeros(depth.shape)
    src = np.where(depth.valid, depth.values, np.nan)
    points = backproject_map(intr, src_pose, src)
    u, v, z = project_points(intr, dst_pose, points)
    z = np.where(depth.valid, z, np.nan)
    out, carried, filled = _kernels.zbuffer_splat(
        u.ravel(), v.ravel(), z.ravel(), np.asarray(payload, dtype=np.float64).ravel(), intr.height, intr.width
    )
    return DepthMap(out, filled), carried


def synthesize_views(
    depth: DepthMap, intr: Intrinsics, base: Pose, n_views: int, spec: PerturbationSpec, first_index: int = 0
) -> list[SyntheticView]:
    if n_views < 1:
        raise ValueError("need at least one view")
    if not depth.valid.any():
        raise ValueError("source depth has no valid pixels")
    views = []
    for i in range(first_index, first_index + n_views):
        pose = perturb_pose(base, spec, i)
        warped, _ = forward_warp(depth, intr, base, pose)
        views.append(SyntheticView(pose, warped, 1.0 - warped.valid.mean()))
    return views


@dataclass
class CandidateSet:
    """Per-pixel candidates from each view, stacked as (K, H, W) arrays.

    Each view deposits at most one candidate per pixel, so the list for a
    pixel ``x`` is ``mu[valid[:, y, x], y, x]`` paired with ``var``.
    """

    mu: np.ndarray
    var: np.ndarray
    valid: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.valid.sum(axis=0)

    def at(self, u: int, v: int) -> list[tuple[float, float]]:
        sel = self.valid[:, v, u]
        return list(zip(self.mu[sel, v, u].tolist(), self.var[sel, v, u].tolist()))


def reproject_to_reference(rendered: list[RenderedView], intr: Intrinsics, ref: Pose) -> CandidateSet:
    """Move each view's (depth, variance) into the reference camera.

    Depth is re-expressed as reference-camera z; variance is carried unchanged
    and floored.
    """
    h, w = intr.shape
    mu = np.full((len(rendered), h, w), np.nan)
    var = np.full((len(rendered), h, w), np.nan)
    for j, view in enumerate(rendered):
        if view.depth.shape != (h, w) or view.variance.shape != (h, w):
            raise ValueError(f"view {j} does not match the reference intrinsics")
        valid = view.depth.valid & view.variance.valid
        src = DepthMap(view.depth.values, valid)
        warped, carried = forward_warp(src, intr, view.pose, ref, payload=view.variance.values)
        mu[j] = warped.values
        var[j] = np.where(warped.valid, np.maximum(carried, VARIANCE_FLOOR), np.nan)
    return CandidateSet(mu=mu, var=var, valid=np.isfinite(mu))
