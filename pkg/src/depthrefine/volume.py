"""Ray sampling, ray-termination distribution and rendered depth moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Intrinsics, Pose, Ray, pixel_rays
from .maps import VARIANCE_FLOOR, DepthMap, VarianceMap
from .scene import DensityField

WEIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class RaySamples:
    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if not (self.t.shape == self.delta.shape == self.sigma.shape):
            raise ValueError("t, delta and sigma must have equal lengths")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")
        if np.any(self.delta <= 0) or np.any(self.sigma < 0):
            raise ValueError("delta must be > 0 and sigma >= 0")


@dataclass(frozen=True)
class TerminationStats:
    weights: np.ndarray
    total_weight: float
    p: np.ndarray | None
    mu: float | None = None
    var: float | None = None

    @property
    def terminates(self) -> bool:
        return self.p is not None


def _sample_distances(near, far, n_samples, jitter_u=None):
    """Stratified distances of shape (..., M); midpoints unless jitter offsets are given."""
    width = (far - near) / n_samples
    lower = near + width * np.arange(n_samples)
    frac = 0.5 if jitter_u is None else jitter_u
    t = lower + width * frac
    delta = np.empty_like(t)
    delta[..., :-1] = np.diff(t, axis=-1)
    delta[..., -1] = width
    return t, delta


def _check_bounds(near, far, n_samples):
    if not (0 < near < far):
        raise ValueError(f"need 0 < near < far, got near={near}, far={far}")
    if n_samples < 2:
        raise ValueError("need at least 2 samples per ray")


def sample_ray(
    ray: Ray,
    near: float,
    far: float,
    n_samples: int,
    field: DensityField,
    jitter: bool = False,
    rng_key: int = 0,
) -> RaySamples:
    _check_bounds(near, far, n_samples)
    u = np.random.default_rng(rng_key).uniform(size=n_samples) if jitter else None
    t, delta = _sample_distances(near, far, n_samples, u)
    sigma = np.asarray(field.evaluate(ray.at(t)), dtype=np.float64)
    return RaySamples(t=t, delta=delta, sigma=sigma)


def termination_weights(samples: RaySamples, weight_floor: float = WEIGHT_FLOOR) -> TerminationStats:
    """Opacity, transmittance and the normalised termination distribution.

    ``p`` is left as ``None`` for rays whose total weight falls below
    ``weight_floor``; those rays carry no depth.
    """
    optical = samples.sigma * samples.delta
    alpha = -np.expm1(-optical)
    transmittance = np.exp(-(np.cumsum(optical) - optical))
    weights = transmittance * alpha
    total = float(weights.sum())
    p = weights / total if total >= weight_floor else None
    return TerminationStats(weights=weights, total_weight=total, p=p)


def depth_moments(stats: TerminationStats, t: np.ndarray) -> tuple[float, float]:
    if stats.p is None:
        raise ValueError("ray does not terminate; depth moments undefined")
    mu = float(np.sum(stats.p * t))
    m2 = float(np.sum(stats.p * t * t))
    return mu, max(0.0, m2 - mu * mu)


@dataclass
class RayBatch:
    """Samples for many rays at once, shape (R, M)."""

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray


def sample_rays(origins, dirs, near, far, n_samples, field, jitter=False, rng_key=0) -> RayBatch:
    _check_bounds(near, far, n_samples)
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = dirs.shape[0]
    u = np.random.default_rng(rng_key).uniform(size=(n, n_samples)) if jitter else None
    t, delta = _sample_distances(near, far, n_samples, u)
    t = np.broadcast_to(t, (n, n_samples))
    delta = np.broadcast_to(delta, (n, n_samples))
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    sigma = np.asarray(field.evaluate(points), dtype=np.float64)
    return RayBatch(t=np.ascontiguousarray(t), delta=np.ascontiguousarray(delta), sigma=sigma)


def bin_variance(near: float, far: float, n_samples: int) -> float:
    """Variance of a position uniform over one stratified sampling bin."""
    width = (far - near) / n_samples
    return width * width / 12.0


def render_depth_map(
    field: DensityField,
    intr: Intrinsics,
    pose: Pose,
    near: float = 0.1,
    far: float = 10.0,
    n_samples: int = 64,
    rng_key: int = 0,
    jitter: bool = False,
    weight_floor: float = WEIGHT_FLOOR,
    variance_floor: float | None = None,
    chunk_rays: int = 1 << 15,
) -> tuple[DepthMap, VarianceMap]:
    """Render per-pixel depth and ray-termination variance.

    Moments are taken along the ray and converted to camera-z depth, so the
    variance picks up the square of the same per-pixel factor. Non-terminating
    rays are invalid in both maps.

    ``variance_floor`` (along-ray, m^2) defaults to ``bin_variance(near, far,
    n_samples)``: a ray absorbed within one sample reports zero spread, but its
    depth is only resolved to within a sampling bin.
    """
    _check_bounds(near, far, n_samples)
    dirs, z_per_t = pixel_rays(intr, pose)
    dirs = dirs.reshape(-1, 3)
    n = dirs.shape[0]
    mu = np.empty(n)
    var = np.empty(n)
    rng = np.random.default_rng(rng_key)
    origin = pose.translation[None, :]
    for start in range(0, n, chunk_rays):
        stop = min(start + chunk_rays, n)
        key = int(rng.integers(2**63)) if jitter else 0
        batch = sample_rays(origin, dirs[start:stop], near, far, n_samples, field, jitter, key)
        _, mu[start:stop], var[start:stop] = _kernels.termination_moments(
            batch.sigma, batch.delta, batch.t, weight_floor
        )
    if variance_floor is None:
        variance_floor = bin_variance(near, far, n_samples)
    var = np.maximum(var, variance_floor)
    scale = z_per_t.reshape(-1)
    valid = np.isfinite(mu).reshape(intr.shape)
    depth = (mu * scale).reshape(intr.shape)
    variance = np.maximum(var * scale * scale, VARIANCE_FLOOR).reshape(intr.shape)
    return DepthMap(depth, valid), VarianceMap(variance, valid)
