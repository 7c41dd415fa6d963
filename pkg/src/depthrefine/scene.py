"""Analytic density fields standing in for a trained radiance field.

Each primitive owns a signed distance function and a density shell
``peak_density * max(0, 1 - |sd| / softness)`` around its surface. A scene
composes primitives by pointwise maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geometry import Intrinsics, Pose, pixel_rays


class DensityField(Protocol):
    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Non-negative density (1/m) at world points of shape (..., 3)."""
        ...


def _vec3(x, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.size != 3:
        raise ValueError(f"{name} needs 3 components")
    return a


@dataclass(frozen=True)
class Primitive:
    peak_density: float
    softness: float

    def __post_init__(self):
        if self.peak_density < 0:
            raise ValueError("peak_density must be >= 0")
        if not self.softness > 0:
            raise ValueError("softness must be > 0")

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def density(self, points: np.ndarray) -> np.ndarray:
        sd = self.signed_distance(points)
        return self.peak_density * np.maximum(0.0, 1.0 - np.abs(sd) / self.softness)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray, t_min: float) -> np.ndarray:
        """Smallest ``t > t_min`` where the ray crosses the surface, else inf."""
        raise NotImplementedError


@dataclass(frozen=True)
class Plane(Primitive):
    normal: tuple = (0.0, 0.0, -1.0)
    offset: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        n = _vec3(self.normal, "normal")
        object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))

    def signed_distance(self, points):
        return np.asarray(points) @ np.asarray(self.normal) - self.offset

    def intersect(self, origins, dirs, t_min):
        n = np.asarray(self.normal)
        denom = dirs @ n
        num = self.offset - origins @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where(np.isfinite(t) & (t > t_min), t, np.inf)


@dataclass(frozen=True)
class Sphere(Primitive):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "center", tuple(_vec3(self.center, "center")))
        if not self.radius > 0:
            raise ValueError("radius must be > 0")

    def signed_distance(self, points):
        return np.linalg.norm(np.asarray(points) - np.asarray(self.center), axis=-1) - self.radius

    def intersect(self, origins, dirs, t_min):
        oc = origins - np.asarray(self.center)
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - root, -b + root
        t = np.where(t0 > t_min, t0, np.where(t1 > t_min, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)


@dataclass(frozen=True)
class Box(Primitive):
    center: tuple = (0.0, 0.0, 0.0)
    half_extents: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "center", tuple(_vec3(self.center, "center")))
        h = _vec3(self.half_extents, "half_extents")
        if np.any(h <= 0):
            raise ValueError("half_extents must be > 0")
        object.__setattr__(self, "half_extents", tuple(h))

    def signed_distance(self, points):
        q = np.abs(np.asarray(points) - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def intersect(self, origins, dirs, t_min):
        lo = np.asarray(self.center) - np.asarray(self.half_extents)
        hi = np.asarray(self.center) + np.asarray(self.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            ta = (lo - origins) * inv
            tb = (hi - origins) * inv
        ta = np.where(np.isnan(ta), -np.inf, ta)
        tb = np.where(np.isnan(tb), np.inf, tb)
        t_enter = np.max(np.minimum(ta, tb), axis=-1)
        t_exit = np.min(np.maximum(ta, tb), axis=-1)
        hit = t_enter <= t_exit
        t = np.where(t_enter > t_min, t_enter, np.where(t_exit > t_min, t_exit, np.inf))
        return np.where(hit, t, np.inf)


PRIMITIVE_TYPES = {"plane": Plane, "sphere": Sphere, "box": Box}


class AnalyticScene:
    def __init__(self, primitives: Sequence[Primitive]):
        self.primitives = tuple(primitives)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        out = np.zeros(points.shape[:-1])
        for prim in self.primitives:
            np.maximum(out, prim.density(points), out=out)
        return out

    def ray_hit_distance(self, origins: np.ndarray, dirs: np.ndarray, t_min: float = 0.0) -> np.ndarray:
        """Exact first surface crossing along each ray (inf on a miss)."""
        t = np.full(np.broadcast_shapes(origins.shape, dirs.shape)[:-1], np.inf)
        for prim in self.primitives:
            np.minimum(t, prim.intersect(origins, dirs, t_min), out=t)
        return t

    def exact_depth(self, intr: Intrinsics, pose: Pose, near: float = 0.0, far: float = np.inf):
        """Camera-z depth of the nearest surface per pixel; NaN where no surface in range.

        This is the zero-softness limit of the rendered depth, used for ground truth.
        """
        dirs, z_per_t = pixel_rays(intr, pose)
        origins = np.broadcast_to(pose.translation, dirs.shape)
        t = self.ray_hit_distance(origins, dirs, near)
        t = np.where(t <= far, t, np.nan)
        return t * z_per_t

    def with_softness(self, softness: float, peak_density: float | None = None) -> "AnalyticScene":
        from dataclasses import replace

        return AnalyticScene(
            [
                replace(p, softness=softness, peak_density=p.peak_density if peak_density is None else peak_density)
                for p in self.primitives
            ]
        )

    def to_dict(self) -> dict:
        out = []
        for p in self.primitives:
            kind = next(k for k, v in PRIMITIVE_TYPES.items() if type(p) is v)
            d = {"type": kind, "peak_density": p.peak_density, "softness": p.softness}
            if isinstance(p, Plane):
                d.update(normal=list(p.normal), offset=p.offset)
            elif isinstance(p, Sphere):
                d.update(center=list(p.center), radius=p.radius)
            else:
                d.update(center=list(p.center), half_extents=list(p.half_extents))
            out.append(d)
        return {"primitives": out}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        prims = []
        for i, spec in enumerate(d["primitives"]):
            spec = dict(spec)
            kind = spec.pop("type", None)
            if kind not in PRIMITIVE_TYPES:
                raise ValueError(f"primitives[{i}]: unknown type {kind!r}")
            try:
                prims.append(PRIMITIVE_TYPES[kind](**spec))
            except TypeError as exc:
                raise ValueError(f"primitives[{i}]: {exc}") from None
        return cls(prims)


class EmptyField:
    def evaluate(self, points):
        return np.zeros(np.asarray(points).shape[:-1])


def box_in_room(peak_density: float = 300.0, softness: float = 0.018) -> AnalyticScene:
    """Small alcove seen from the origin: walls, a box, a sphere and three thin vertical slats.

    With a 90 degree horizontal field of view every visible surface lies
    between about 1.1 m and 2.7 m along the ray. The slats supply the closely
    spaced depth edges that blur smears together.
    """
    kw = dict(peak_density=peak_density, softness=softness)
    slats = [Box(center=(0.1 + 0.25 * k, 0.0, 1.45), half_extents=(0.045, 0.9, 0.045), **kw) for k in range(3)]
    return AnalyticScene(
        [
            Box(center=(0.0, 0.0, 0.6), half_extents=(1.2, 0.9, 1.6), **kw),
            Box(center=(-0.45, 0.65, 1.7), half_extents=(0.3, 0.25, 0.25), **kw),
            Sphere(center=(0.5, -0.15, 1.75), radius=0.25, **kw),
            *slats,
        ]
    )


def softness_panels(
    levels: Sequence[float] = (0.03, 0.075, 0.045, 0.12, 0.06, 0.09),
    crisp_softness: float = 0.015,
    optical_depth: float = 5.4,
    near_depth: float = 1.95,
    far_depth: float = 2.15,
    hfov_deg: float = 60.0,
    soft_share: float = 0.3,
) -> AnalyticScene:
    """Fronto-parallel wall strips whose shell softness varies across the image.

    Crisp strips alternate with narrow strips of graded softness; strip depth
    ramps linearly from ``near_depth`` to ``far_depth`` left to right. Peak
    density is ``optical_depth / softness`` so every strip is equally opaque.
    Strip boundaries are laid out for a camera at the origin looking down +z
    with horizontal field of view ``hfov_deg``.
    """
    if not 0 < soft_share < 1:
        raise ValueError("soft_share must lie in (0, 1)")
    n = len(levels)
    half = np.tan(np.radians(hfov_deg) / 2)
    w_soft, w_crisp = soft_share / n, (1 - soft_share) / (n + 1)
    widths, softs = [], []
    for s in levels:
        widths += [w_crisp, w_soft]
        softs += [crisp_softness, float(s)]
    widths.append(w_crisp)
    softs.append(crisp_softness)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    depths = np.linspace(near_depth, far_depth, len(softs))
    prims = []
    for k, (s, z) in enumerate(zip(softs, depths)):
        lo = (2 * edges[k] - 1) * half * z
        hi = (2 * edges[k + 1] - 1) * half * z
        # outermost strips overhang the frustum so perturbed views stay covered
        if k == 0:
            lo -= 0.1 * z
        if k == len(softs) - 1:
            hi += 0.1 * z
        prims.append(
            Box(
                center=((lo + hi) / 2, 0.0, z + 0.1),
                half_extents=((hi - lo) / 2, 1.5, 0.1),
                peak_density=optical_depth / s,
                softness=s,
            )
        )
    return AnalyticScene(prims)
