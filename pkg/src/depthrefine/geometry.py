"""Pinhole camera model, rigid poses and bounded pose perturbations.

Conventions used throughout the package:

* ``Pose`` is world-from-camera: ``x_world = R @ x_cam + t``, so ``t`` is the
  camera centre in world coordinates.
* Camera frame is x right, y down, z forward (optical axis).
* Pixel centres sit on integer coordinates; ``u`` indexes columns, ``v`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.height), int(self.width))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixel centres as float arrays ``(u, v)`` of shape (H, W)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.astype(np.float64), v.astype(np.float64)

    def camera_directions(self, u, v) -> np.ndarray:
        """Unnormalised camera-frame directions ``((u-cx)/fx, (v-cy)/fy, 1)``."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height)


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation has determinant != 1")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        return np.asarray(points_cam) @ self.rotation.T + self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        return (np.asarray(points_world) - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        """Accepts the rotation as nested 3x3 rows or a flat row-major 9-list."""
        rot = np.asarray(d.get("rotation", np.eye(3)), dtype=np.float64)
        if rot.size != 9:
            raise ValueError(f"rotation needs 9 entries, got {rot.size}")
        trans = np.asarray(d.get("translation", np.zeros(3)), dtype=np.float64)
        if trans.size != 3:
            raise ValueError(f"translation needs 3 entries, got {trans.size}")
        return cls(rot.reshape(3, 3), trans.reshape(3))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class PerturbationSpec:
    max_rotation_deg: float = 2.0
    max_translation_m: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0 or self.max_translation_m < 0:
            raise ValueError("perturbation bounds must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


def pixel_to_ray(intr: Intrinsics, pose: Pose, px) -> Ray:
    u, v = px
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel {px} outside image")
    d_cam = intr.camera_directions(u, v)
    d = pose.rotation @ d_cam
    return Ray(origin=pose.translation.copy(), direction=d / np.linalg.norm(d))


def pixel_rays(intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Unit world directions (H, W, 3) for every pixel, plus the per-pixel
    factor ``z / t`` converting distance along the ray into camera depth."""
    u, v = intr.pixel_grid()
    d_cam = intr.camera_directions(u, v)
    norm = np.linalg.norm(d_cam, axis=-1)
    dirs = (d_cam / norm[..., None]) @ pose.rotation.T
    return dirs, 1.0 / norm


def project(intr: Intrinsics, pose: Pose, point):
    """Project a world point; returns ``((u, v), depth)`` or ``None`` behind the camera."""
    x, y, z = pose.to_camera(np.asarray(point, dtype=np.float64))
    if z <= 0:
        return None
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy), float(z)


def project_points(intr: Intrinsics, pose: Pose, points: np.ndarray):
    """Vectorised :func:`project`; returns ``u, v, z`` with NaN pixels where ``z <= 0``."""
    cam = pose.to_camera(points)
    z = cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = np.where(in_front, intr.fx * cam[..., 0] / safe_z + intr.cx, np.nan)
    v = np.where(in_front, intr.fy * cam[..., 1] / safe_z + intr.cy, np.nan)
    return u, v, z


def backproject(intr: Intrinsics, pose: Pose, px, depth: float) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = px
    cam = np.array([depth * (u - intr.cx) / intr.fx, depth * (v - intr.cy) / intr.fy, depth])
    return pose.rotation @ cam + pose.translation


def backproject_map(intr: Intrinsics, pose: Pose, depth: np.ndarray) -> np.ndarray:
    """World points (H, W, 3) for a full depth grid (invalid entries propagate)."""
    u, v = intr.pixel_grid()
    cam = intr.camera_directions(u, v) * np.asarray(depth)[..., None]
    return pose.to_world(cam)


def _perturbation_rng(seed: int, index: int) -> np.random.Generator:
    # Philox is counter-based; keying on (seed, index) gives platform-stable streams.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def perturb_pose(base: Pose, spec: PerturbationSpec, index: int) -> Pose:
    """Rotate the camera about its own optical centre and offset it.

    Angle is uniform in ``[0, max_rotation_deg]`` about a uniform random axis;
    the offset is uniform in the ball of radius ``max_translation_m`` and is
    expressed in the base camera frame. Rotation and translation are drawn
    independently.
    """
    if spec.max_rotation_deg == 0 and spec.max_translation_m == 0:
        return base
    rng = _perturbation_rng(spec.seed, index)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, spec.max_rotation_deg))
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    radius = spec.max_translation_m * rng.uniform() ** (1.0 / 3.0)

    d_rot = Rotation.from_rotvec(angle * axis).as_matrix()
    rot = base.rotation @ d_rot
    # one SVD step removes accumulated drift from orthonormality
    uu, _, vt = np.linalg.svd(rot)
    rot = uu @ vt
    trans = base.translation + base.rotation @ (radius * direction)
    return Pose(rot, trans)


def relative_rotation_deg(a: Pose, b: Pose) -> float:
    rel = a.rotation.T @ b.rotation
    cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))
