"""Precision-weighted aggregation, affine calibration and Gaussian posterior fusion.

The refinement loop treats the monocular depth and the aggregated rendered
depth as two noisy Gaussian observations of the same surface. Rendered depth
is first mapped onto the monocular scale with a variance-weighted affine fit,
the monocular noise level is estimated from the calibrated residuals, and the
two are combined per pixel by their precisions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .geometry import Intrinsics, PerturbationSpec, Pose, perturb_pose
from .maps import VARIANCE_FLOOR, DepthMap, VarianceMap
from .scene import DensityField
from .views import CandidateSet, RenderedView, forward_warp, reproject_to_reference
from .volume import render_depth_map

log = logging.getLogger(__name__)

DEGENERACY_FLOOR = 1e-12

ABLATIONS = (
    "constant_nerf_variance",
    "min_aggregation",
    "skip_calibration",
    "fixed_prior_variance",
    "drop_monocular_prior",
)


@dataclass(frozen=True)
class FusionConfig:
    iterations: int = 2
    constant_nerf_variance: bool = False
    min_aggregation: bool = False
    skip_calibration: bool = False
    fixed_prior_variance: float | None = None
    drop_monocular_prior: bool = False
    variance_floor: float = VARIANCE_FLOOR
    degeneracy_floor: float = DEGENERACY_FLOOR

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.fixed_prior_variance is not None and not self.fixed_prior_variance > 0:
            raise ValueError("fixed_prior_variance must be > 0")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be > 0")

    def with_ablations(self, names, fixed_prior_variance: float | None = None) -> "FusionConfig":
        """Switch on ablations by name; ``fixed_prior_variance`` needs a value."""
        updates = {}
        for name in names:
            if name not in ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
            if name == "fixed_prior_variance":
                value = fixed_prior_variance if fixed_prior_variance is not None else self.fixed_prior_variance
                if value is None:
                    raise ValueError("fixed_prior_variance ablation needs a variance value")
                updates[name] = value
            else:
                updates[name] = True
        return replace(self, **updates)


@dataclass
class AggregatedDepth:
    mu: np.ndarray
    var: np.ndarray
    tau: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.tau > 0


@dataclass
class AffineCalibration:
    a: float
    b: float
    valid: bool
    sums: dict = field(default_factory=dict)


@dataclass
class IterationDiagnostics:
    iteration: int
    a: float | None
    b: float | None
    sigma_o2: float | None
    support_fraction: float
    hole_fraction: float | None
    calibrated: bool

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "a": self.a,
            "b": self.b,
            "sigma_o2": self.sigma_o2,
            "support_fraction": self.support_fraction,
            "hole_fraction": self.hole_fraction,
            "calibrated": self.calibrated,
        }


@dataclass
class RefinedDepth:
    depth: DepthMap
    variance: VarianceMap
    precision: np.ndarray | None = None
    diagnostics: list[IterationDiagnostics] = field(default_factory=list)


def aggregate_views(cands: CandidateSet, min_aggregation: bool = False) -> AggregatedDepth:
    """Combine per-view candidates by summed precision.

    With ``min_aggregation`` the nearest candidate is kept instead, together
    with its own variance.
    """
    valid = cands.valid
    if min_aggregation:
        mu_masked = np.where(valid, cands.mu, np.inf)
        pick = np.argmin(mu_masked, axis=0)[None]
        mu = np.take_along_axis(mu_masked, pick, 0)[0]
        var = np.take_along_axis(np.where(valid, cands.var, np.inf), pick, 0)[0]
        supported = valid.any(axis=0)
        tau = np.where(supported, 1.0 / np.where(supported, var, 1.0), 0.0)
        return AggregatedDepth(np.where(supported, mu, np.nan), np.where(supported, var, np.nan), tau)

    prec = np.where(valid, 1.0 / np.where(valid, cands.var, 1.0), 0.0)
    tau = prec.sum(axis=0)
    weighted = np.where(valid, cands.mu, 0.0) * prec
    supported = tau > 0
    safe_tau = np.where(supported, tau, 1.0)
    mu = np.where(supported, weighted.sum(axis=0) / safe_tau, np.nan)
    var = np.where(supported, 1.0 / safe_tau, np.nan)
    return AggregatedDepth(mu, var, tau)


def _fsum(x: np.ndarray) -> float:
    return math.fsum(x.ravel().tolist())


def fit_affine_wls(
    mu: np.ndarray,
    var: np.ndarray,
    support: np.ndarray,
    mono: DepthMap,
    degeneracy_floor: float = DEGENERACY_FLOOR,
    variance_floor: float = VARIANCE_FLOOR,
) -> AffineCalibration:
    """Variance-weighted least-squares fit of ``mono ~ a * mu + b``.

    Sums are compensated (``math.fsum``) so the result is independent of
    summation order. Returns ``valid=False`` when the normal equations are
    degenerate (no pixels, or ``mu`` constant over them).
    """
    sel = support & mono.valid & np.isfinite(mu)
    if not sel.any():
        return AffineCalibration(1.0, 0.0, False)
    p = 1.0 / np.maximum(var[sel], variance_floor)
    u = mu[sel]
    v = mono.values[sel]
    s_p = _fsum(p)
    s_pu = _fsum(p * u)
    s_pv = _fsum(p * v)
    s_puu = _fsum(p * u * u)
    s_puv = _fsum(p * u * v)
    sums = dict(S_p=s_p, S_pu=s_pu, S_pv=s_pv, S_puu=s_puu, S_puv=s_puv, count=int(sel.sum()))
    denom = s_p * s_puu - s_pu * s_pu
    if not abs(denom) > degeneracy_floor * s_p * s_puu:
        return AffineCalibration(1.0, 0.0, False, sums)
    a = (s_p * s_puv - s_pu * s_pv) / denom
    b = (s_pv - a * s_pu) / s_p
    if not (math.isfinite(a) and math.isfinite(b)):
        return AffineCalibration(1.0, 0.0, False, sums)
    return AffineCalibration(a, b, True, sums)


def estimate_prior_variance(
    mono: DepthMap, calibrated: np.ndarray, var: np.ndarray, a: float, support: np.ndarray
) -> float:
    """Moment-matched monocular noise variance from calibrated residuals, clamped at 0."""
    sel = support & mono.valid & np.isfinite(calibrated)
    if not sel.any():
        raise ValueError("no supported pixels to estimate the prior variance")
    resid = mono.values[sel] - calibrated[sel]
    excess = resid * resid - a * a * var[sel]
    return max(0.0, _fsum(excess) / excess.size)


def bayes_fuse(
    mono: DepthMap,
    sigma_o2: float,
    mu: np.ndarray,
    var: np.ndarray,
    a: float,
    b: float,
    support: np.ndarray,
    config: FusionConfig = FusionConfig(),
) -> RefinedDepth:
    floor = config.variance_floor
    sigma_o2 = max(sigma_o2, floor)
    sup = support & mono.valid & np.isfinite(mu)
    calibrated = a * np.where(sup, mu, 0.0) + b
    nerf_var = np.maximum(a * a * np.where(sup, var, 1.0), floor)

    prior_prec = 1.0 / sigma_o2
    nerf_prec = np.where(sup, 1.0 / nerf_var, 0.0)
    mono_prec = np.full(mono.shape, prior_prec)
    if config.drop_monocular_prior:
        mono_prec = np.where(sup, 0.0, mono_prec)
    precision = mono_prec + nerf_prec
    mono_vals = np.where(mono.valid, mono.values, 0.0)
    fused = (mono_prec * mono_vals + nerf_prec * calibrated) / precision
    depth = np.where(sup, fused, mono.values)
    variance = np.where(sup, 1.0 / precision, sigma_o2)
    valid = mono.valid.copy()
    return RefinedDepth(
        depth=DepthMap(depth, valid & (depth > 0)),
        variance=VarianceMap(variance, valid),
        precision=np.where(sup, precision, prior_prec),
    )


class ViewSource(Protocol):
    def views(self, iteration: int) -> list[RenderedView]: ...


class FieldViewSource:
    """Renders depth/variance views of a density field at perturbed poses.

    ``reconstruction_scale`` expresses the renders in a frame scaled about the
    reference camera centre, mimicking the arbitrary scale of a reconstructed
    field: depths scale by ``s``, variances by ``s**2`` and view centres move
    away from the reference centre by ``s``.
    """

    def __init__(
        self,
        field: DensityField,
        intr: Intrinsics,
        base: Pose,
        spec: PerturbationSpec,
        n_views: int = 10,
        near: float = 0.1,
        far: float = 10.0,
        n_samples: int = 64,
        jitter: bool = False,
        seed: int = 0,
        reconstruction_scale: float = 1.0,
    ):
        if n_views < 1:
            raise ValueError("need at least one view")
        if not reconstruction_scale > 0:
            raise ValueError("reconstruction_scale must be > 0")
        self.field = field
        self.intr = intr
        self.base = base
        self.spec = spec
        self.n_views = n_views
        self.near, self.far, self.n_samples = near, far, n_samples
        self.jitter = jitter
        self.seed = seed
        self.scale = reconstruction_scale

    def poses(self, iteration: int) -> list[Pose]:
        first = iteration * self.n_views
        return [perturb_pose(self.base, self.spec, first + j) for j in range(self.n_views)]

    def views(self, iteration: int) -> list[RenderedView]:
        out = []
        s = self.scale
        for j, pose in enumerate(self.poses(iteration)):
            key = int(np.random.SeedSequence([self.seed, iteration, j]).generate_state(1)[0])
            depth, var = render_depth_map(
                self.field, self.intr, pose, self.near, self.far, self.n_samples, rng_key=key, jitter=self.jitter
            )
            if s != 1.0:
                centre = self.base.translation
                pose = Pose(pose.rotation, centre + s * (pose.translation - centre))
                depth = DepthMap(depth.values * s, depth.valid)
                var = VarianceMap(var.values * (s * s), var.valid)
            out.append(RenderedView(pose, depth, var))
        return out


class InjectedViewSource:
    """Fixed, externally supplied views (e.g. from a trained radiance field)."""

    def __init__(self, rendered: list[RenderedView]):
        if not rendered:
            raise ValueError("no injected views")
        self.rendered = list(rendered)

    def views(self, iteration: int) -> list[RenderedView]:
        return self.rendered


def fuse_once(
    mono: DepthMap,
    cands: CandidateSet,
    config: FusionConfig,
) -> tuple[RefinedDepth | None, AggregatedDepth, AffineCalibration, float | None]:
    """One aggregation/calibration/fusion pass. Returns ``None`` for the refined
    depth when calibration is degenerate."""
    agg = aggregate_views(cands, config.min_aggregation)
    support = agg.support & mono.valid
    var = agg.var
    if config.constant_nerf_variance and support.any():
        var = np.where(support, _fsum(agg.var[support]) / support.sum(), np.nan)
    if config.skip_calibration:
        calib = AffineCalibration(1.0, 0.0, bool(support.any()))
    else:
        calib = fit_affine_wls(agg.mu, var, support, mono, config.degeneracy_floor, config.variance_floor)
    if not calib.valid:
        return None, agg, calib, None
    var_floored = np.maximum(var, config.variance_floor)
    calibrated = calib.a * agg.mu + calib.b
    if config.fixed_prior_variance is not None:
        sigma_o2 = config.fixed_prior_variance
    else:
        sigma_o2 = estimate_prior_variance(mono, calibrated, var_floored, calib.a, support)
    fused = bayes_fuse(mono, sigma_o2, agg.mu, var_floored, calib.a, calib.b, support, config)
    return fused, agg, calib, sigma_o2


def refine(
    mono: DepthMap,
    intr: Intrinsics,
    pose: Pose,
    source: ViewSource,
    config: FusionConfig = FusionConfig(),
    on_iteration: Callable[[IterationDiagnostics], None] | None = None,
) -> RefinedDepth:
    """Iteratively fuse rendered views into the monocular depth.

    Each cycle's refined (depth, variance) becomes the prior and the warping
    source of the next. A degenerate calibration leaves that cycle's input
    unchanged. The reported hole fraction comes from warping the current depth
    into each rendered view's pose, i.e. the synthetic view at that pose.
    """
    current = mono
    current_var = VarianceMap(np.full(mono.shape, np.inf), mono.valid)
    diagnostics: list[IterationDiagnostics] = []
    precision = None

    for it in range(config.iterations):
        rendered = source.views(it)
        hole = _hole_fraction(current, intr, pose, rendered)
        cands = reproject_to_reference(rendered, intr, pose)
        fused, agg, calib, sigma_o2 = fuse_once(current, cands, config)
        support_fraction = float((agg.support & current.valid).mean())
        diag = IterationDiagnostics(
            iteration=it,
            a=calib.a if calib.valid else None,
            b=calib.b if calib.valid else None,
            sigma_o2=sigma_o2,
            support_fraction=support_fraction,
            hole_fraction=hole,
            calibrated=calib.valid,
        )
        diagnostics.append(diag)
        if on_iteration is not None:
            on_iteration(diag)
        if fused is None:
            log.warning("iteration %d: degenerate calibration, keeping previous depth", it)
            continue
        current, current_var, precision = fused.depth, fused.variance, fused.precision

    return RefinedDepth(current, current_var, precision, diagnostics)


def _hole_fraction(current, intr, pose, rendered):
    if not current.valid.any():
        return None
    fractions = [1.0 - forward_warp(current, intr, pose, v.pose)[0].valid.mean() for v in rendered]
    return float(np.mean(fractions))
