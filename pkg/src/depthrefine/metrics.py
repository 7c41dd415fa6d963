"""Depth evaluation: median scale alignment, MSE, edge sharpness, edge F1 and
rank correlation between predicted uncertainty and error."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, stats

from .maps import DepthMap


class MetricError(ValueError):
    pass


def _overlap(a: DepthMap, b: DepthMap) -> np.ndarray:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    both = a.valid & b.valid
    if not both.any():
        raise MetricError("no overlapping valid pixels")
    return both


def median_align(pred: DepthMap, gt: DepthMap) -> DepthMap:
    """Scale ``pred`` by median(gt)/median(pred) over mutually valid pixels."""
    both = _overlap(pred, gt)
    med_pred = float(np.median(pred.values[both]))
    if not med_pred > 0:
        raise MetricError("prediction median is not positive")
    scale = float(np.median(gt.values[both])) / med_pred
    return DepthMap(np.where(both, pred.values * scale, np.nan), both)


def mse(pred: DepthMap, gt: DepthMap) -> float:
    both = _overlap(pred, gt)
    diff = pred.values[both] - gt.values[both]
    return math.fsum((diff * diff).tolist()) / diff.size


def gradient_magnitude(depth: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient norm (per pixel) and the mask where it is defined.

    Defined only where the pixel and its four neighbours are valid.
    """
    v = np.where(depth.valid, depth.values, 0.0)
    ok = np.zeros(depth.shape, dtype=bool)
    ok[1:-1, 1:-1] = (
        depth.valid[1:-1, 1:-1]
        & depth.valid[1:-1, :-2]
        & depth.valid[1:-1, 2:]
        & depth.valid[:-2, 1:-1]
        & depth.valid[2:, 1:-1]
    )
    gx = np.zeros(depth.shape)
    gy = np.zeros(depth.shape)
    gx[:, 1:-1] = 0.5 * (v[:, 2:] - v[:, :-2])
    gy[1:-1, :] = 0.5 * (v[2:, :] - v[:-2, :])
    return np.where(ok, np.hypot(gx, gy), 0.0), ok


def edge_sharpness(pred: DepthMap, baseline: DepthMap) -> float:
    """Mean gradient magnitude of ``pred`` relative to ``baseline`` on shared interior pixels."""
    if pred.shape != baseline.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {baseline.shape}")
    g_pred, ok_pred = gradient_magnitude(pred)
    g_base, ok_base = gradient_magnitude(baseline)
    ok = ok_pred & ok_base
    if not ok.any():
        raise MetricError("no interior pixels shared by both maps")
    denom = float(g_base[ok].mean())
    if denom == 0:
        raise MetricError("baseline has zero gradient")
    return float(g_pred[ok].mean()) / denom


def default_edge_threshold(gt: DepthMap, fraction: float = 0.05) -> float:
    vals = gt.values[gt.valid]
    return fraction * float(vals.max() - vals.min())


def edge_map(depth: DepthMap, threshold: float) -> np.ndarray:
    g, ok = gradient_magnitude(depth)
    return ok & (g > threshold)


def edge_f1(pred: DepthMap, gt: DepthMap, grad_threshold: float | None = None, match_radius: float = 2.0) -> float:
    """F1 of depth edges with tolerant matching.

    A predicted edge pixel counts as correct if a ground-truth edge lies within
    ``match_radius`` pixels (Euclidean), and symmetrically for recall.
    """
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if grad_threshold is None:
        grad_threshold = default_edge_threshold(gt)
    e_pred = edge_map(pred, grad_threshold)
    e_gt = edge_map(gt, grad_threshold)
    n_pred, n_gt = int(e_pred.sum()), int(e_gt.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~e_gt)
    dist_to_pred = ndimage.distance_transform_edt(~e_pred)
    precision = float((dist_to_gt[e_pred] <= match_radius).mean())
    recall = float((dist_to_pred[e_gt] <= match_radius).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def spearman(x, y) -> float | None:
    """Spearman rank correlation with average ranks on ties; ``None`` if either input is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise MetricError("inputs differ in length")
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return None
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def uncertainty_error_correlation(variance, abs_error, valid=None, n_bins: int = 10):
    """Spearman rho between variance and |error|, plus MAE per variance-percentile bin.

    Inputs are per-pixel arrays; non-finite entries and pixels outside ``valid``
    are ignored. The curve is a list of ``(upper_percentile, mean_abs_error)``.
    """
    variance = np.asarray(variance, dtype=np.float64)
    abs_error = np.asarray(abs_error, dtype=np.float64)
    if variance.shape != abs_error.shape:
        raise MetricError(f"shape mismatch {variance.shape} vs {abs_error.shape}")
    both = np.isfinite(variance) & np.isfinite(abs_error)
    if valid is not None:
        both &= np.asarray(valid, dtype=bool)
    if both.sum() < 10:
        raise MetricError("need at least 10 overlapping pixels")
    var = variance[both]
    err = abs_error[both]
    rho = spearman(var, err)
    order = np.argsort(var, kind="stable")
    curve = []
    for k, chunk in enumerate(np.array_split(order, n_bins)):
        curve.append((100.0 * (k + 1) / n_bins, float(err[chunk].mean()) if chunk.size else float("nan")))
    return rho, curve


@dataclass
class MetricsReport:
    mse: float
    baseline_mse: float
    edge_sharpness_ratio: float
    edge_f1: float
    baseline_edge_f1: float
    uncertainty_error_spearman: float | None
    grad_threshold: float
    match_radius: float
    n_mse_pixels: int
    n_edge_pixels_gt: int
    n_correlation_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    pred: DepthMap,
    gt: DepthMap,
    baseline: DepthMap,
    variance: DepthMap | None = None,
    grad_threshold: float | None = None,
    match_radius: float = 2.0,
):
    """Median-align ``pred`` and ``baseline`` to ``gt`` and compute every metric.

    Returns ``(MetricsReport, curve)``; the curve is empty without a variance map.
    """
    if grad_threshold is None:
        grad_threshold = default_edge_threshold(gt)
    pred_a = median_align(pred, gt)
    base_a = median_align(baseline, gt)
    rho, curve, n_corr = None, [], 0
    if variance is not None:
        if variance.shape != gt.shape:
            raise MetricError(f"shape mismatch {variance.shape} vs {gt.shape}")
        err = np.abs(pred_a.values - gt.values)
        mask = pred_a.valid & gt.valid & variance.valid
        rho, curve = uncertainty_error_correlation(variance.values, err, mask)
        n_corr = int(mask.sum())
    report = MetricsReport(
        mse=mse(pred_a, gt),
        baseline_mse=mse(base_a, gt),
        edge_sharpness_ratio=edge_sharpness(pred_a, base_a),
        edge_f1=edge_f1(pred_a, gt, grad_threshold, match_radius),
        baseline_edge_f1=edge_f1(base_a, gt, grad_threshold, match_radius),
        uncertainty_error_spearman=rho,
        grad_threshold=grad_threshold,
        match_radius=match_radius,
        n_mse_pixels=int((pred_a.valid & gt.valid).sum()),
        n_edge_pixels_gt=int(edge_map(gt, grad_threshold).sum()),
        n_correlation_pixels=n_corr,
    )
    return report, curve
