"""Numpy implementations of the kernels; the reference the compiled core must match."""

import numpy as np


def termination_moments(sigma, delta, t, weight_floor):
    """Per-ray total weight, expected termination distance and its variance.

    All inputs are (R, M). Returns ``total, mu, var`` of shape (R,); rays whose
    total weight is below ``weight_floor`` get NaN moments.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    optical = sigma * delta
    cum = np.cumsum(optical, axis=-1) - optical
    weights = np.exp(-cum) * -np.expm1(-optical)
    total = weights.sum(axis=-1)
    terminating = total >= weight_floor
    safe_total = np.where(terminating, total, 1.0)
    p = weights / safe_total[:, None]
    mu = (p * t).sum(axis=-1)
    m2 = (p * t * t).sum(axis=-1)
    var = np.maximum(m2 - mu * mu, 0.0)
    mu = np.where(terminating, mu, np.nan)
    var = np.where(terminating, var, np.nan)
    return total, mu, var


def zbuffer_splat(u, v, z, payload, height, width):
    """Splat points to their nearest pixel keeping the smallest depth.

    ``u, v, z, payload`` are flat float arrays; NaN or non-positive ``z`` are
    skipped. Ties in depth go to the smaller input index, so the result does
    not depend on processing order. Returns ``depth, payload, filled`` images.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    payload = np.asarray(payload, dtype=np.float64)
    depth_img = np.full(height * width, np.nan)
    pay_img = np.full(height * width, np.nan)

    with np.errstate(invalid="ignore"):
        iu = np.floor(u + 0.5)
        iv = np.floor(v + 0.5)
        ok = (z > 0) & (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height)
    src = np.flatnonzero(ok)
    if src.size:
        target = iv[src].astype(np.int64) * width + iu[src].astype(np.int64)
        order = np.lexsort((src, z[src], target))
        target_sorted = target[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = target_sorted[1:] != target_sorted[:-1]
        winners = src[order[first]]
        tgt = target_sorted[first]
        depth_img[tgt] = z[winners]
        pay_img[tgt] = payload[winners]
    depth_img = depth_img.reshape(height, width)
    pay_img = pay_img.reshape(height, width)
    return depth_img, pay_img, ~np.isnan(depth_img)
