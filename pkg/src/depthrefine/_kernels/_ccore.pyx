# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics mirror ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, floor, isnan, NAN

cnp.import_array()


def termination_moments(sigma, delta, t, double weight_floor):
    cdef const double[:, ::1] s = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(delta, dtype=np.float64)
    cdef const double[:, ::1] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef Py_ssize_t n_rays = s.shape[0], n_samples = s.shape[1]
    total_arr = np.empty(n_rays)
    mu_arr = np.empty(n_rays)
    var_arr = np.empty(n_rays)
    cdef double[::1] total = total_arr
    cdef double[::1] mu = mu_arr
    cdef double[::1] var = var_arr
    cdef Py_ssize_t r, i
    cdef double cum, od, w, wsum, s1, s2, m, m2

    with nogil:
        for r in range(n_rays):
            cum = 0.0
            wsum = 0.0
            s1 = 0.0
            s2 = 0.0
            for i in range(n_samples):
                od = s[r, i] * d[r, i]
                w = exp(-cum) * -expm1(-od)
                cum = cum + od
                wsum = wsum + w
                s1 = s1 + w * tt[r, i]
                s2 = s2 + w * tt[r, i] * tt[r, i]
            total[r] = wsum
            if wsum >= weight_floor:
                m = s1 / wsum
                m2 = s2 / wsum
                mu[r] = m
                var[r] = m2 - m * m if m2 - m * m > 0.0 else 0.0
            else:
                mu[r] = NAN
                var[r] = NAN
    return total_arr, mu_arr, var_arr


def zbuffer_splat(u, v, z, payload, Py_ssize_t height, Py_ssize_t width):
    cdef const double[::1] uu = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef const double[::1] zz = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef const double[::1] pp = np.ascontiguousarray(payload, dtype=np.float64).ravel()
    depth_arr = np.full(height * width, np.nan)
    pay_arr = np.full(height * width, np.nan)
    cdef double[::1] depth = depth_arr
    cdef double[::1] pay = pay_arr
    cdef Py_ssize_t n = zz.shape[0], i, iu, iv, k
    cdef double fu, fv, zi

    with nogil:
        for i in range(n):
            zi = zz[i]
            if not (zi > 0.0):
                continue
            fu = floor(uu[i] + 0.5)
            fv = floor(vv[i] + 0.5)
            if isnan(fu) or isnan(fv):
                continue
            if fu < 0 or fu >= width or fv < 0 or fv >= height:
                continue
            iu = <Py_ssize_t>fu
            iv = <Py_ssize_t>fv
            k = iv * width + iu
            # strict comparison: equal depths keep the earlier (smaller) index
            if isnan(depth[k]) or zi < depth[k]:
                depth[k] = zi
                pay[k] = pp[i]
    depth_img = depth_arr.reshape(height, width)
    return depth_img, pay_arr.reshape(height, width), ~np.isnan(depth_img)
