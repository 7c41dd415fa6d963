import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from depthrefine.geometry import Intrinsics, Pose, Ray
from depthrefine.scene import AnalyticScene, EmptyField, Plane, Sphere
from depthrefine.volume import (
    WEIGHT_FLOOR,
    RaySamples,
    bin_variance,
    depth_moments,
    render_depth_map,
    sample_ray,
    termination_weights,
)
from oracles import termination_moments_loop

LN2 = math.log(2.0)
AXIS = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))


def _samples(sigma, delta=None):
    sigma = np.asarray(sigma, dtype=float)
    delta = np.ones_like(sigma) if delta is None else np.asarray(delta, dtype=float)
    t = np.cumsum(delta) - 0.5 * delta
    return RaySamples(t=t, delta=delta, sigma=sigma)


class TestSampleRay:
    def test_midpoints(self):
        # near must be positive; the smallest positive value reproduces near=0 midpoints
        s = sample_ray(AXIS, 1e-300, 1.0, 4, EmptyField())
        assert_allclose(s.t, [0.125, 0.375, 0.625, 0.875])
        assert_allclose(s.delta, 0.25)

    def test_zero_density(self):
        assert np.all(sample_ray(AXIS, 0.5, 2.0, 16, EmptyField()).sigma == 0)

    def test_jitter_deterministic_and_inside_bins(self):
        a = sample_ray(AXIS, 1.0, 3.0, 32, EmptyField(), jitter=True, rng_key=9)
        b = sample_ray(AXIS, 1.0, 3.0, 32, EmptyField(), jitter=True, rng_key=9)
        assert_array_equal(a.t, b.t)
        lower = 1.0 + (2.0 / 32) * np.arange(32)
        assert np.all((a.t >= lower) & (a.t < lower + 2.0 / 32))
        assert a.delta[-1] == pytest.approx(2.0 / 32)
        assert_allclose(a.delta[:-1], np.diff(a.t))

    @pytest.mark.parametrize("near,far,m", [(0.0, 1.0, 4), (2.0, 1.0, 4), (0.1, 1.0, 1)])
    def test_rejects_bad_bounds(self, near, far, m):
        with pytest.raises(ValueError):
            sample_ray(AXIS, near, far, m, EmptyField())

    def test_rejects_invalid_samples(self):
        with pytest.raises(ValueError):
            RaySamples(t=np.array([1.0, 1.0]), delta=np.ones(2), sigma=np.ones(2))
        with pytest.raises(ValueError):
            RaySamples(t=np.array([1.0, 2.0]), delta=np.ones(2), sigma=np.array([1.0, -1.0]))


class TestTerminationWeights:
    def test_second_sample_half_opaque(self):
        st_ = termination_weights(_samples([0.0, LN2]))
        assert_allclose(st_.weights, [0.0, 0.5])
        assert_allclose(st_.p, [0.0, 1.0])

    def test_two_half_opaque(self):
        st_ = termination_weights(_samples([LN2, LN2]))
        assert_allclose(st_.weights, [0.5, 0.25])
        assert st_.total_weight == pytest.approx(0.75)
        assert_allclose(st_.p, [2 / 3, 1 / 3])

    def test_zero_density_non_terminating(self):
        st_ = termination_weights(_samples([0.0, 0.0, 0.0]))
        assert st_.total_weight == 0.0
        assert not st_.terminates
        with pytest.raises(ValueError):
            depth_moments(st_, np.arange(3.0))

    def test_floor_boundary(self):
        sigma = -math.log(1 - WEIGHT_FLOOR * 0.5)
        assert not termination_weights(_samples([sigma])).terminates

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=2, max_size=64), st.floats(0.001, 0.5))
    def test_matches_loop_oracle(self, sigma, width):
        s = _samples(sigma, np.full(len(sigma), width))
        got = termination_weights(s)
        weights, total, p, mu, var = termination_moments_loop(s.sigma, s.delta, s.t)
        assert_allclose(got.weights, weights, rtol=1e-12, atol=1e-15)
        assert 0 <= got.total_weight <= 1 + 1e-9
        if p is None:
            assert not got.terminates
        else:
            assert abs(got.p.sum() - 1) <= 1e-9
            m, v = depth_moments(got, s.t)
            assert m == pytest.approx(mu, rel=1e-12)
            assert v == pytest.approx(var, rel=1e-9, abs=1e-12)
            assert s.t[0] - 1e-12 <= m <= s.t[-1] + 1e-12
            assert v >= 0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 20), min_size=2, max_size=32), st.floats(1.0, 10.0))
    def test_scaling_density_never_reduces_total(self, sigma, k):
        s = _samples(sigma, np.full(len(sigma), 0.1))
        scaled = RaySamples(s.t, s.delta, s.sigma * k)
        assert termination_weights(scaled).total_weight >= termination_weights(s).total_weight - 1e-15


class TestDepthMoments:
    def test_two_point(self):
        st_ = termination_weights(_samples([LN2, 1e9]))
        # force p = (0.5, 0.5) through the public type
        st_ = type(st_)(weights=np.array([0.5, 0.5]), total_weight=1.0, p=np.array([0.5, 0.5]))
        mu, var = depth_moments(st_, np.array([1.0, 3.0]))
        assert (mu, var) == (2.0, 1.0)

    def test_point_mass(self):
        st_ = type(termination_weights(_samples([1.0])))(weights=np.ones(1), total_weight=1.0, p=np.ones(1))
        assert depth_moments(st_, np.array([4.0])) == (4.0, 0.0)

    def test_monte_carlo_single_ray(self):
        rng = np.random.default_rng(5)
        s = _samples(rng.uniform(0, 3, 64), np.full(64, 0.05))
        p = termination_weights(s).p
        draws = s.t[rng.choice(64, size=10**6, p=p)]
        mu, var = depth_moments(termination_weights(s), s.t)
        assert draws.mean() == pytest.approx(mu, rel=0.01)
        assert draws.var() == pytest.approx(var, rel=0.01)


class TestRenderDepthMap:
    intr = Intrinsics.from_fov(32, 24, 60)

    def test_plane(self):
        sc = AnalyticScene([Plane(peak_density=400.0, softness=0.01, normal=(0, 0, 1), offset=2.0)])
        depth, var = render_depth_map(sc, self.intr, Pose.identity(), near=1.0, far=3.0, n_samples=256)
        assert depth.valid.all()
        assert_allclose(depth.values, 2.0, atol=0.01 + 2.0 / 256)
        assert np.all(var.values >= bin_variance(1.0, 3.0, 256) * 0.5)

    def test_empty_scene_all_invalid(self):
        depth, var = render_depth_map(EmptyField(), self.intr, Pose.identity(), 0.5, 5.0, 16)
        assert not depth.valid.any() and not var.valid.any()

    def test_nested_spheres(self):
        kw = dict(peak_density=500.0, softness=0.01)
        sc = AnalyticScene([Sphere(center=(0, 0, 3), radius=1.0, **kw), Sphere(center=(0, 0, 3), radius=0.5, **kw)])
        depth, _ = render_depth_map(sc, self.intr, Pose.identity(), near=0.5, far=5.0, n_samples=512)
        exact = sc.exact_depth(self.intr, Pose.identity())
        hit = np.isfinite(exact)
        assert hit.sum() > 100
        # interior of the silhouette: within the shell plus one bin
        from scipy import ndimage

        core = ndimage.binary_erosion(hit, iterations=2)
        assert np.abs(depth.values[core] - exact[core]).max() <= 0.01 + 4.5 / 512

    def test_deterministic_with_jitter(self):
        sc = AnalyticScene([Plane(peak_density=50.0, softness=0.05, normal=(0, 0, 1), offset=2.0)])
        a = render_depth_map(sc, self.intr, Pose.identity(), 1.0, 3.0, 32, rng_key=3, jitter=True)
        b = render_depth_map(sc, self.intr, Pose.identity(), 1.0, 3.0, 32, rng_key=3, jitter=True)
        assert_array_equal(a[0].values, b[0].values)
        assert_array_equal(a[1].values, b[1].values)

    def test_chunking_invariant(self):
        sc = AnalyticScene([Sphere(peak_density=30.0, softness=0.2, center=(0, 0, 2), radius=0.7)])
        a, va = render_depth_map(sc, self.intr, Pose.identity(), 0.5, 4.0, 48)
        b, vb = render_depth_map(sc, self.intr, Pose.identity(), 0.5, 4.0, 48, chunk_rays=37)
        assert_array_equal(a.valid, b.valid)
        assert_allclose(a.values[a.valid], b.values[b.valid], rtol=1e-14)
        assert_allclose(va.values[a.valid], vb.values[b.valid], rtol=1e-12)

    def test_z_depth_matches_along_ray_moments(self):
        sc = AnalyticScene([Sphere(peak_density=30.0, softness=0.2, center=(0.3, 0.1, 2), radius=0.7)])
        pose = Pose.identity()
        depth, var = render_depth_map(sc, self.intr, pose, 0.5, 4.0, 48, variance_floor=0.0)
        from depthrefine.geometry import pixel_to_ray

        for (u, v) in [(10, 12), (20, 8), (16, 12)]:
            ray = pixel_to_ray(self.intr, pose, (u, v))
            s = sample_ray(ray, 0.5, 4.0, 48, sc)
            _, _, _, mu, vr = termination_moments_loop(s.sigma, s.delta, s.t)
            if mu is None:
                assert not depth.valid[v, u]
                continue
            z_per_t = ray.direction[2]
            assert depth.values[v, u] == pytest.approx(mu * z_per_t, rel=1e-12)
            assert var.values[v, u] == pytest.approx(max(vr * z_per_t**2, 1e-12), rel=1e-9)
