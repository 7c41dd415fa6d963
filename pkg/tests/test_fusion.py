import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from depthrefine.fusion import (
    AffineCalibration,
    FusionConfig,
    InjectedViewSource,
    aggregate_views,
    bayes_fuse,
    estimate_prior_variance,
    fit_affine_wls,
    fuse_once,
    refine,
)
from depthrefine.geometry import Intrinsics, PerturbationSpec, Pose, perturb_pose
from depthrefine.maps import DepthMap, VarianceMap
from depthrefine.scene import AnalyticScene, Plane, box_in_room
from depthrefine.simulate import MonoCorruption, corrupt_depth, ground_truth_depth
from depthrefine.views import CandidateSet, RenderedView, reproject_to_reference
from oracles import weighted_normal_equations, wls_objective


def _cands(per_pixel):
    """CandidateSet for a 1xN image from a list of per-pixel candidate lists."""
    k = max(1, max(len(c) for c in per_pixel))
    n = len(per_pixel)
    mu = np.full((k, 1, n), np.nan)
    var = np.full((k, 1, n), np.nan)
    for x, cs in enumerate(per_pixel):
        for j, (m, s2) in enumerate(cs):
            mu[j, 0, x], var[j, 0, x] = m, s2
    return CandidateSet(mu, var, np.isfinite(mu))


def _map(values):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return DepthMap(values, np.ones(values.shape, bool))


class TestAggregate:
    def test_equal_precision_mean(self):
        agg = aggregate_views(_cands([[(1.0, 1.0), (3.0, 1.0)]]))
        assert (agg.mu[0, 0], agg.var[0, 0], agg.tau[0, 0]) == (2.0, 0.5, 2.0)

    def test_single_candidate(self):
        agg = aggregate_views(_cands([[(5.0, 2.0)]]))
        assert (agg.mu[0, 0], agg.var[0, 0], agg.tau[0, 0]) == (5.0, 2.0, 0.5)

    def test_empty_unsupported(self):
        agg = aggregate_views(_cands([[], [(1.0, 1.0)]]))
        assert_array_equal(agg.support, [[False, True]])
        assert agg.tau[0, 0] == 0.0

    def test_var_is_inverse_tau(self):
        rng = np.random.default_rng(0)
        mu = rng.uniform(1, 3, (5, 8, 8))
        var = rng.uniform(0.01, 1, (5, 8, 8))
        valid = rng.uniform(size=mu.shape) < 0.6
        agg = aggregate_views(CandidateSet(np.where(valid, mu, np.nan), np.where(valid, var, np.nan), valid))
        s = agg.support
        assert_allclose(agg.var[s], 1.0 / agg.tau[s], rtol=1e-15)
        lo = np.where(valid, mu, np.inf).min(axis=0)
        hi = np.where(valid, mu, -np.inf).max(axis=0)
        assert np.all((agg.mu[s] >= lo[s] - 1e-12) & (agg.mu[s] <= hi[s] + 1e-12))

    def test_min_aggregation_keeps_nearest(self):
        agg = aggregate_views(_cands([[(3.0, 0.1), (2.0, 0.4), (2.5, 0.01)]]), min_aggregation=True)
        assert (agg.mu[0, 0], agg.var[0, 0]) == (2.0, 0.4)


class TestAffineWLS:
    def _instance(self, seed, n=1000):
        rng = np.random.default_rng(seed)
        mu = rng.uniform(0.5, 5.0, n)
        var = rng.uniform(1e-4, 0.5, n)
        mono = rng.uniform(0.8, 1.3) * mu + rng.uniform(0.0, 0.5) + rng.normal(0, 0.05, n)
        return mu[None], var[None], np.ones((1, n), bool), _map(mono)

    def test_exact_affine(self):
        rng = np.random.default_rng(1)
        mu = rng.uniform(1, 4, (1, 50))
        var = rng.uniform(0.01, 2, (1, 50))
        c = fit_affine_wls(mu, var, np.ones_like(mu, bool), _map(2 * mu + 1))
        assert c.valid
        assert c.a == pytest.approx(2.0, abs=1e-9) and c.b == pytest.approx(1.0, abs=1e-9)

    def test_constant_mu_degenerate(self):
        mu = np.full((1, 20), 2.0)
        c = fit_affine_wls(mu, np.ones_like(mu), np.ones_like(mu, bool), _map(np.arange(1.0, 21.0)))
        assert not c.valid

    def test_empty_support_degenerate(self):
        mu = np.ones((1, 3))
        assert not fit_affine_wls(mu, mu, np.zeros_like(mu, bool), _map([1, 2, 3])).valid

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_generic_solver(self, seed):
        mu, var, sup, mono = self._instance(seed)
        c = fit_affine_wls(mu, var, sup, mono)
        a, b = weighted_normal_equations(mu[0], mono.values[0], 1.0 / var[0])
        assert c.a == pytest.approx(a, rel=1e-9)
        assert c.b == pytest.approx(b, rel=1e-9)

    def test_objective_is_minimal(self):
        mu, var, sup, mono = self._instance(7)
        c = fit_affine_wls(mu, var, sup, mono)
        w = 1.0 / var[0]
        best = wls_objective(mu[0], mono.values[0], w, c.a, c.b)
        for da in (-1e-3, 0.0, 1e-3):
            for db in (-1e-3, 0.0, 1e-3):
                assert wls_objective(mu[0], mono.values[0], w, c.a + da, c.b + db) >= best

    def test_order_independent(self):
        mu, var, sup, mono = self._instance(3)
        perm = np.random.default_rng(0).permutation(mu.shape[1])
        c1 = fit_affine_wls(mu, var, sup, mono)
        c2 = fit_affine_wls(mu[:, perm], var[:, perm], sup, _map(mono.values[0, perm]))
        assert (c1.a, c1.b) == (c2.a, c2.b)


class TestPriorVariance:
    def test_clamped_to_zero(self):
        x = np.array([[1.0, 2.0, 3.0]])
        assert estimate_prior_variance(_map(x), x, np.full_like(x, 0.1), 1.5, np.ones_like(x, bool)) == 0.0

    def test_constant_residual(self):
        x = np.array([[1.0, 2.0, 3.0]])
        s2 = estimate_prior_variance(_map(x + 0.3), x, np.full_like(x, 1e-12), 1.0, np.ones_like(x, bool))
        assert s2 == pytest.approx(0.09, rel=1e-9)

    def test_recovers_injected_noise(self):
        # near-exact rendered depth, affine monocular prior with known noise
        rng = np.random.default_rng(0)
        s, estimates = 0.02, []
        for seed in range(10):
            r = np.random.default_rng(seed)
            truth = rng.uniform(1.0, 3.0, (120, 160))
            mono = _map(1.1 * truth + 0.2 + r.normal(0, s, truth.shape))
            var = np.full(truth.shape, 1e-8)
            c = fit_affine_wls(truth, var, np.ones(truth.shape, bool), mono)
            estimates.append(estimate_prior_variance(mono, c.a * truth + c.b, var, c.a, np.ones(truth.shape, bool)))
        assert np.mean(estimates) == pytest.approx(s * s, rel=0.15)

    def test_empty_support_raises(self):
        x = np.ones((1, 2))
        with pytest.raises(ValueError):
            estimate_prior_variance(_map(x), x, x, 1.0, np.zeros_like(x, bool))


class TestBayesFuse:
    def test_equal_precisions(self):
        out = bayes_fuse(_map([[2.0]]), 0.5, np.array([[4.0]]), np.array([[0.5]]), 1.0, 0.0, np.ones((1, 1), bool))
        assert out.depth.values[0, 0] == 3.0
        assert out.variance.values[0, 0] == 0.25

    def test_vanishing_nerf_precision(self):
        out = bayes_fuse(_map([[2.0]]), 0.1, np.array([[4.0]]), np.array([[1e12]]), 1.0, 0.0, np.ones((1, 1), bool))
        assert out.depth.values[0, 0] == pytest.approx(2.0, abs=1e-10)

    def test_unsupported_passthrough(self):
        mono = _map([[2.0, 5.0]])
        out = bayes_fuse(mono, 0.3, np.array([[4.0, np.nan]]), np.array([[0.1, np.nan]]), 1.0, 0.0,
                         np.array([[True, False]]))
        assert out.depth.values[0, 1] == 5.0
        assert out.variance.values[0, 1] == 0.3

    def test_drop_monocular_prior(self):
        cfg = FusionConfig(drop_monocular_prior=True)
        out = bayes_fuse(_map([[2.0, 7.0]]), 0.3, np.array([[4.0, np.nan]]), np.array([[0.1, np.nan]]), 2.0, 1.0,
                         np.array([[True, False]]), cfg)
        assert out.depth.values[0, 0] == 9.0
        assert out.variance.values[0, 0] == pytest.approx(0.4)
        assert out.depth.values[0, 1] == 7.0

    def test_identities_random(self):
        rng = np.random.default_rng(11)
        n = 1000
        mono = _map(rng.uniform(1, 5, (1, n)))
        mu = rng.uniform(1, 5, (1, n))
        var = rng.uniform(1e-3, 1.0, (1, n))
        a, b, s2 = 1.3, -0.2, 0.05
        out = bayes_fuse(mono, s2, mu, var, a, b, np.ones((1, n), bool))
        expected_prec = 1.0 / s2 + 1.0 / (a * a * var)
        assert_allclose(1.0 / out.variance.values, expected_prec, rtol=1e-12)
        cal = a * mu + b
        lo, hi = np.minimum(mono.values, cal), np.maximum(mono.values, cal)
        d = out.depth.values
        assert np.all((d >= lo - 1e-12) & (d <= hi + 1e-12))

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1e-6, 10), st.floats(1e-6, 10),
        st.floats(0.2, 5), st.floats(-1, 1),
    )
    def test_convex_and_additive_property(self, d_o, m, s2, v, a, b):
        out = bayes_fuse(_map([[d_o]]), s2, np.array([[m]]), np.array([[v]]), a, b, np.ones((1, 1), bool))
        cal = a * m + b
        d = out.depth.values[0, 0]
        assert min(d_o, cal) - 1e-9 <= d <= max(d_o, cal) + 1e-9
        assert out.variance.values[0, 0] > 0
        assert 1.0 / out.variance.values[0, 0] == pytest.approx(1.0 / s2 + 1.0 / (a * a * v), rel=1e-12)


class TestFuseOnce:
    def _setup(self, seed=0, n=400):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(1, 3, (1, n))
        mono = _map(1.1 * gt + 0.2 + rng.normal(0, 0.05, gt.shape))
        var = rng.uniform(1e-4, 1e-2, (2, 1, n))
        mu = gt[None] + rng.normal(0, 1, (2, 1, n)) * np.sqrt(var)
        valid = np.ones(mu.shape, bool)
        valid[:, 0, :20] = False
        return mono, CandidateSet(np.where(valid, mu, np.nan), np.where(valid, var, np.nan), valid)

    def test_scale_equivariance(self):
        mono, c = self._setup()
        base, _, cal, _ = fuse_once(mono, c, FusionConfig())
        for s in (0.3, 3.7, 100.0):
            scaled = CandidateSet(c.mu * s, c.var * s * s, c.valid)
            out, _, cal_s, _ = fuse_once(mono, scaled, FusionConfig())
            assert cal_s.a == pytest.approx(cal.a / s, rel=1e-9)
            assert_allclose(out.depth.values, base.depth.values, rtol=1e-9)

    def test_unsupported_pixels_untouched(self):
        mono, c = self._setup(1)
        out, _, _, s2 = fuse_once(mono, c, FusionConfig())
        assert_array_equal(out.depth.values[0, :20], mono.values[0, :20])
        assert_allclose(out.variance.values[0, :20], s2)

    def test_skip_calibration(self):
        mono, c = self._setup(2)
        _, _, cal, _ = fuse_once(mono, c, FusionConfig(skip_calibration=True))
        assert (cal.a, cal.b, cal.valid) == (1.0, 0.0, True)

    def test_fixed_prior_variance(self):
        mono, c = self._setup(3)
        _, _, _, s2 = fuse_once(mono, c, FusionConfig().with_ablations(["fixed_prior_variance"], 0.123))
        assert s2 == 0.123

    def test_constant_nerf_variance(self):
        mono, c = self._setup(4)
        a, agg, _, _ = fuse_once(mono, c, FusionConfig(constant_nerf_variance=True))
        sup = agg.support
        # every supported pixel then shares one posterior variance
        assert np.ptp(a.variance.values[sup]) <= 1e-15 * a.variance.values[sup].max()

    def test_degenerate_returns_none(self):
        mono = _map(np.linspace(1, 2, 10)[None])
        mu = np.full((1, 1, 10), 2.0)
        out, _, cal, s2 = fuse_once(mono, CandidateSet(mu, np.ones_like(mu), np.ones_like(mu, bool)), FusionConfig())
        assert out is None and not cal.valid and s2 is None

    def test_with_ablations_rejects(self):
        with pytest.raises(ValueError):
            FusionConfig().with_ablations(["bogus"])
        with pytest.raises(ValueError):
            FusionConfig().with_ablations(["fixed_prior_variance"])
        with pytest.raises(ValueError):
            FusionConfig(iterations=0)


class TestRefine:
    intr = Intrinsics.from_fov(40, 30, 60)

    scene = AnalyticScene([Plane(peak_density=1.0, softness=0.1, normal=(0.0, 0.3, 1.0), offset=2.0)])

    def _views(self, n=3, var=1e-4, spec=PerturbationSpec(1.0, 0.01, 5), scene=None):
        scene = scene or self.scene
        out = []
        for i in range(n):
            pose = perturb_pose(Pose.identity(), spec, i)
            depth = scene.exact_depth(self.intr, pose)
            ok = np.isfinite(depth)
            out.append(RenderedView(pose, DepthMap(np.where(ok, depth, 1.0), ok),
                                    VarianceMap(np.full(depth.shape, var), ok)))
        return out

    def _plane(self):
        return self.scene.exact_depth(self.intr, Pose.identity())

    def test_one_iteration_equals_manual_pass(self):
        depth = self._plane()
        views = self._views()
        mono = _map(1.1 * depth + 0.2)
        got = refine(mono, self.intr, Pose.identity(), InjectedViewSource(views), FusionConfig(iterations=1))
        cands = reproject_to_reference(views, self.intr, Pose.identity())
        manual, _, _, _ = fuse_once(mono, cands, FusionConfig(iterations=1))
        assert_array_equal(got.depth.values, manual.depth.values)
        assert_array_equal(got.variance.values, manual.variance.values)
        assert len(got.diagnostics) == 1

    def test_diagnostics_per_iteration(self):
        depth = self._plane()
        seen = []
        out = refine(_map(depth * 1.1), self.intr, Pose.identity(), InjectedViewSource(self._views()),
                     FusionConfig(iterations=3), on_iteration=seen.append)
        assert [d.iteration for d in out.diagnostics] == [0, 1, 2]
        assert seen == out.diagnostics
        assert all(d.calibrated and d.sigma_o2 >= 0 for d in out.diagnostics)
        assert set(out.diagnostics[0].to_dict()) >= {"iteration", "a", "b", "sigma_o2", "support_fraction",
                                                     "hole_fraction"}

    def test_consistent_observers(self):
        depth = self._plane()
        # unperturbed views make the warp exact, so only the floors matter
        views = self._views(var=1e-10, spec=PerturbationSpec(0.0, 0.0, 0))
        out = refine(_map(depth), self.intr, Pose.identity(), InjectedViewSource(views))
        assert_allclose(out.depth.values, depth, rtol=1e-9)

    def test_degenerate_keeps_input(self):
        # a fronto-parallel plane seen without perturbation gives constant mu
        flat = AnalyticScene([Plane(peak_density=1.0, softness=0.1, normal=(0, 0, 1), offset=2.0)])
        views = self._views(spec=PerturbationSpec(0.0, 0.0, 0), scene=flat)
        mono = _map(np.random.default_rng(0).uniform(1, 3, self.intr.shape))
        out = refine(mono, self.intr, Pose.identity(), InjectedViewSource(views))
        assert_array_equal(out.depth.values, mono.values)
        assert not any(d.calibrated for d in out.diagnostics)
        assert np.all(np.isinf(out.variance.values))


def test_prior_noise_recovered_without_occlusions():
    # the full pipeline recovers the monocular noise when reprojection is
    # free of occlusion boundaries (inside of the room only)
    intr = Intrinsics.from_fov(160, 120, 90)
    room = AnalyticScene(box_in_room().primitives[:1])
    gt = ground_truth_depth(room, intr, Pose.identity())
    estimates = []
    for seed in range(10):
        views = []
        for i in range(6):
            pose = perturb_pose(Pose.identity(), PerturbationSpec(2.0, 0.02, seed), i)
            d = room.exact_depth(intr, pose)
            var = VarianceMap(np.full(d.shape, 1e-8), np.isfinite(d))
            views.append(RenderedView(pose, DepthMap.from_array(d), var))
        mono = corrupt_depth(gt, MonoCorruption(blur_px=0.0, noise_m=0.02), seed)
        out = refine(mono, intr, Pose.identity(), InjectedViewSource(views), FusionConfig(iterations=1))
        estimates.append(np.sqrt(out.diagnostics[0].sigma_o2))
    assert np.mean(estimates) == pytest.approx(0.02, rel=0.15)


def test_affine_calibration_type():
    c = AffineCalibration(2.0, 1.0, True)
    assert c.valid and c.sums == {}
