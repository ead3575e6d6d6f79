import math

import numpy as np
from django.test import SimpleTestCase

from manifolds.exceptions import (
    DomainError,
    InnermostProjectionError,
    InvalidStateError,
    ScheduleError,
    StageFailureError,
)
from manifolds.utils import zoo
from manifolds.utils.core import ConstraintManifold
from manifolds.utils.integrator import (
    IntegrationConfig,
    choose_center,
    disk_boundary,
    estimate_innermost,
    estimate_ratio,
    integrate,
    make_schedule,
    outer_radius,
    probe_min_radius,
    uniform_disk,
)
from manifolds.utils.sampler import ProposalParams, run_chain, uniform_density
from manifolds.utils.stats import combine_error
from manifolds.utils.validation import son_volume_config


def interval_manifold():
    """The segment {(t, 0) : 0 < t < 1} in the plane."""
    return ConstraintManifold(
        ambient_dim=2, equality_count=1,
        q=lambda x: np.array([x[1]]),
        grad_q=lambda x: np.array([[0.0], [1.0]]),
        h=lambda x: np.array([x[0], 1.0 - x[0]]),
        inequality_count=2,
    )


def circle_points(degrees):
    angles = np.radians(degrees)
    return np.column_stack([np.cos(angles), np.sin(angles)])


class CenterAndRadiusTests(SimpleTestCase):
    def test_center_is_farthest_from_inequalities(self):
        samples = np.array([[0.1, 0.0], [0.5, 0.0], [0.8, 0.0]])
        np.testing.assert_array_equal(choose_center(samples, interval_manifold()), [0.5, 0.0])

    def test_center_without_inequalities_minimizes_spread(self):
        samples = circle_points([0.0, 10.0, 180.0])
        center = choose_center(samples, zoo.circle_manifold(), chunk=2)
        np.testing.assert_allclose(center, samples[1])

    def test_single_sample(self):
        samples = np.array([[1.0, 0.0]])
        np.testing.assert_array_equal(choose_center(samples, zoo.circle_manifold()), [1.0, 0.0])
        self.assertEqual(outer_radius(samples, samples[0]), 0.0)

    def test_empty_samples(self):
        with self.assertRaises(DomainError):
            choose_center(np.empty((0, 2)), zoo.circle_manifold())
        with self.assertRaises(DomainError):
            outer_radius(np.empty((0, 2)), np.zeros(2))

    def test_outer_radius_is_max_distance(self):
        samples = circle_points([0.0, 90.0, 180.0])
        self.assertAlmostEqual(outer_radius(samples, [1.0, 0.0]), 2.0)


class UniformDiskTests(SimpleTestCase):
    def test_points_fill_the_disk(self):
        points = uniform_disk(20_000, 2, 0.5, np.random.default_rng(0))
        radii = np.linalg.norm(points, axis=1)
        self.assertEqual(points.shape, (20_000, 2))
        self.assertLessEqual(radii.max(), 0.5)
        # E|u|^2 = r^2 d / (d + 2)
        self.assertAlmostEqual(float((radii ** 2).mean()), 0.125, delta=0.003)

    def test_boundary_points_lie_on_the_rim(self):
        points = disk_boundary(3, 0.4, 10, np.random.default_rng(0))
        self.assertEqual(points.shape, (16, 3))
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 0.4, rtol=1e-12)
        np.testing.assert_array_equal(points[:3], 0.4 * np.eye(3))
        np.testing.assert_array_equal(points[3:6], -0.4 * np.eye(3))


class ScheduleTests(SimpleTestCase):
    def test_two_stage_torus_schedule(self):
        schedule = make_schedule([1.5, 0, 0], 3.0, 0.5, 2, 2)
        self.assertAlmostEqual(schedule.nu, 6.0, places=12)
        self.assertEqual(schedule.radii[0], 3.0)
        self.assertEqual(schedule.radii[-1], 0.5)
        self.assertAlmostEqual(schedule.radii[1], math.sqrt(1.5), places=12)

    def test_single_stage(self):
        schedule = make_schedule([0, 0], 2.0, 0.5, 1, 3)
        self.assertEqual(schedule.radii, (2.0, 0.5))
        self.assertAlmostEqual(schedule.nu, 64.0, places=10)

    def test_invariants(self):
        r0, rk, k, d = 2.7, 0.13, 5, 4
        schedule = make_schedule(np.zeros(3), r0, rk, k, d)
        self.assertAlmostEqual(schedule.nu ** k / (r0 / rk) ** d, 1.0, places=10)
        for i, r in enumerate(schedule.radii[:-1]):
            self.assertAlmostEqual(r / (r0 * schedule.nu ** (-i / d)), 1.0, places=12)

    def test_bad_inputs(self):
        for args in [(1.0, 2.0, 2, 2), (1.0, 1.0, 2, 2), (1.0, 0.0, 2, 2), (2.0, 1.0, 0, 2), (2.0, 1.0, 2, 0)]:
            with self.subTest(args=args), self.assertRaises(ScheduleError):
                make_schedule(np.zeros(2), *args)


class MinRadiusTests(SimpleTestCase):
    def test_hyperplane_never_shrinks(self):
        M = zoo.hyperplane_manifold(2)
        result = probe_min_radius(M, np.zeros(3), 1.0, 2_000, None, np.random.default_rng(1), pair_steps=500)
        self.assertEqual(result.radius, 1.0)
        self.assertEqual(result.shrinks, 0)
        self.assertEqual(result.negative_det_fraction, 0.0)

    def test_circle_shrinks_until_projections_succeed(self):
        M = zoo.circle_manifold()
        result = probe_min_radius(M, np.array([1.0, 0.0]), 2.0, 2_000, None, np.random.default_rng(2),
                                  pair_steps=500)
        self.assertGreaterEqual(result.shrinks, 1)
        self.assertLessEqual(result.radius, 1.0)
        self.assertEqual(result.rejected[0]['reason'], 'boundary-projection')

    def test_rotation_fold_is_caught_on_the_rim(self):
        # the tangent line through the identity of SO(2) meets the circle only for |t| <= sqrt(2)
        M = zoo.son_manifold(2)
        for seed in range(5):
            with self.subTest(seed=seed):
                result = probe_min_radius(M, zoo.son_start(2), math.sqrt(2), 200, None,
                                          np.random.default_rng(seed), pair_steps=500)
                self.assertAlmostEqual(result.radius, math.sqrt(2) / 2, places=12)
                self.assertEqual(result.shrinks, 1)
                self.assertEqual(result.rejected[0]['reason'], 'boundary-projection')
                self.assertEqual(result.negative_det_fraction, 0.0)

    def test_small_balls_have_no_negative_jacobians(self):
        rng = np.random.default_rng(3)
        chain = zoo.chain_spec(4)
        cases = {
            'son3': (zoo.son_manifold(3), zoo.son_start(3)),
            'chain4': (zoo.cluster_manifold(chain), zoo.cluster_start(chain, rng)),
        }
        for name, (M, x0) in cases.items():
            with self.subTest(name):
                result = probe_min_radius(M, x0, 0.05, 500, None, rng, pair_steps=500)
                self.assertEqual(result.radius, 0.05)
                self.assertEqual(result.negative_det_fraction, 0.0)

    def test_non_positive_start(self):
        with self.assertRaises(DomainError):
            probe_min_radius(zoo.circle_manifold(), np.array([1.0, 0.0]), 0.0, 10, None, np.random.default_rng(0))


class RatioTests(SimpleTestCase):
    def test_flat_ratio_is_nu(self):
        M = zoo.hyperplane_manifold(2)
        params = ProposalParams(0.5, uniform_density)
        estimate = estimate_ratio(M, uniform_density, np.zeros(3), 1.0, 1 / math.sqrt(2), 20_000, params,
                                  np.random.default_rng(3))
        self.assertEqual(estimate.R_hat, estimate.n_i / estimate.N_next)
        self.assertEqual(estimate.p_hat, estimate.N_next / estimate.n_i)
        sigma = math.sqrt((1 - estimate.p_hat) * estimate.tau_hat / (estimate.n_i * estimate.p_hat))
        self.assertLess(abs(estimate.R_hat / 2.0 - 1), 4 * sigma)
        self.assertEqual(estimate.burn_in, 200)
        self.assertIsNotNone(estimate.last_inner_point)
        self.assertLess(np.linalg.norm(estimate.last_inner_point), 1 / math.sqrt(2))

    def test_deeper_counts_are_nested(self):
        M = zoo.hyperplane_manifold(1)
        params = ProposalParams(0.5, uniform_density)
        estimate = estimate_ratio(M, uniform_density, np.zeros(2), 1.0, 0.5, 2_000, params,
                                  np.random.default_rng(4), deeper_radii=(0.25, 0.125))
        self.assertEqual(len(estimate.deeper_counts), 2)
        self.assertLessEqual(estimate.deeper_counts[0], estimate.N_next)
        self.assertLessEqual(estimate.deeper_counts[1], estimate.deeper_counts[0])

    def test_empty_inner_ball_fails_with_stage_index(self):
        M = zoo.hyperplane_manifold(2)
        params = ProposalParams(0.5, uniform_density)
        x_start = np.array([0.5, 0.5, 0.0])
        with self.assertRaises(StageFailureError) as ctx:
            estimate_ratio(M, uniform_density, np.zeros(3), 1.0, 1e-6, 200, params, np.random.default_rng(5),
                           x_start=x_start, stage=3)
        self.assertEqual(ctx.exception.stage, 3)
        self.assertEqual(ctx.exception.diagnostics['N_next'], 0)

    def test_infinite_ball_matches_plain_chain(self):
        M = zoo.torus_manifold()
        params = ProposalParams(0.5, uniform_density)
        plain = run_chain(M, params, zoo.torus_start(), 500, 5, np.random.default_rng(6))
        ball = run_chain(M.restricted_to_ball(zoo.torus_start(), math.inf), params, zoo.torus_start(), 500, 5,
                         np.random.default_rng(6))
        np.testing.assert_array_equal(plain.samples, ball.samples)


class InnermostTests(SimpleTestCase):
    def test_flat_disk_is_exact(self):
        M = zoo.flat_disk_manifold(2)
        estimate = estimate_innermost(M, uniform_density, np.zeros(3), 0.5, 1_000, np.random.default_rng(7))
        self.assertAlmostEqual(estimate.Z_k_hat, math.pi * 0.25, places=12)
        self.assertLess(estimate.rho_k, 1e-12)
        self.assertEqual(estimate.inside_fraction, 1.0)

    def test_circle_arc_length(self):
        # arc of the unit circle within distance 0.5 of (1, 0)
        exact = 4 * math.asin(0.25)
        estimate = estimate_innermost(zoo.circle_manifold(), uniform_density, np.array([1.0, 0.0]), 0.5,
                                      20_000, np.random.default_rng(8))
        self.assertLess(abs(estimate.Z_k_hat / exact - 1), 4 * estimate.rho_k)
        self.assertLess(estimate.inside_fraction, 1.0)

    def test_projection_failure_aborts(self):
        with self.assertRaises(InnermostProjectionError):
            estimate_innermost(zoo.circle_manifold(), uniform_density, np.array([1.0, 0.0]), 2.0, 1_000,
                               np.random.default_rng(9))


class IntegrateTests(SimpleTestCase):
    def torus_config(self, **kwargs):
        settings = dict(n_total=4_000, k=2, step_scale=0.5, center=(1.5, 0.0, 0.0), r_outer=3.0, r_inner=0.3)
        settings.update(kwargs)
        return IntegrationConfig(**settings)

    def test_estimate_is_product_of_stages(self):
        M = zoo.torus_manifold()
        estimate = integrate(M, uniform_density, self.torus_config(), np.random.default_rng(10))
        self.assertEqual(len(estimate.stages), 2)
        self.assertEqual(estimate.Z_hat, estimate.Z_k_hat * math.prod(s.R_hat for s in estimate.stages))
        self.assertAlmostEqual(estimate.log_Z_hat, math.log(estimate.Z_hat), places=10)
        expected_sigma = combine_error(estimate.rho_k, [(s.p_hat, s.tau_hat, s.n_i) for s in estimate.stages])
        self.assertEqual(estimate.sigma_r, expected_sigma)
        self.assertIsNone(estimate.probe)
        self.assertEqual((estimate.schedule.radii[0], estimate.schedule.radii[2]), (3.0, 0.3))
        self.assertAlmostEqual(estimate.schedule.radii[1], math.sqrt(3.0 * 0.3), places=12)

    def test_same_seed_same_estimate(self):
        M = zoo.torus_manifold()
        first = integrate(M, uniform_density, self.torus_config(), np.random.default_rng(11))
        second = integrate(M, uniform_density, self.torus_config(), np.random.default_rng(11))
        self.assertEqual(first.Z_hat, second.Z_hat)

    def test_parallel_stages(self):
        M = zoo.torus_manifold()
        estimate = integrate(M, uniform_density, self.torus_config(k=3, n_total=6_000, parallel=True, workers=3),
                             np.random.default_rng(12))
        self.assertEqual([s.stage for s in estimate.stages], [0, 1, 2])
        self.assertGreater(estimate.Z_hat, 0)

    def test_flat_disk_pipeline(self):
        entry = zoo.build('flat-disk', {'dim': 2})
        config = IntegrationConfig(n_total=20_000, k=2, step_scale=0.5, n_initial=2_000, n_probe=2_000,
                                   pair_steps=500)
        estimate = integrate(entry.manifold, entry.density, config, np.random.default_rng(13), entry.x_start)
        self.assertIsNotNone(estimate.probe)
        self.assertEqual(estimate.probe.shrinks, 0)
        self.assertLess(abs(estimate.Z_hat / math.pi - 1), 4 * estimate.sigma_r)

    def test_stage_step_fraction_caps_each_stage(self):
        M = zoo.torus_manifold()
        estimate = integrate(M, uniform_density, self.torus_config(stage_step_fraction=0.1),
                             np.random.default_rng(14))
        self.assertAlmostEqual(estimate.stages[0].step_scale, 0.3, places=12)
        self.assertAlmostEqual(estimate.stages[1].step_scale, 0.1 * math.sqrt(3.0 * 0.3), places=12)
        uncapped = integrate(M, uniform_density, self.torus_config(), np.random.default_rng(14))
        self.assertEqual([s.step_scale for s in uncapped.stages], [0.5, 0.5])

    def test_son2_volume_run(self):
        config = son_volume_config(2, 0.05)
        estimate = integrate(zoo.son_manifold(2), uniform_density, config, np.random.default_rng(15),
                             zoo.son_start(2))
        exact = zoo.son_volume_exact(2)
        self.assertEqual(estimate.stages[0].step_scale, 1.0)
        self.assertLess(abs(estimate.Z_hat / exact - 1), max(5 * estimate.sigma_r, 0.2))

    def test_missing_start_point(self):
        with self.assertRaises(InvalidStateError):
            integrate(zoo.torus_manifold(), uniform_density, IntegrationConfig(n_total=1_000),
                      np.random.default_rng(0))

    def test_infeasible_center(self):
        config = self.torus_config(center=(0.0, 0.0, 0.0))
        with self.assertRaises(InvalidStateError):
            integrate(zoo.torus_manifold(), uniform_density, config, np.random.default_rng(0))

    def test_config_validation(self):
        with self.assertRaises(DomainError):
            IntegrationConfig(k=0)
        with self.assertRaises(DomainError):
            IntegrationConfig(n_total=500, k=8)
        with self.assertRaises(DomainError):
            IntegrationConfig(burn_in_fraction=1.0)
        with self.assertRaises(DomainError):
            IntegrationConfig(stage_step_fraction=0.0)
