import math

import numpy as np
from django.test import SimpleTestCase
from scipy.linalg import expm

from manifolds.exceptions import DegenerateConstraintError, DomainError, InvalidStateError
from manifolds.utils import zoo
from manifolds.utils.core import (
    ConstraintManifold,
    NewtonParams,
    check_gradients,
    cross_jacobian,
    find_feasible_point,
    project,
    tangent_frame,
    tangential_decompose,
)


def circle_point(angle):
    return np.array([math.cos(angle), math.sin(angle)])


class TangentFrameTests(SimpleTestCase):
    def test_torus_frame_is_orthonormal(self):
        M = zoo.torus_manifold()
        frame = tangent_frame(M, zoo.torus_start())
        U = np.hstack([frame.U_tan, frame.U_norm])
        self.assertEqual(frame.d, 2)
        self.assertEqual(frame.m, 1)
        self.assertLess(np.abs(U.T @ U - np.eye(3)).max(), 1e-12)
        self.assertLess(np.abs(frame.U_tan.T @ frame.U_norm).max(), 1e-12)

    def test_normal_space_spans_the_gradients(self):
        M = zoo.son_manifold(3)
        rng = np.random.default_rng(1)
        x = zoo.son_start(3)
        frame = tangent_frame(M, x)
        leftover = frame.Q - frame.U_norm @ (frame.U_norm.T @ frame.Q)
        self.assertLess(np.linalg.norm(leftover) / np.linalg.norm(frame.Q), 1e-10)
        # tangent space of SO(3) at the identity is the skew-symmetric matrices
        self.assertEqual(frame.d, 3)
        skew = rng.standard_normal((3, 3))
        skew = (skew - skew.T).ravel()
        self.assertLess(np.linalg.norm(frame.normal_projector() @ skew), 1e-12)

    def test_circle_tangent_is_perpendicular_to_position(self):
        M = zoo.circle_manifold()
        x = circle_point(0.7)
        frame = tangent_frame(M, x)
        self.assertAlmostEqual(float(frame.U_tan[:, 0] @ x), 0.0, places=12)
        self.assertLess(np.linalg.norm(frame.tangent_projector() @ x), 1e-12)

    def test_rank_deficient_gradients_raise(self):
        M = zoo.sphere_manifold(2)
        with self.assertRaises(DegenerateConstraintError) as ctx:
            tangent_frame(M, np.zeros(3))
        self.assertEqual(ctx.exception.smax, 0.0)

    def test_no_equalities_gives_identity_frame(self):
        M = ConstraintManifold(ambient_dim=3, equality_count=0, q=lambda x: np.zeros(0),
                               grad_q=lambda x: np.zeros((3, 0)))
        frame = tangent_frame(M, np.ones(3))
        np.testing.assert_array_equal(frame.U_tan, np.eye(3))
        self.assertEqual(frame.m, 0)


class FrameOrientationTests(SimpleTestCase):
    def assertOriented(self, frame):
        U = np.hstack([frame.U_norm, frame.U_tan])
        self.assertAlmostEqual(np.linalg.det(U), 1.0, places=10)
        # U_norm is the Gram-Schmidt basis of the gradients
        self.assertTrue(np.all(np.diag(frame.U_norm.T @ frame.Q) > 0))

    def test_frames_are_positively_oriented(self):
        rng = np.random.default_rng(2)
        cases = [
            (zoo.torus_manifold(), zoo.torus_start()),
            (zoo.torus_manifold(), np.array([-1.5, 0.0, 0.0])),
            (zoo.circle_manifold(), circle_point(2.5)),
            (zoo.son_manifold(3), zoo.son_start(3)),
            (zoo.cluster_manifold(zoo.chain_spec(4)), zoo.cluster_start(zoo.chain_spec(4), rng)),
        ]
        for M, x in cases:
            with self.subTest(manifold=M.name, x=x[:3].tolist()):
                self.assertOriented(tangent_frame(M, x))

    def test_nearby_rotations_have_positive_jacobian(self):
        M = zoo.son_manifold(3)
        frame0 = tangent_frame(M, zoo.son_start(3))
        rng = np.random.default_rng(5)
        for _ in range(50):
            A = 0.05 * rng.standard_normal((3, 3))
            y = expm(A - A.T).ravel()
            self.assertGreater(cross_jacobian(frame0, tangent_frame(M, y)), 0.5)

    def test_circle_jacobian_keeps_its_sign(self):
        # the oriented tangent at angle t is (-sin t, cos t)
        M = zoo.circle_manifold()
        fx = tangent_frame(M, circle_point(0.0))
        for angle in (1.0, 2.5, -2.0):
            with self.subTest(angle=angle):
                self.assertAlmostEqual(cross_jacobian(fx, tangent_frame(M, circle_point(angle))), math.cos(angle),
                                       places=12)


class ProjectTests(SimpleTestCase):
    def test_converges_onto_the_circle(self):
        M = zoo.circle_manifold()
        x = np.array([1.0, 0.0])
        frame = tangent_frame(M, x)
        params = NewtonParams()
        result = project(M, x + np.array([0.0, 0.3]), frame.Q, params)
        self.assertTrue(result.success)
        self.assertLessEqual(np.linalg.norm(M.residual(result.point)), params.tol)
        self.assertAlmostEqual(result.point[1], 0.3, places=12)
        self.assertAlmostEqual(result.point[0], math.sqrt(1 - 0.09), places=10)

    def test_circle_example_with_closed_form_root(self):
        # (1 + 2a)^2 + 0.01 - 1 = 0; Newton from a = 0 picks the root near zero
        M = zoo.circle_manifold()
        Q = np.array([[2.0], [0.0]])
        result = project(M, np.array([1.0, 0.1]), Q, NewtonParams())
        self.assertTrue(result.success)
        self.assertAlmostEqual(result.a[0], (math.sqrt(0.99) - 1) / 2, places=12)
        self.assertAlmostEqual(result.a[0], -0.0025063, places=7)
        np.testing.assert_allclose(result.point, [0.994987, 0.1], atol=1e-6)

    def test_already_on_manifold_takes_zero_iterations(self):
        M = zoo.circle_manifold()
        x = np.array([0.0, 1.0])
        result = project(M, x, tangent_frame(M, x).Q, NewtonParams())
        self.assertTrue(result.success)
        self.assertEqual(result.iterations, 0)
        np.testing.assert_array_equal(result.a, np.zeros(1))

    def test_unreachable_point_fails_with_nmax_iterations(self):
        # the normal line through (1, 2) never meets the unit circle
        M = zoo.circle_manifold()
        x = np.array([1.0, 0.0])
        params = NewtonParams(nmax=7)
        result = project(M, np.array([1.0, 2.0]), tangent_frame(M, x).Q, params)
        self.assertFalse(result.success)
        self.assertEqual(result.iterations, 7)

    def test_newton_params_validation(self):
        with self.assertRaises(DomainError):
            NewtonParams(tol=0.0)
        with self.assertRaises(DomainError):
            NewtonParams(nmax=0)


class CrossJacobianTests(SimpleTestCase):
    def test_same_frame_has_unit_jacobian(self):
        M = zoo.torus_manifold()
        frame = tangent_frame(M, zoo.torus_start())
        self.assertAlmostEqual(abs(cross_jacobian(frame, frame)), 1.0, places=12)

    def test_circle_jacobian_is_cosine_of_angle(self):
        M = zoo.circle_manifold()
        fx = tangent_frame(M, circle_point(0.0))
        fy = tangent_frame(M, circle_point(1.1))
        self.assertAlmostEqual(abs(cross_jacobian(fx, fy)), abs(math.cos(1.1)), places=12)
        self.assertAlmostEqual(abs(cross_jacobian(fy, fx)), abs(cross_jacobian(fx, fy)), places=14)

    def test_perpendicular_tangents_give_zero(self):
        M = zoo.circle_manifold()
        fx = tangent_frame(M, circle_point(0.0))
        fy = tangent_frame(M, circle_point(math.pi / 2))
        self.assertAlmostEqual(cross_jacobian(fx, fy), 0.0, places=12)

    def test_dimension_mismatch_raises(self):
        fx = tangent_frame(zoo.circle_manifold(), circle_point(0.0))
        fy = tangent_frame(zoo.torus_manifold(), zoo.torus_start())
        with self.assertRaises(DomainError):
            cross_jacobian(fx, fy)


class DecomposeTests(SimpleTestCase):
    def test_parts_are_orthogonal_and_sum_to_input(self):
        M = zoo.torus_manifold()
        frame = tangent_frame(M, zoo.torus_start())
        delta = np.array([0.3, -0.2, 0.7])
        v_t, w_n = tangential_decompose(delta, frame)
        np.testing.assert_allclose(v_t + w_n, delta, atol=1e-15)
        self.assertAlmostEqual(float(v_t @ w_n), 0.0, places=14)
        # at (1.5, 0, 0) the normal is the x axis
        np.testing.assert_allclose(w_n, [0.3, 0.0, 0.0], atol=1e-14)

    def test_wrong_shape_raises(self):
        frame = tangent_frame(zoo.circle_manifold(), circle_point(0.0))
        with self.assertRaises(DomainError):
            tangential_decompose(np.zeros(3), frame)


class ManifoldTests(SimpleTestCase):
    def test_gradient_check_on_zoo_manifolds(self):
        rng = np.random.default_rng(4)
        cases = [
            (zoo.torus_manifold(), np.array([1.2, 0.3, 0.2])),
            (zoo.cone_manifold(), np.array([0.3, 0.4, 0.5])),
            (zoo.son_manifold(3), zoo.son_start(3) + 0.1 * rng.standard_normal(9)),
            (zoo.cluster_manifold(zoo.loop_spec(4)), rng.standard_normal(12)),
            (zoo.sphere_manifold(3), rng.standard_normal(4)),
        ]
        for M, x in cases:
            with self.subTest(manifold=M.name):
                self.assertLess(check_gradients(M, x), 1e-5)

    def test_broken_gradient_is_detected(self):
        M = zoo.circle_manifold()
        broken = ConstraintManifold(ambient_dim=2, equality_count=1, q=M.q, grad_q=lambda x: x.reshape(2, 1))
        self.assertGreater(check_gradients(broken, np.array([0.6, 0.8])), 0.1)

    def test_restricted_to_ball_adds_one_inequality(self):
        M = zoo.cone_manifold()
        ball = M.restricted_to_ball(np.array([0.5, 0.0, 0.5]), 0.2)
        self.assertEqual(ball.inequality_count, 3)
        self.assertTrue(ball.satisfies_inequalities(np.array([0.6, 0.0, 0.6])))
        self.assertFalse(ball.satisfies_inequalities(np.array([0.0, 0.6, 0.6])))
        self.assertEqual(ball.intrinsic_dim, M.intrinsic_dim)

    def test_invalid_construction(self):
        with self.assertRaises(DomainError):
            ConstraintManifold(ambient_dim=0, equality_count=0, q=None, grad_q=None)
        with self.assertRaises(DomainError):
            ConstraintManifold(ambient_dim=2, equality_count=1, q=None, grad_q=None, inequality_count=1)

    def test_find_feasible_point_for_a_custom_cluster(self):
        spec = zoo.ClusterSpec(3, ((0, 1), (1, 2)))
        M = zoo.cluster_manifold(spec)
        rng = np.random.default_rng(11)
        x = find_feasible_point(M, rng.standard_normal(9), rng=rng, jitter=0.5, restarts=50)
        self.assertTrue(M.is_feasible(x, 1e-12))

    def test_find_feasible_point_gives_up(self):
        # x^2 + 1 = 0 has no real solution
        M = ConstraintManifold(ambient_dim=1, equality_count=1, q=lambda x: np.array([x[0] ** 2 + 1]),
                               grad_q=lambda x: np.array([[2 * x[0]]]))
        with self.assertRaises(InvalidStateError):
            find_feasible_point(M, np.array([0.5]), rng=np.random.default_rng(0), restarts=3)
