import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.density.exceptions import ConvergenceError, DataError
from app.density.solver import (
    dump_program, make_program, project_simplex_rows, solve, solve_simplex_ls, solve_stochastic_ls
)
from app.density.types import SolveStatus
from app.density.validation import replay_certificate


def perspective_program(scale=1.0):
    """min 2v + w^2/v s.t. w = 1, v >= 0; optimum v = 1/sqrt(2), value 2 sqrt(2)"""
    return make_program(
        scale * np.array([2.0, 0.0]), [[0.0, 1.0]], [1.0], [0],
        perspective=([[0.0, 1.0]], [[1.0, 0.0]], [scale])
    )


class SimplexProjectionTests(unittest.TestCase):
    def test_point_on_simplex_unchanged(self):
        point = np.array([[0.2, 0.3, 0.5]])
        np.testing.assert_allclose(project_simplex_rows(point), point)

    def test_vertex(self):
        np.testing.assert_allclose(project_simplex_rows(np.array([[3.0, 0.0, -1.0]])), [[1.0, 0.0, 0.0]])

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
    def test_rows_on_simplex(self, V):
        P = project_simplex_rows(V)
        self.assertTrue(np.all(P >= 0))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (1, 4), elements=st.floats(-5, 5)))
    def test_projection_is_nearest(self, V):
        P = project_simplex_rows(V)
        candidates = project_simplex_rows(np.random.default_rng(0).uniform(-1, 2, size=(200, 4)))
        self.assertLessEqual(np.linalg.norm(V - P), np.min(np.linalg.norm(V - candidates, axis=1)) + 1e-9)


class SimplexLeastSquaresTests(unittest.TestCase):
    def test_identity_quadratic(self):
        p = solve_simplex_ls(np.eye(3), [0.2, 0.3, 0.5])
        np.testing.assert_allclose(p, [0.2, 0.3, 0.5], atol=1e-8)

    def test_active_face(self):
        p = solve_simplex_ls(np.eye(3), [2.0, 0.0, 0.0])
        np.testing.assert_allclose(p, [1.0, 0.0, 0.0], atol=1e-8)

    def test_stochastic_rows(self):
        target = np.array([[0.7, 0.3, 0.0], [0.1, 0.1, 0.8]])
        fit = solve_stochastic_ls(np.eye(2), target)
        np.testing.assert_allclose(fit.P, target, atol=1e-8)

    def test_zero_quadratic(self):
        p = solve_simplex_ls(np.zeros((3, 3)), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(p, [1.0, 0.0, 0.0])

        fit = solve_stochastic_ls(np.zeros((2, 2)), np.array([[0.1, 0.5, 0.2], [0.9, 0.0, 0.3]]))
        np.testing.assert_array_equal(fit.P, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        self.assertTrue(np.all(np.isfinite(fit.P)))

    def test_non_finite_data(self):
        with self.assertRaises(ConvergenceError):
            solve_simplex_ls(np.eye(2), [np.nan, 0.0])

    def test_budget_exhausted(self):
        H = np.array([[1.0, 0.99], [0.99, 1.0]])
        B = H @ np.array([[0.5, 0.5], [0.3, 0.7]])
        with self.assertRaises(ConvergenceError) as context:
            solve_stochastic_ls(H, B, tol=1e-15, max_iter=10)
        self.assertIsNotNone(context.exception.row)


class ProgramTests(unittest.TestCase):
    def test_linear_program(self):
        prog = make_program([1.0, 2.0], [[1.0, 1.0]], [1.0], [0, 1])
        result = solve(prog)
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, 1.0, delta=1e-5)
        np.testing.assert_allclose(result.z, [1.0, 0.0], atol=1e-5)

    def test_status_follows_budget(self):
        prog = make_program([1.0, 2.0], [[1.0, 1.0]], [1.0], [0, 1])
        for max_iter in (200, 1000):
            result = solve(prog, max_iter=max_iter)
            self.assertEqual(result.status, SolveStatus.OPTIMAL)
            self.assertLess(result.iterations, max_iter)
            self.assertTrue(result.kkt.within(1e-6))

        result = solve(prog, max_iter=3)
        self.assertEqual(result.status, SolveStatus.MAX_ITER)
        self.assertGreaterEqual(result.iterations, 3)

    def test_perspective_program(self):
        result = solve(perspective_program())
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, 2.0 * np.sqrt(2.0), delta=1e-5)
        self.assertAlmostEqual(result.z[0], 1.0 / np.sqrt(2.0), delta=1e-4)
        self.assertTrue(replay_certificate(perspective_program(), result).within(1e-6))

    def test_scaling_leaves_argmin(self):
        base = solve(perspective_program())
        scaled = solve(perspective_program(scale=1e3))
        np.testing.assert_allclose(scaled.z, base.z, atol=1e-4)

    def test_l1_program(self):
        # min 2|w| + v s.t. v - w = 1, v >= 0: optimum w = 0, v = 1
        prog = make_program([1.0, 0.0], [[1.0, -1.0]], [1.0], [0], l1=([[0.0, 1.0]], [2.0]))
        result = solve(prog)
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, 1.0, delta=1e-5)
        self.assertAlmostEqual(result.z[1], 0.0, delta=1e-4)

    def test_monotone_merit(self):
        result = solve(perspective_program())
        for tau in sorted({tau for tau, _ in result.history}):
            values = [value for level, value in result.history if level == tau]
            self.assertTrue(all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(values, values[1:])))

    def test_feasibility_only(self):
        prog = make_program(np.zeros(3), [[1.0, 1.0, 1.0]], [3.0], [0, 1, 2])
        result = solve(prog)
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertTrue(np.all(result.z > 0))
        self.assertAlmostEqual(result.z.sum(), 3.0)

    def test_no_strictly_feasible_point(self):
        prog = make_program([1.0, 1.0], [[1.0, 1.0]], [-1.0], [0, 1])
        result = solve(prog)
        self.assertEqual(result.status, SolveStatus.INFEASIBLE)
        self.assertGreaterEqual(result.phase1_bound, 0.0)

    def test_inconsistent_equalities(self):
        prog = make_program([1.0, 1.0], [[1.0, 0.0], [1.0, 0.0]], [1.0, 2.0], [0, 1])
        result = solve(prog)
        self.assertEqual(result.status, SolveStatus.INFEASIBLE)
        self.assertEqual(result.phase1_bound, float('inf'))

    def test_invalid_programs(self):
        with self.assertRaises(DataError):
            make_program([1.0, 0.0], [[1.0, 1.0]], [1.0], [0], perspective=([[0.0, 1.0]], [[1.0, 0.0]], [-1.0]))
        with self.assertRaises(DataError):
            make_program([1.0, 0.0], [[1.0, 1.0]], [1.0], [0], perspective=([[1.0, 0.0]], [[0.0, 1.0]], [1.0]))
        with self.assertRaises(DataError):
            make_program([1.0, 0.0], [[1.0, 1.0]], [1.0, 2.0], [0])
        with self.assertRaises(DataError):
            solve(perspective_program(), tol=0.0)

    def test_dump(self):
        with tempfile.TemporaryDirectory() as directory:
            path = dump_program(perspective_program(), directory)
            self.assertTrue(os.path.exists(path))
            self.assertEqual(np.fromfile(os.path.join(directory, 'eq_A.bin'), dtype='<f8').tolist(), [0.0, 1.0])


class BruteForceTests(unittest.TestCase):
    """Random small programs against grid search or enumeration of the active faces"""
    instances = 100

    def assertCertified(self, prog, result, expected):
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(result.objective, expected, delta=1e-4)
        self.assertTrue(result.kkt.within(1e-6))
        self.assertTrue(replay_certificate(prog, result).within(1e-6))

    def test_random_perspective_instances(self):
        rng = np.random.default_rng(7)
        grid = np.linspace(0.0, 1.0, 200001)
        for _ in range(self.instances):
            # z = (v1, v2, w), v1 + v2 = 1, w = w0; cost c'v + r w^2 / (a'v)
            c = rng.uniform(0.1, 2.0, size=2)
            a = rng.uniform(0.1, 1.0, size=2)
            w0, r = rng.uniform(-1.0, 1.0), rng.uniform(0.1, 2.0)
            prog = make_program([c[0], c[1], 0.0], [[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0, w0], [0, 1],
                                perspective=([[0.0, 0.0, 1.0]], [[a[0], a[1], 0.0]], [r]))
            values = c[0] * grid + c[1] * (1 - grid) + r * w0 ** 2 / (a[0] * grid + a[1] * (1 - grid))
            self.assertCertified(prog, solve(prog), values.min())

    def test_random_l1_instances(self):
        rng = np.random.default_rng(11)
        grid = np.linspace(0.0, 1.0, 200001)
        for _ in range(self.instances):
            # z = (v1, v2, w), v1 + v2 = 1, w = a'v; cost c'v + r |w|
            c = rng.uniform(-1.0, 2.0, size=2)
            a = rng.uniform(-1.0, 1.0, size=2)
            r = rng.uniform(0.1, 3.0)
            prog = make_program([c[0], c[1], 0.0], [[1.0, 1.0, 0.0], [a[0], a[1], -1.0]], [1.0, 0.0], [0, 1],
                                l1=([[0.0, 0.0, 1.0]], [r]))
            values = c[0] * grid + c[1] * (1 - grid) + r * np.abs(a[0] * grid + a[1] * (1 - grid))
            self.assertCertified(prog, solve(prog), values.min())

    def test_random_simplex_instances(self):
        rng = np.random.default_rng(13)
        faces = [np.flatnonzero(mask) for mask in
                 (np.array([(k >> i) & 1 for i in range(3)], dtype=bool) for k in range(1, 8))]
        for _ in range(self.instances):
            M = rng.normal(size=(3, 3))
            Q = M @ M.T + 0.1 * np.eye(3)
            rhs = rng.normal(size=3)

            best = np.inf
            for face in faces:
                # stationary point of the quadratic on the affine hull of the face
                k = face.size
                kkt = np.block([[Q[np.ix_(face, face)], np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
                p_face = np.linalg.solve(kkt, np.append(rhs[face], 1.0))[:k]
                if np.all(p_face >= -1e-12):
                    p = np.zeros(3)
                    p[face] = p_face
                    best = min(best, 0.5 * p @ Q @ p - rhs @ p)

            p = solve_simplex_ls(Q, rhs)
            self.assertAlmostEqual(p.sum(), 1.0, delta=1e-9)
            self.assertGreaterEqual(p.min(), -1e-12)
            self.assertAlmostEqual(0.5 * p @ Q @ p - rhs @ p, best, delta=1e-7)
