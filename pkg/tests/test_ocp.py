import unittest

import numpy as np

from app.density.dictionary import build_dictionary, build_quadrature, cost_data, lambda_matrix, quadratic_cost
from app.density.dynamics import builtin_system, generate_snapshots, linear_system, zero_control
from app.density.exceptions import DataError, DegenerateDensityError
from app.density.ocp import (
    GlobalController, assemble, ball_entry, certificate_residual, empirical_stability, evaluate_cost,
    recover_controller, running_cost, simulate_closed_loop, solve_ocp
)
from app.density.operators import generator_pair
from app.density.types import BatchTrajectory, CostForm, DensitySolution, GeneratorPair, InputLabel, Norm, SolveStatus


def scalar_problem_inputs():
    system = builtin_system('scalar-cubic')
    dictionary = build_dictionary([[-5, 5]], 5, sigma=1.225, delta=0.15)
    zero = generate_snapshots(system, dictionary.domain_box, 1000, 0.01, InputLabel.ZERO, seed=0)
    step = generate_snapshots(system, dictionary.domain_box, 1000, 0.01, InputLabel.STEP, seed=1)
    gen = generator_pair(zero, step, dictionary, lambda_matrix(dictionary), tol=1e-8)
    quadrature = build_quadrature(dictionary, 200)
    cost = cost_data(dictionary, quadrature, quadratic_cost([1.0]))
    return dictionary, gen, quadrature, cost


def make_solution(v, w):
    v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
    return DensitySolution(v=v, w=w, sink=np.zeros(1), sink_idx=np.array([0]), objective=0.0,
                           status=SolveStatus.OPTIMAL, eq_residual=0.0, norm=Norm.L2, r=1.0)


class DensityProgramTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dictionary, cls.gen, cls.quadrature, cls.cost = scalar_problem_inputs()

    def solve(self, norm, r=1.0, cost_form=CostForm.PERSPECTIVE):
        problem = assemble(self.gen, self.cost, r, norm, quadrature=self.quadrature, dictionary=self.dictionary,
                           cost_form=cost_form)
        return problem, solve_ocp(problem, max_iter=400)

    def test_l2_certificate(self):
        problem, solution = self.solve(Norm.L2)
        self.assertEqual(solution.status, SolveStatus.OPTIMAL)
        self.assertLessEqual(solution.eq_residual, 1e-6)
        self.assertTrue(np.all(solution.v >= 0))
        self.assertTrue(np.all(solution.sink >= 0))
        self.assertEqual(solution.sink_idx.tolist(), [2])
        self.assertAlmostEqual(certificate_residual(problem, solution.v, solution.w, solution.sink),
                               solution.eq_residual)

    def test_sink_absorbs_total_mass(self):
        _, solution = self.solve(Norm.L2)
        self.assertAlmostEqual(float(solution.sink.sum()), float(self.cost.m_vec.sum()), delta=1e-5)

    def test_l1_and_feasibility(self):
        for norm in (Norm.L1, Norm.FEASIBILITY):
            _, solution = self.solve(norm)
            self.assertEqual(solution.status, SolveStatus.OPTIMAL)
            self.assertLessEqual(solution.eq_residual, 1e-6)

    def test_diagonal_cost_form(self):
        _, solution = self.solve(Norm.L2, cost_form=CostForm.DIAGONAL)
        self.assertEqual(solution.cost_form, CostForm.DIAGONAL)
        self.assertLessEqual(solution.eq_residual, 1e-6)

    def test_larger_weight_shrinks_control(self):
        _, cheap = self.solve(Norm.L2, r=0.1)
        _, costly = self.solve(Norm.L2, r=10.0)
        psi = self.dictionary.evaluate(self.quadrature.nodes)
        penalty = [float(np.sum(self.quadrature.weights * (psi @ sol.w) ** 2 / (psi @ sol.v)))
                   for sol in (cheap, costly)]
        self.assertGreaterEqual(penalty[0], penalty[1] - 1e-6 * max(1.0, penalty[0]))

    def test_objective_ordering(self):
        _, feasible = self.solve(Norm.FEASIBILITY)
        objectives = [feasible.objective]
        for r in (1.0, 2.0):
            _, solution = self.solve(Norm.L1, r=r)
            self.assertEqual(solution.status, SolveStatus.OPTIMAL)
            objectives.append(solution.objective)
        for lower, upper in zip(objectives, objectives[1:]):
            self.assertLessEqual(lower, upper + 1e-6 * max(1.0, abs(upper)))

    def test_drift_only_needs_feasibility(self):
        drift_only = GeneratorPair(M0=self.gen.M0, M1=None, dt=self.gen.dt)
        with self.assertRaises(DataError):
            assemble(drift_only, self.cost, 1.0, Norm.L2, quadrature=self.quadrature, dictionary=self.dictionary)
        problem = assemble(drift_only, self.cost, 1.0, Norm.FEASIBILITY, dictionary=self.dictionary)
        self.assertEqual(problem.program.size, 11)

    def test_dimension_mismatch(self):
        small = GeneratorPair(M0=np.zeros((3, 3)), M1=np.zeros((3, 3)), dt=0.01)
        with self.assertRaises(DataError):
            assemble(small, self.cost, 1.0, Norm.L2, quadrature=self.quadrature, dictionary=self.dictionary)

    def test_negative_weight(self):
        with self.assertRaises(DataError):
            assemble(self.gen, self.cost, -1.0, Norm.L2, quadrature=self.quadrature, dictionary=self.dictionary)


class ControllerTests(unittest.TestCase):
    def setUp(self):
        self.dictionary = build_dictionary([[-5, 5]], 5, sigma=1.225, delta=0.15)

    def test_equal_coefficients(self):
        controller = recover_controller(make_solution(np.ones(5), np.ones(5)), self.dictionary)
        x = np.array([[0.3], [-1.7]])
        np.testing.assert_allclose(controller(x), self.dictionary.evaluate(x).sum(axis=1))

    def test_proportional_coefficients(self):
        v = np.array([1.0, 2.0, 3.0, 2.0, 1.0])
        controller = recover_controller(make_solution(v, -0.5 * v), self.dictionary)
        np.testing.assert_allclose(controller.ratio, -0.5)

    def test_clamped_outside_box(self):
        controller = recover_controller(make_solution(np.ones(5), np.arange(5.0)), self.dictionary)
        np.testing.assert_allclose(controller(np.array([[9.0]])), controller(np.array([[5.0]])))
        self.assertEqual(controller.count_clamped(np.array([[9.0], [1.0], [-6.0]])), 2)

    def test_floor(self):
        controller = recover_controller(make_solution([1.0, 0.0, 0.0, 0.0, 0.0], np.ones(5)), self.dictionary)
        self.assertAlmostEqual(controller.floor_eps, 1e-8)
        self.assertTrue(np.all(np.isfinite(controller.ratio)))

    def test_degenerate_density(self):
        with self.assertRaises(DegenerateDensityError):
            recover_controller(make_solution(np.zeros(5), np.ones(5)), self.dictionary)


class ClosedLoopTests(unittest.TestCase):
    def test_running_cost(self):
        times = np.linspace(0.0, 1.0, 11)
        batch = BatchTrajectory(
            times=times,
            states=np.stack([np.ones((11, 1)), np.full((11, 1), np.nan)]),
            inputs=np.stack([np.full(11, 2.0), np.full(11, np.nan)]),
            escape_times=np.array([np.inf, 0.5])
        )
        costs = running_cost(batch, quadratic_cost([1.0]), 1.0)
        self.assertAlmostEqual(costs[0], 5.0)
        self.assertEqual(costs[1], np.inf)

    def test_evaluate_cost_linear(self):
        system = linear_system([[-1.0]], [1.0])
        estimate = evaluate_cost(zero_control, system, [[1.0]], quadratic_cost([1.0]), 0.0, 5.0, 0.01)
        self.assertAlmostEqual(estimate.mean, (1 - np.exp(-10.0)) / 2, places=4)
        self.assertEqual(estimate.diverged, 0)

    def test_evaluate_cost_reports_divergence(self):
        estimate = evaluate_cost(zero_control, builtin_system('scalar-cubic'), [[3.0], [0.1]], quadratic_cost([1.0]),
                                 1.0, 1.0, 0.01)
        self.assertEqual(estimate.diverged, 1)
        self.assertTrue(np.isfinite(estimate.mean))

    def test_threads_match_serial(self):
        system = builtin_system('duffing')
        x0s = np.random.default_rng(0).uniform(-2, 2, size=(9, 2))
        serial = simulate_closed_loop(system, x0s, zero_control, 1.0, 0.01)
        threaded = simulate_closed_loop(system, x0s, zero_control, 1.0, 0.01, workers=4)
        np.testing.assert_array_equal(serial.states, threaded.states)

    def test_stable_linear_fraction(self):
        system = linear_system([[-1.0, 0.0], [0.0, -2.0]], [1.0, 0.0])
        estimate = empirical_stability(zero_control, system, 30, 8.0, 0.05, 0.01, [[-1, 1], [-1, 1]])
        self.assertEqual(estimate.fraction, 1.0)
        self.assertTrue(np.all(np.isfinite(estimate.entry_times)))

    def test_unstable_cubic_fraction(self):
        estimate = empirical_stability(zero_control, builtin_system('scalar-cubic'), 30, 5.0, 0.01, 0.01, [[-3, 3]])
        self.assertLessEqual(estimate.fraction, 0.05)

    def test_ball_entry(self):
        times = np.array([0.0, 1.0, 2.0])
        batch = BatchTrajectory(
            times=times,
            states=np.array([[[1.0], [0.05], [0.01]], [[1.0], [0.05], [0.5]]]),
            inputs=np.zeros((2, 3)),
            escape_times=np.full(2, np.inf)
        )
        estimate = ball_entry(batch, 0.1)
        self.assertEqual(estimate.stable.tolist(), [True, False])
        self.assertEqual(estimate.entry_times.tolist(), [1.0, np.inf])
        self.assertEqual(estimate.fraction, 0.5)

    def test_ball_reentry_after_leaving(self):
        times = np.array([0.0, 1.0, 2.0, 3.0])
        batch = BatchTrajectory(
            times=times,
            states=np.array([
                [[1.0], [0.05], [0.5], [0.05]],
                [[0.05], [0.05], [0.02], [0.01]],
                [[1.0], [0.5], [0.2], [0.05]]
            ]),
            inputs=np.zeros((3, 4)),
            escape_times=np.full(3, np.inf)
        )
        estimate = ball_entry(batch, 0.1)
        self.assertEqual(estimate.stable.tolist(), [False, True, True])
        self.assertEqual(estimate.entry_times.tolist(), [np.inf, 0.0, 3.0])

    def test_ball_leaving_before_horizon(self):
        times = np.array([0.0, 1.0, 2.0, 3.0])
        batch = BatchTrajectory(
            times=times,
            states=np.array([[[1.0], [0.05], [0.05], [0.5]]]),
            inputs=np.zeros((1, 4)),
            escape_times=np.full(1, np.inf)
        )
        estimate = ball_entry(batch, 0.1)
        self.assertFalse(estimate.stable[0])
        self.assertEqual(estimate.entry_times[0], np.inf)
        self.assertEqual(estimate.fraction, 0.0)

    def test_global_controller_density(self):
        dictionary = build_dictionary([[-5, 5]], 5, sigma=1.225)
        controller = GlobalController(dictionary, np.ones(5), np.zeros(5), 1e-8)
        np.testing.assert_allclose(controller.density(np.array([[0.0]])), dictionary.evaluate([0.0]).sum())
