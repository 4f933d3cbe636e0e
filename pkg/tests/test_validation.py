import json
import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from app.density.dictionary import build_dictionary
from app.density.dynamics import builtin_system, integrate, zero_control
from app.density.exceptions import ArtifactError
from app.density.types import GeneratorPair
from app.density.validation import (
    analytic_generator, compare_scalar, generator_check, hjb_residual, invariant_suite, scalar_oracle
)
from app.density import storage


class OracleTests(unittest.TestCase):
    def setUp(self):
        self.oracle = scalar_oracle()

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5.0, 5.0))
    def test_hjb_residual_vanishes(self, x):
        residual = hjb_residual(self.oracle, [x])[0]
        self.assertLessEqual(abs(residual), 1e-8 * (1.0 + x ** 6))

    def test_value_derivative(self):
        x = np.linspace(-3, 3, 13)
        step = 1e-6
        numeric = (self.oracle.value_function(x + step) - self.oracle.value_function(x - step)) / (2 * step)
        np.testing.assert_allclose(self.oracle.value_derivative(x), numeric, rtol=1e-6, atol=1e-6)

    def test_optimal_loop_is_stable(self):
        trajectory = integrate(builtin_system('scalar-cubic'), [3.0], self.oracle, 10.0, 0.01)
        self.assertLess(abs(trajectory.final_state[0]), 1e-3)

    def test_self_comparison(self):
        report = compare_scalar(self.oracle, self.oracle, [-2.0, 1.0], 5.0, 0.01, builtin_system('scalar-cubic'))
        self.assertEqual(report.cost_ratio, 1.0)
        self.assertEqual(report.max_gap, 0.0)
        self.assertEqual(report.diverged, 0)
        self.assertEqual(len(report.trajectories), 2)

    def test_uncontrolled_comparison_diverges(self):
        report = compare_scalar(zero_control, self.oracle, [3.0], 5.0, 0.01, builtin_system('scalar-cubic'))
        self.assertEqual(report.diverged, 1)
        self.assertEqual(report.rows[0].sup_state_gap, float('inf'))


class GeneratorCheckTests(unittest.TestCase):
    def setUp(self):
        self.system = builtin_system('scalar-cubic')
        self.dictionary = build_dictionary([[-5, 5]], 5, sigma=1.225)

    def test_analytic_generator_matches_finite_differences(self):
        x = np.linspace(-4, 4, 17).reshape(-1, 1)
        step = 1e-6

        def flux(points):
            return self.system.f(points) * self.dictionary.evaluate(points)

        numeric = -(flux(x + step) - flux(x - step)) / (2 * step)
        np.testing.assert_allclose(analytic_generator(self.system, self.dictionary, x), numeric, atol=1e-5)

    def test_zero_generator_scores_one(self):
        grid = np.linspace(-5, 5, 41).reshape(-1, 1)
        gen = GeneratorPair(M0=np.zeros((5, 5)), M1=None, dt=0.01)
        score = generator_check(gen, self.system, self.dictionary, grid)
        self.assertAlmostEqual(score, 1.0)

    def test_boundary_centers_included(self):
        grid = np.linspace(-5, 5, 41).reshape(-1, 1)
        gen = GeneratorPair(M0=np.zeros((5, 5)), M1=None, dt=0.01)
        self.assertTrue(np.isfinite(generator_check(gen, self.system, self.dictionary, grid, interior_only=False)))


class InvariantSuiteTests(unittest.TestCase):
    def test_missing_directory(self):
        with self.assertRaises(ArtifactError):
            invariant_suite('/nonexistent/run/dir')

    def test_mixed_config_hashes(self):
        with tempfile.TemporaryDirectory() as directory:
            storage.write_json(os.path.join(directory, 'config.json'), {'config': {}}, 'aaa')
            storage.write_json(os.path.join(directory, 'other.json'), {'value': 1}, 'bbb')
            failures = invariant_suite(directory)
        self.assertEqual([failure['check'] for failure in failures], ['config_hash'])

    def test_broken_markov_matrix(self):
        with tempfile.TemporaryDirectory() as directory:
            P = np.array([[0.9, 0.2], [0.2, 0.8]])
            storage.save_matrices(os.path.join(directory, 'operators'), {'M0': (P - np.eye(2)) / 0.01, 'P0': P},
                                  {'dt': 0.01}, 'aaa')
            checks = {failure['check'] for failure in invariant_suite(directory)}
        self.assertIn('P0.row_sums', checks)
        self.assertIn('M0.column_sums', checks)

    def test_clean_directory(self):
        with tempfile.TemporaryDirectory() as directory:
            with open(os.path.join(directory, 'notes.json'), 'w') as file:
                json.dump([1, 2], file)
            self.assertEqual(invariant_suite(directory), [])
