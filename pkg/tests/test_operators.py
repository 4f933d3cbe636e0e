import unittest

import numpy as np

from app.density.dictionary import IdentityDictionary, build_dictionary, lambda_matrix
from app.density.dynamics import builtin_system, generate_snapshots, linear_system
from app.density.exceptions import DataError
from app.density.operators import edmd_fit, edmd_matrices, generator_pair, koopman_spectrum, nsdmd_fit
from app.density.types import InputLabel


def scalar_fit_inputs(M=1000, counts=5, sigma=1.225, seed=0):
    system = builtin_system('scalar-cubic')
    dictionary = build_dictionary([[-5, 5]], counts, sigma=sigma, delta=0.15)
    zero = generate_snapshots(system, dictionary.domain_box, M, 0.01, InputLabel.ZERO, seed=seed)
    step = generate_snapshots(system, dictionary.domain_box, M, 0.01, InputLabel.STEP, seed=seed + 1)
    return dictionary, zero, step


class EdmdTests(unittest.TestCase):
    def test_linear_oracle(self):
        system = linear_system([[-1.0]], [0.0])
        for dt in (0.01, 0.1):
            data = generate_snapshots(system, [[-1.0, 1.0]], 200, dt, InputLabel.ZERO, seed=0)
            K = edmd_fit(edmd_matrices(data, IdentityDictionary(dim=1)))
            self.assertLessEqual(abs(K[0, 0] - np.exp(-dt)), 1e-6)

    def test_planar_linear_map(self):
        A = np.array([[0.0, 1.0], [-2.0, -0.3]])
        data = generate_snapshots(linear_system(A, [0.0, 0.0]), [[-1, 1], [-1, 1]], 100, 0.05, InputLabel.ZERO, seed=4)
        K = edmd_fit(edmd_matrices(data, IdentityDictionary(dim=2)))
        step = np.linalg.lstsq(data.x_points, data.y_points, rcond=None)[0]
        np.testing.assert_allclose(K, step, atol=1e-10)

    def test_spectrum_sorted(self):
        spectrum = koopman_spectrum(np.diag([0.2, -0.9, 0.5]))
        np.testing.assert_allclose(np.abs(spectrum), [0.9, 0.5, 0.2])

    def test_dimension_mismatch(self):
        _, zero, _ = scalar_fit_inputs(M=20)
        with self.assertRaises(DataError):
            edmd_matrices(zero, IdentityDictionary(dim=2))


class NsdmdTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dictionary, cls.zero, cls.step = scalar_fit_inputs()
        cls.Lambda = lambda_matrix(cls.dictionary)
        cls.fit = nsdmd_fit(edmd_matrices(cls.zero, cls.dictionary), cls.Lambda, 0.01, tol=1e-8)

    def test_markov_structure(self):
        self.assertGreaterEqual(self.fit.min_entry, -1e-9)
        self.assertLessEqual(self.fit.max_row_sum_deviation, 1e-8)
        np.testing.assert_allclose(self.fit.P.sum(axis=0), 1.0, atol=1e-8)

    def test_generator_columns_vanish(self):
        np.testing.assert_allclose(self.fit.M_gen.sum(axis=0), 0.0, atol=1e-8 / 0.01)
        np.testing.assert_allclose(self.fit.M_gen, (self.fit.P - np.eye(5)) / 0.01)

    def test_constrained_never_beats_unconstrained(self):
        self.assertGreaterEqual(self.fit.residual, self.fit.unconstrained_residual - 1e-12)

    def test_diagnostics(self):
        self.assertEqual(self.fit.ridge, 0.0)
        self.assertGreater(self.fit.lambda_condition, 1.0)
        self.assertLessEqual(self.fit.kkt_residual, 1e-8)


class GeneratorPairTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dictionary, cls.zero, cls.step = scalar_fit_inputs(M=600)
        cls.Lambda = lambda_matrix(cls.dictionary)

    def test_pair(self):
        gen = generator_pair(self.zero, self.step, self.dictionary, self.Lambda, tol=1e-8)
        self.assertEqual(gen.M0.shape, (5, 5))
        self.assertEqual(gen.M1.shape, (5, 5))
        np.testing.assert_allclose(gen.M1, (gen.step_fit.P - gen.zero_fit.P) / 0.01)
        np.testing.assert_allclose(gen.M1.sum(axis=0), 0.0, atol=1e-6)

    def test_drift_only(self):
        gen = generator_pair(self.zero, None, self.dictionary, self.Lambda, tol=1e-8)
        self.assertIsNone(gen.M1)
        self.assertIsNone(gen.step_fit)

    def test_labels_checked(self):
        with self.assertRaises(DataError):
            generator_pair(self.step, self.zero, self.dictionary, self.Lambda)

    def test_time_steps_checked(self):
        system = builtin_system('scalar-cubic')
        other = generate_snapshots(system, [[-5, 5]], 50, 0.02, InputLabel.STEP, seed=9)
        with self.assertRaises(DataError):
            generator_pair(self.zero, other, self.dictionary, self.Lambda)

    def test_consistent_across_time_steps(self):
        # same sample points; the finite-difference generator changes by O(dt) when dt is halved
        system = builtin_system('scalar-cubic')
        dictionary = build_dictionary([[-2, 2]], 5, delta=0.15)
        Lambda = lambda_matrix(dictionary)
        generators = []
        for dt in (0.01, 0.005):
            data = generate_snapshots(system, dictionary.domain_box, 800, dt, InputLabel.ZERO, seed=2)
            generators.append(nsdmd_fit(edmd_matrices(data, dictionary), Lambda, dt, tol=1e-8).M_gen)
        self.assertLessEqual(np.linalg.norm(generators[0] - generators[1]), 0.15 * np.linalg.norm(generators[0]))


class BenchmarkNsdmdTests(unittest.TestCase):
    benchmarks = (
        ('scalar-cubic', [[-5, 5]], 5),
        ('duffing', [[-3, 3], [-3, 3]], 4),
        ('vdp3d', [[-1, 1], [-1, 1], [-1, 1]], 3),
    )

    def test_markov_structure(self):
        for name, box, counts in self.benchmarks:
            with self.subTest(system=name):
                dictionary = build_dictionary(box, counts, sigma_factor=0.49, delta=0.1)
                data = generate_snapshots(builtin_system(name), dictionary.domain_box, 1500, 0.01, InputLabel.ZERO,
                                          seed=5)
                fit = nsdmd_fit(edmd_matrices(data, dictionary), lambda_matrix(dictionary), 0.01, tol=1e-8,
                                max_iter=100000)
                size = dictionary.size
                self.assertEqual(fit.P.shape, (size, size))
                self.assertGreaterEqual(fit.min_entry, -1e-9)
                self.assertLessEqual(fit.max_row_sum_deviation, 1e-8)
                np.testing.assert_allclose(fit.M_gen.sum(axis=0), 0.0, atol=1e-6)
                self.assertGreaterEqual(fit.residual, fit.unconstrained_residual - 1e-12)
