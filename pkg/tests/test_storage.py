import json
import os
import tempfile
import unittest

import numpy as np

from app.density import storage
from app.density.dictionary import build_dictionary
from app.density.dynamics import builtin_system, generate_local_snapshots, generate_snapshots
from app.density.exceptions import ArtifactError
from app.density.local_control import lqr_local
from app.density.types import InputLabel, LocalLinearModel


class StorageTests(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = self.directory.name

    def tearDown(self):
        self.directory.cleanup()

    def test_json_carries_hash(self):
        path = storage.write_json(os.path.join(self.root, 'a', 'b.json'), {'x': 1}, 'abc')
        self.assertEqual(storage.read_json(path), {'x': 1, 'config_hash': 'abc'})

    def test_json_errors(self):
        with self.assertRaises(ArtifactError):
            storage.read_json(os.path.join(self.root, 'missing.json'))
        path = os.path.join(self.root, 'broken.json')
        with open(path, 'w') as file:
            file.write('{')
        with self.assertRaises(ArtifactError):
            storage.read_json(path)

    def test_snapshots_survive_csv(self):
        data = generate_snapshots(builtin_system('duffing'), [[-3, 3], [-3, 3]], 25, 0.01, InputLabel.STEP, seed=2)
        storage.save_snapshots(self.root, 'step', data, 'abc')
        loaded = storage.load_snapshots(self.root, 'step')
        np.testing.assert_array_equal(loaded.x_points, data.x_points)
        np.testing.assert_array_equal(loaded.y_points, data.y_points)
        self.assertEqual(loaded.input_label, InputLabel.STEP)
        self.assertEqual(loaded.seed, 2)

        with open(os.path.join(self.root, 'step.csv')) as file:
            self.assertEqual(file.readline().strip(), 'x1,x2,y1,y2,u')
        columns = storage.read_json(os.path.join(self.root, 'step.json'))['columns']
        self.assertEqual(sorted(columns), ['u', 'x', 'y'])

    def test_local_snapshot_labels(self):
        data = generate_local_snapshots(builtin_system('duffing'), 0.2, 30, 10, 0.01, seed=0)
        storage.save_snapshots(self.root, 'local', data)
        self.assertEqual(storage.load_snapshots(self.root, 'local').n_zero_input, 10)

    def test_truncated_snapshot_table(self):
        data = generate_snapshots(builtin_system('scalar-cubic'), [[-1, 1]], 10, 0.01, InputLabel.ZERO, seed=0)
        storage.save_snapshots(self.root, 'zero', data)
        meta = storage.read_json(os.path.join(self.root, 'zero.json'))
        meta['M'] = 11
        storage.write_json(os.path.join(self.root, 'zero.json'), meta)
        with self.assertRaises(ArtifactError):
            storage.load_snapshots(self.root, 'zero')

    def test_matrix_files(self):
        M = np.arange(6.0).reshape(2, 3)
        storage.save_matrices(self.root, {'M': M}, {'dt': 0.1})
        self.assertEqual(os.path.getsize(os.path.join(self.root, 'M.bin')), 48)
        arrays, manifest = storage.load_matrices(self.root)
        np.testing.assert_array_equal(arrays['M'], M)
        self.assertEqual(manifest['arrays']['M']['shape'], [2, 3])

    def test_matrix_size_mismatch(self):
        storage.save_matrices(self.root, {'M': np.ones((2, 2))}, {})
        with open(os.path.join(self.root, 'M.bin'), 'wb') as file:
            file.write(np.ones(3).tobytes())
        with self.assertRaises(ArtifactError):
            storage.load_matrices(self.root)

    def test_dictionary_file(self):
        dictionary = build_dictionary([[-5, 5]], 5, sigma=0.1, delta=0.15)
        path = storage.save_dictionary(os.path.join(self.root, 'dictionary.json'), dictionary, 'abc')
        loaded = storage.load_dictionary(path)
        np.testing.assert_array_equal(loaded.centers, dictionary.centers)
        self.assertEqual(loaded.warnings, dictionary.warnings)
        with open(path) as file:
            self.assertIn('config_hash', json.load(file))

    def test_local_file(self):
        model = LocalLinearModel(A=np.array([[1.0]]), b=np.array([0.01]), dt=0.01, fit_residual=0.0)
        local = lqr_local(model, delta=0.15)
        path = storage.save_local(os.path.join(self.root, 'local.json'), local)
        loaded = storage.load_local(path)
        np.testing.assert_allclose(loaded.P, local.P)
        self.assertEqual(loaded.gamma, 0.15)
        self.assertEqual(loaded.r, 1.0)

    def test_trajectory_csv(self):
        path = storage.save_trajectory(os.path.join(self.root, 'trajectory_00.csv'), np.array([0.0, 0.1]),
                                       np.array([[1.0, 2.0], [1.5, 2.5]]), np.array([0.0, -1.0]))
        with open(path) as file:
            self.assertEqual(file.readline().strip(), 't,x1,x2,u')
        np.testing.assert_array_equal(storage.read_csv(path)[1], [0.1, 1.5, 2.5, -1.0])
