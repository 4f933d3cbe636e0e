"""
Saving and loading of every pipeline artifact

Matrices are raw little-endian float64 files next to a JSON manifest; snapshots,
trajectories and reports are CSV. Every JSON file carries the config hash.
"""

import typing as t
import json
import os

import numpy as np

from .dictionary import RbfDictionary
from .exceptions import ArtifactError
from .local_control import LocalController
from .types import (
    CostData, CostForm, DensitySolution, GeneratorPair, InputLabel, Norm, QuadratureRule, SnapshotSet, SolveStatus
)

CSV_FORMAT = '%.17g'
MANIFEST = 'manifest.json'


def write_json(path: str, payload: t.Dict[str, t.Any], config_hash: t.Optional[str] = None) -> str:
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    payload = dict(payload)
    if config_hash is not None:
        payload['config_hash'] = config_hash
    with open(path, 'w') as file:
        json.dump(payload, file, indent=2, sort_keys=True)
        file.write('\n')
    return path


def read_json(path: str) -> t.Dict[str, t.Any]:
    """
    Raises
    ------
    ArtifactError
        If the file is missing or not valid JSON
    """
    try:
        with open(path) as file:
            return json.load(file)
    except FileNotFoundError:
        raise ArtifactError(f'Missing artifact {path}; run the producing command first')
    except json.JSONDecodeError as error:
        raise ArtifactError(f'Corrupt artifact {path}: {error}')


def write_csv(path: str, header: t.Sequence[str], rows: np.ndarray) -> str:
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    np.savetxt(path, np.atleast_2d(rows), fmt=CSV_FORMAT, delimiter=',', header=','.join(header), comments='')
    return path


def read_csv(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ArtifactError(f'Missing artifact {path}; run the producing command first')
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2))
    except ValueError as error:
        raise ArtifactError(f'Corrupt artifact {path}: {error}')


def save_matrices(directory: str, arrays: t.Dict[str, np.ndarray], meta: t.Dict[str, t.Any],
                  config_hash: t.Optional[str] = None) -> str:
    os.makedirs(directory, exist_ok=True)
    entries = {}
    for name, array in sorted(arrays.items()):
        filename = f'{name}.bin'
        array = np.ascontiguousarray(array, dtype='<f8')
        array.tofile(os.path.join(directory, filename))
        entries[name] = {'file': filename, 'shape': list(array.shape)}
    return write_json(os.path.join(directory, MANIFEST), {'arrays': entries, **meta}, config_hash)


def load_matrices(directory: str) -> t.Tuple[t.Dict[str, np.ndarray], t.Dict[str, t.Any]]:
    manifest = read_json(os.path.join(directory, MANIFEST))
    arrays = {}
    for name, entry in manifest.get('arrays', {}).items():
        path = os.path.join(directory, entry['file'])
        if not os.path.exists(path):
            raise ArtifactError(f'Missing matrix file {path}')
        array = np.fromfile(path, dtype='<f8')
        expected = int(np.prod(entry['shape'])) if entry['shape'] else 1
        if array.size != expected:
            raise ArtifactError(f'Matrix file {path} holds {array.size} values, manifest expects {expected}')
        arrays[name] = array.reshape(entry['shape'])
    return arrays, manifest


def save_snapshots(directory: str, name: str, data: SnapshotSet, config_hash: t.Optional[str] = None) -> str:
    dim = data.dim
    header = [f'x{k}' for k in range(1, dim + 1)] + [f'y{k}' for k in range(1, dim + 1)] + ['u']
    write_csv(os.path.join(directory, f'{name}.csv'), header,
              np.hstack([data.x_points, data.y_points, data.inputs.reshape(-1, 1)]))
    return write_json(os.path.join(directory, f'{name}.json'), {
        'M': data.size,
        'dim': dim,
        'dt': data.dt,
        'input_label': InputLabel(data.input_label).value,
        'domain_box': data.domain_box.tolist(),
        'seed': data.seed,
        'n_zero_input': data.n_zero_input,
        'columns': {
            'x': 'state before the step',
            'y': 'state after one RK4 step of length dt',
            'u': 'constant input held over the step',
        },
    }, config_hash)


def load_snapshots(directory: str, name: str) -> SnapshotSet:
    meta = read_json(os.path.join(directory, f'{name}.json'))
    table = read_csv(os.path.join(directory, f'{name}.csv'))
    dim = int(meta['dim'])
    if table.shape != (int(meta['M']), 2 * dim + 1):
        raise ArtifactError(f'Snapshot table {name}.csv has shape {table.shape}, manifest expects '
                            f'({meta["M"]}, {2 * dim + 1})')
    return SnapshotSet(
        x_points=table[:, :dim],
        y_points=table[:, dim:2 * dim],
        dt=float(meta['dt']),
        input_label=InputLabel(meta['input_label']),
        domain_box=np.asarray(meta['domain_box'], dtype=float),
        inputs=table[:, -1],
        seed=meta.get('seed')
    )


def save_dictionary(path: str, dictionary: RbfDictionary, config_hash: t.Optional[str] = None) -> str:
    return write_json(path, {
        'centers': dictionary.centers.tolist(),
        'sigma': dictionary.sigma,
        'domain_box': dictionary.domain_box.tolist(),
        'delta': dictionary.delta,
        'spacing': dictionary.spacing.tolist(),
        'warnings': list(dictionary.warnings),
    }, config_hash)


def load_dictionary(path: str) -> RbfDictionary:
    meta = read_json(path)
    try:
        return RbfDictionary(
            centers=np.asarray(meta['centers'], dtype=float),
            sigma=float(meta['sigma']),
            domain_box=np.asarray(meta['domain_box'], dtype=float),
            delta=float(meta['delta']),
            spacing=np.asarray(meta['spacing'], dtype=float),
            warnings=tuple(meta.get('warnings', ()))
        )
    except KeyError as error:
        raise ArtifactError(f'Dictionary file {path} lacks field {error}')


def _fit_diagnostics(fit) -> t.Optional[t.Dict[str, float]]:
    if fit is None:
        return None
    return {
        'residual': fit.residual,
        'unconstrained_residual': fit.unconstrained_residual,
        'iterations': fit.iterations,
        'kkt_residual': fit.kkt_residual,
        'lambda_condition': fit.lambda_condition,
        'ridge': fit.ridge,
        'min_entry': fit.min_entry,
        'max_row_sum_deviation': fit.max_row_sum_deviation,
    }


def save_generators(directory: str, gen: GeneratorPair, config_hash: t.Optional[str] = None) -> str:
    arrays = {'M0': gen.M0}
    if gen.zero_fit is not None:
        arrays['P0'] = gen.zero_fit.P
    if gen.M1 is not None:
        arrays['M1'] = gen.M1
    if gen.step_fit is not None:
        arrays['P1'] = gen.step_fit.P
    meta = {
        'N': gen.size,
        'dt': gen.dt,
        'fit_method': 'nsdmd',
        'has_step': gen.M1 is not None,
        'zero_fit': _fit_diagnostics(gen.zero_fit),
        'step_fit': _fit_diagnostics(gen.step_fit),
    }
    return save_matrices(directory, arrays, meta, config_hash)


def load_generators(directory: str) -> t.Tuple[GeneratorPair, t.Dict[str, np.ndarray], t.Dict[str, t.Any]]:
    """Returns the generator pair plus the raw arrays (P0, P1 when stored) and the manifest"""
    arrays, manifest = load_matrices(directory)
    if 'M0' not in arrays:
        raise ArtifactError(f'Operator directory {directory} holds no M0')
    gen = GeneratorPair(M0=arrays['M0'], M1=arrays.get('M1'), dt=float(manifest['dt']))
    return gen, arrays, manifest


def save_cost(directory: str, cost: CostData, quadrature: QuadratureRule, config_hash: t.Optional[str] = None) -> str:
    arrays = {
        'd': cost.d_vec,
        'D': cost.D_mat,
        'm': cost.m_vec,
        'Lambda': cost.Lambda,
        'basis_mass': cost.basis_mass,
        'nodes': quadrature.nodes,
        'weights': quadrature.weights,
    }
    meta = {'c': cost.c_scalar, 'lambda_form': cost.lambda_form, 'excludes_ball': quadrature.excludes_ball}
    return save_matrices(directory, arrays, meta, config_hash)


def load_cost(directory: str) -> t.Tuple[CostData, QuadratureRule, t.Dict[str, t.Any]]:
    arrays, manifest = load_matrices(directory)
    try:
        cost = CostData(
            d_vec=arrays['d'], D_mat=arrays['D'], c_scalar=float(manifest['c']), m_vec=arrays['m'],
            Lambda=arrays['Lambda'], basis_mass=arrays['basis_mass'], lambda_form=manifest['lambda_form']
        )
        quadrature = QuadratureRule(nodes=arrays['nodes'], weights=arrays['weights'],
                                    excludes_ball=bool(manifest['excludes_ball']))
    except KeyError as error:
        raise ArtifactError(f'Cost directory {directory} lacks {error}')
    return cost, quadrature, manifest


def save_solution(path: str, sol: DensitySolution, config_hash: t.Optional[str] = None) -> str:
    return write_json(path, {
        'v': sol.v.tolist(),
        'w': sol.w.tolist(),
        'sink': sol.sink.tolist(),
        'sink_idx': sol.sink_idx.tolist(),
        'objective': sol.objective,
        'status': sol.status.value,
        'eq_residual': sol.eq_residual,
        'norm': sol.norm.value,
        'r': sol.r,
        'cost_form': sol.cost_form.value,
        'iterations': sol.iterations,
        'dictionary_ref': 'dictionary.json',
    }, config_hash)


def load_solution(path: str) -> DensitySolution:
    meta = read_json(path)
    try:
        return DensitySolution(
            v=np.asarray(meta['v'], dtype=float),
            w=np.asarray(meta['w'], dtype=float),
            sink=np.asarray(meta['sink'], dtype=float),
            sink_idx=np.asarray(meta['sink_idx'], dtype=int),
            objective=float(meta['objective']),
            status=SolveStatus(meta['status']),
            eq_residual=float(meta['eq_residual']),
            norm=Norm(meta['norm']),
            r=float(meta['r']),
            cost_form=CostForm(meta['cost_form']),
            iterations=int(meta['iterations'])
        )
    except (KeyError, ValueError) as error:
        raise ArtifactError(f'Solution file {path} is invalid: {error}')


def save_local(path: str, local: LocalController, config_hash: t.Optional[str] = None) -> str:
    return write_json(path, {
        'K_l': local.K.tolist(),
        'P': local.P.tolist(),
        'gamma': local.gamma,
        'delta': local.delta,
        'dt': local.dt,
        'continuous_pair': {'A': local.A_c.tolist(), 'b': local.b_c.tolist()},
        'riccati_residual': local.riccati_residual,
        'Q': None if local.Q is None else local.Q.tolist(),
        'r': local.r,
    }, config_hash)


def load_local(path: str) -> LocalController:
    meta = read_json(path)
    try:
        return LocalController(
            K=np.asarray(meta['K_l'], dtype=float),
            P=np.asarray(meta['P'], dtype=float),
            gamma=float(meta['gamma']),
            delta=float(meta['delta']),
            dt=float(meta['dt']),
            A_c=np.asarray(meta['continuous_pair']['A'], dtype=float),
            b_c=np.asarray(meta['continuous_pair']['b'], dtype=float),
            riccati_residual=float(meta['riccati_residual']),
            Q=None if meta.get('Q') is None else np.asarray(meta['Q'], dtype=float),
            r=float(meta.get('r', 1.0))
        )
    except KeyError as error:
        raise ArtifactError(f'Local controller file {path} lacks field {error}')


def save_trajectory(path: str, times: np.ndarray, states: np.ndarray, inputs: np.ndarray) -> str:
    header = ['t'] + [f'x{k}' for k in range(1, states.shape[1] + 1)] + ['u']
    return write_csv(path, header, np.hstack([times.reshape(-1, 1), states, inputs.reshape(-1, 1)]))
