"""
Analytic oracles, consistency checks and the invariant suite run over a pipeline output directory
"""

import typing as t
import glob
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .dictionary import RbfDictionary, midpoint_rule, quadratic_cost
from .dynamics import Control, ControlAffineSystem, DEFAULT_DIVERGENCE_BOUND
from .exceptions import ArtifactError
from .local_control import BlendedController, local_density, riccati_residual
from .ocp import recover_controller, running_cost, simulate_closed_loop
from .types import ComparisonReport, ComparisonRow, GeneratorPair, SolveResult, StructuredProgram
from . import storage

logger = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-9
ROW_SUM_TOL = 1e-8
CERTIFICATE_TOL = 1e-6
DENSITY_TOL = 1e-6
LAMBDA_TOL = 0.01
MASS_FRACTION = 1e-3


@dataclass(frozen=True)
class AnalyticOracle:
    """Closed-form optimal control of x' = a x^3 + u with running cost x^2 + u^2"""
    system_name: str
    a: float

    def optimal_control(self, x: t.Any) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return -self.a * x ** 3 - x * np.sqrt(self.a ** 2 * x ** 4 + 1)

    def value_function(self, x: t.Any) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        root = np.sqrt(self.a ** 2 * x ** 4 + 1)
        return self.a * x ** 4 / 2 + x ** 2 / 2 * root + np.arcsinh(self.a * x ** 2) / (2 * self.a)

    def value_derivative(self, x: t.Any) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        return 2 * self.a * x ** 3 + 2 * x * np.sqrt(self.a ** 2 * x ** 4 + 1)

    def __call__(self, x: np.ndarray, time: float = 0.0) -> np.ndarray:
        return self.optimal_control(x)


def scalar_oracle(a: float = 0.5) -> AnalyticOracle:
    return AnalyticOracle(system_name='scalar-cubic', a=float(a))


def hjb_residual(oracle: AnalyticOracle, x: t.Any) -> np.ndarray:
    """q + u*^2 + V'(a x^3 + u*) with q = x^2"""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = oracle.optimal_control(x)
    return x ** 2 + u ** 2 + oracle.value_derivative(x) * (oracle.a * x ** 3 + u)


def compare_scalar(
        controller: Control,
        oracle: AnalyticOracle,
        x0_set: t.Sequence[float],
        horizon: float,
        dt: float,
        system: ControlAffineSystem,
        r: float = 1.0,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND,
        workers: int = 1
) -> ComparisonReport:
    """Runs the analytic and the data-driven closed loops from every x0 and compares state and cost"""
    x0s = np.asarray(x0_set, dtype=float).reshape(-1, 1)
    q = quadratic_cost([1.0])
    analytic = simulate_closed_loop(system, x0s, oracle, horizon, dt, divergence_bound, workers)
    datadriven = simulate_closed_loop(system, x0s, controller, horizon, dt, divergence_bound, workers)
    cost_analytic = running_cost(analytic, q, r)
    cost_datadriven = running_cost(datadriven, q, r)

    rows = []
    trajectories = []
    for k, x0 in enumerate(x0s[:, 0]):
        a_div, d_div = bool(analytic.diverged[k]), bool(datadriven.diverged[k])
        if a_div or d_div:
            gap = float('inf')
        else:
            gap = float(np.max(np.abs(analytic.states[k] - datadriven.states[k])))

        if cost_analytic[k] == 0.0:
            ratio = 1.0 if cost_datadriven[k] == 0.0 else float('inf')
        else:
            ratio = float(cost_datadriven[k] / cost_analytic[k])
        rows.append(ComparisonRow(
            x0=float(x0),
            cost_analytic=float(cost_analytic[k]),
            cost_datadriven=float(cost_datadriven[k]),
            cost_ratio=ratio,
            sup_state_gap=gap,
            analytic_diverged=a_div,
            datadriven_diverged=d_div
        ))

    for k in range(len(x0s)):
        trajectories.append((analytic.trajectory(k), datadriven.trajectory(k)))
    report = ComparisonReport(rows=rows, trajectories=trajectories)
    logger.info('Scalar comparison: cost ratio %.4f, max gap %.4g, %d diverged',
                report.cost_ratio, report.max_gap, report.diverged)
    return report


def _mass_inside(dictionary: RbfDictionary) -> np.ndarray:
    """Fraction of each Gaussian's mass lying inside the domain box"""
    box = dictionary.domain_box
    scale = np.sqrt(2.0) * dictionary.sigma
    upper = erf((box[:, 1] - dictionary.centers) / scale)
    lower = erf((box[:, 0] - dictionary.centers) / scale)
    return np.prod(0.5 * (upper - lower), axis=1)


def analytic_generator(system: ControlAffineSystem, dictionary: RbfDictionary, x: np.ndarray) -> np.ndarray:
    """-div(f psi_k) = -(div f) psi_k + f . (x - c_k) / sigma^2 psi_k, shape (B, N)"""
    psi = dictionary.evaluate(x)
    drift = system.f(x)
    divergence = system.divergence(x)
    projection = np.sum(drift * x, axis=1)[:, None] - drift @ dictionary.centers.T
    return -divergence[:, None] * psi + projection / dictionary.sigma ** 2 * psi


def generator_check(
        gen: GeneratorPair,
        system: ControlAffineSystem,
        dictionary: RbfDictionary,
        test_grid: t.Any,
        interior_only: bool = True
) -> float:
    """Worst relative sup-error between Psi' M0 e_k and the analytic P-F generator applied to psi_k"""
    grid = np.asarray(test_grid, dtype=float).reshape(-1, dictionary.dim)
    psi = dictionary.evaluate(grid)
    fitted = psi @ gen.M0
    exact = analytic_generator(system, dictionary, grid)

    keep = _mass_inside(dictionary) >= MASS_FRACTION
    if interior_only:
        box = dictionary.domain_box
        keep &= np.all((dictionary.centers > box[:, 0]) & (dictionary.centers < box[:, 1]), axis=1)
    if not keep.any():
        return float('nan')

    errors = np.max(np.abs(fitted - exact), axis=0)[keep]
    scales = np.max(np.abs(exact), axis=0)[keep]
    if scales.max() == 0.0:
        return float(errors.max())
    scales = np.maximum(scales, 1e-3 * scales.max())
    return float(np.max(errors / scales))


def lambda_consistency(dictionary: RbfDictionary, Lambda: np.ndarray, max_centers: int = 27) -> float:
    """Max |Lambda - quadrature Gram| over centers near the box middle, relative to the largest diagonal entry

    The quadrature runs over the box spanned by the chosen centers padded by 6 sigma,
    a midpoint rule with spacing sigma/1.5.
    """
    middle = dictionary.domain_box.mean(axis=1)
    order = np.argsort(np.linalg.norm(dictionary.centers - middle, axis=1), kind='stable')
    chosen = np.sort(order[:min(max_centers, dictionary.size)])
    centers = dictionary.centers[chosen]

    pad = 6.0 * dictionary.sigma
    box = np.stack([centers.min(axis=0) - pad, centers.max(axis=0) + pad], axis=1)
    counts = np.maximum(2, np.ceil((box[:, 1] - box[:, 0]) / (dictionary.sigma / 1.5)).astype(int))
    nodes, weights = midpoint_rule(box, counts)

    local = RbfDictionary(centers=centers, sigma=dictionary.sigma, domain_box=box, delta=0.0,
                          spacing=dictionary.spacing)
    psi = local.evaluate(nodes)
    numeric = (psi * weights[:, None]).T @ psi
    given = np.asarray(Lambda)[np.ix_(chosen, chosen)]
    return float(np.max(np.abs(given - numeric)) / np.max(np.diag(numeric)))


class CertificateReplay(t.NamedTuple):
    eq_residual: float
    nonneg_violation: float
    objective_gap: float

    def within(self, tol: float) -> bool:
        return max(self) <= tol


def replay_certificate(prog: StructuredProgram, result: SolveResult) -> CertificateReplay:
    """Re-evaluates feasibility and the objective of a solver result on the original program"""
    z = np.asarray(result.z, dtype=float)
    eq_residual = float(np.max(np.abs(prog.eq_A @ z - prog.eq_b), initial=0.0))
    nonneg_violation = float(max(0.0, -np.min(z[prog.nonneg_idx], initial=0.0)))

    value = float(prog.linear_cost @ z)
    for a_row, b_row, weight in zip(prog.perspective_num, prog.perspective_den, prog.perspective_weights):
        value += weight * float(a_row @ z) ** 2 / float(b_row @ z)
    for row, weight in zip(prog.l1_rows, prog.l1_weights):
        value += weight * abs(float(row @ z))
    objective_gap = abs(value - result.objective) / max(1.0, abs(value))
    return CertificateReplay(eq_residual, nonneg_violation, objective_gap)


def _failure(check: str, value: float, limit: float, detail: str = '') -> t.Dict[str, t.Any]:
    logger.warning('Invariant check %s failed: %.6g > %.6g %s', check, value, limit, detail)
    return {'check': check, 'value': value, 'limit': limit, 'detail': detail}


def _markov_checks(arrays: t.Dict[str, np.ndarray], manifest: t.Dict[str, t.Any]) -> t.List[t.Dict[str, t.Any]]:
    failures = []
    dt = float(manifest['dt'])
    for name in ('P0', 'P1'):
        if name not in arrays:
            continue
        P = arrays[name]
        min_entry = float(P.min())
        if min_entry < -POSITIVITY_TOL:
            failures.append(_failure(f'{name}.positivity', -min_entry, POSITIVITY_TOL, f'min entry {min_entry:.3g}'))
        deviation = float(np.abs(P.sum(axis=0) - 1.0).max())
        if deviation > ROW_SUM_TOL:
            failures.append(_failure(f'{name}.row_sums', deviation, ROW_SUM_TOL))
    for name in ('M0', 'M1'):
        if name in arrays:
            column_sums = float(np.abs(arrays[name].sum(axis=0)).max())
            if column_sums > ROW_SUM_TOL / dt:
                failures.append(_failure(f'{name}.column_sums', column_sums, ROW_SUM_TOL / dt))
    return failures


def _config_hashes(run_dir: str) -> t.Set[str]:
    hashes = set()
    for path in sorted(glob.glob(os.path.join(run_dir, '**', '*.json'), recursive=True)):
        with open(path) as file:
            try:
                payload = json.load(file)
            except json.JSONDecodeError:
                continue
        if isinstance(payload, dict) and 'config_hash' in payload:
            hashes.add(payload['config_hash'])
    return hashes


def invariant_suite(run_dir: str) -> t.List[t.Dict[str, t.Any]]:
    """Runs every invariant check whose artifacts exist under `run_dir`; returns the failures"""
    if not os.path.isdir(run_dir):
        raise ArtifactError(f'Run directory {run_dir} does not exist')
    failures = []

    hashes = _config_hashes(run_dir)
    if len(hashes) > 1:
        failures.append(_failure('config_hash', len(hashes), 1, 'artifacts were produced by different configs'))

    dictionary = None
    dictionary_path = os.path.join(run_dir, 'dictionary.json')
    if os.path.exists(dictionary_path):
        dictionary = storage.load_dictionary(dictionary_path)

    gen, cost = None, None
    operators_dir = os.path.join(run_dir, 'operators')
    if os.path.exists(os.path.join(operators_dir, storage.MANIFEST)):
        gen, arrays, manifest = storage.load_generators(operators_dir)
        failures += _markov_checks(arrays, manifest)

    cost_dir = os.path.join(run_dir, 'cost')
    quadrature = None
    if os.path.exists(os.path.join(cost_dir, storage.MANIFEST)):
        cost, quadrature, _ = storage.load_cost(cost_dir)
        if dictionary is not None:
            deviation = lambda_consistency(dictionary, cost.Lambda)
            if deviation > LAMBDA_TOL:
                failures.append(_failure('lambda.quadrature', deviation, LAMBDA_TOL))

    solution_path = os.path.join(run_dir, 'solution', 'density.json')
    solution = None
    if os.path.exists(solution_path):
        solution = storage.load_solution(solution_path)
        if gen is not None and cost is not None:
            flow = gen.M0 @ solution.v + (gen.M1 @ solution.w if gen.M1 is not None else 0.0) + cost.m_vec
            flow[solution.sink_idx] -= solution.sink
            residual = float(np.max(np.abs(flow)))
            if residual > CERTIFICATE_TOL:
                failures.append(_failure('density.certificate', residual, CERTIFICATE_TOL))
        if solution.v.size and solution.v.min() < -1e-8:
            failures.append(_failure('density.v_nonnegative', -float(solution.v.min()), 1e-8))
        if dictionary is not None and quadrature is not None:
            field = dictionary.evaluate(quadrature.nodes) @ solution.v
            if field.min() < -DENSITY_TOL:
                failures.append(_failure('density.field_nonnegative', -float(field.min()), DENSITY_TOL))

    local_path = os.path.join(run_dir, 'solution', 'local.json')
    if os.path.exists(local_path):
        local = storage.load_local(local_path)
        if np.linalg.eigvalsh(local.P).min() <= 0 or not np.allclose(local.P, local.P.T):
            failures.append(_failure('local.P_positive_definite', float(np.linalg.eigvalsh(local.P).min()), 0.0))
        real_parts = np.real(np.linalg.eigvals(local.A_c - np.outer(local.b_c, local.K)))
        if real_parts.max() >= 0:
            failures.append(_failure('local.hurwitz', float(real_parts.max()), 0.0))
        if local.Q is not None:
            residual = riccati_residual(local.A_c, local.b_c, local.Q, local.r, local.P)
            limit = 1e-8 * max(1.0, float(np.linalg.norm(local.P)))
            if residual > limit:
                failures.append(_failure('local.riccati', residual, limit))

        if solution is not None and dictionary is not None:
            blended = BlendedController(local=local, global_ctrl=recover_controller(solution, dictionary))
            grid = np.random.default_rng(0).uniform(dictionary.domain_box[:, 0], dictionary.domain_box[:, 1],
                                                    size=(256, dictionary.dim))
            local_weight, global_weight = blended.weights(grid)
            bad = np.abs(local_weight + global_weight - 1.0).max()
            outside = max(float(-local_weight.min()), float(local_weight.max() - 1.0), 0.0)
            if bad > 1e-12 or outside > 0:
                failures.append(_failure('blend.weights', max(bad, outside), 1e-12))
            active = local_density(local, grid) > 0
            levels = np.einsum('bi,ij,bj->b', grid, local.P, grid)
            mismatched = int(np.sum(active != (levels < local.active_level)))
            if mismatched:
                failures.append(_failure('local.active_region', mismatched, 0))

    logger.info('Invariant suite over %s: %d failure(s)', run_dir, len(failures))
    return failures
