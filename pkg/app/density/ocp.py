"""
Finite-dimensional density programs, controller recovery and closed-loop evaluation
"""

import typing as t
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .dictionary import RbfDictionary, sink_indices
from .dynamics import Control, ControlAffineSystem, DEFAULT_DIVERGENCE_BOUND, simulate_batch
from .exceptions import DataError, DegenerateDensityError, InfeasibleProblemError
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, make_program, solve
from .types import (
    BatchTrajectory, CostData, CostEstimate, CostForm, DensitySolution, GeneratorPair, Norm, OcpProblem,
    QuadratureRule, SolveStatus, StabilityEstimate
)
from .utils import as_box, run_in_threads, split_rows

logger = logging.getLogger(__name__)

FLOOR_FACTOR = 1e-8


def assemble(
        gen: GeneratorPair,
        cost: CostData,
        r: float,
        norm: t.Union[Norm, str],
        quadrature: t.Optional[QuadratureRule] = None,
        dictionary: t.Optional[RbfDictionary] = None,
        cost_form: t.Union[CostForm, str] = CostForm.PERSPECTIVE,
        sink_idx: t.Optional[t.Sequence[int]] = None
) -> OcpProblem:
    """Builds the program over z = (v, w, sigma)

    Equalities -M0 v - M1 w + S sigma = m, with v >= 0 and sigma >= 0 the mass
    absorbed by the sink basis functions. The L2 cost is the quadrature sum of
    r w_k (Psi(x_k)'w)^2 / (Psi(x_k)'v); `diagonal` uses r D_jj w_j^2 / v_j.

    Raises
    ------
    DataError
        On dimension mismatches or missing inputs for the requested cost
    """
    norm, cost_form = Norm(norm), CostForm(cost_form)
    size = gen.size
    if cost.m_vec.shape[0] != size or cost.d_vec.shape[0] != size:
        raise DataError(f'Cost data has dimension {cost.m_vec.shape[0]}, generators have {size}')
    if r < 0:
        raise DataError(f'Control weight r must be >= 0, got {r}')

    if sink_idx is None:
        sink_idx = sink_indices(dictionary) if dictionary is not None else np.zeros(0, dtype=int)
    sink_idx = np.asarray(sink_idx, dtype=int)
    n_sink = sink_idx.size

    if gen.M1 is None and norm != Norm.FEASIBILITY:
        raise DataError(f'Step data missing: the input generator M1 is needed for the {norm.value!r} norm')
    M1 = gen.M1 if gen.M1 is not None else np.zeros_like(gen.M0)
    sink = np.zeros((size, n_sink))
    sink[sink_idx, np.arange(n_sink)] = 1.0
    eq_A = np.hstack([-gen.M0, -M1, sink])
    total = 2 * size + n_sink
    nonneg = np.concatenate([np.arange(size), 2 * size + np.arange(n_sink)])

    linear_cost = np.zeros(total)
    perspective, l1 = None, None
    if norm != Norm.FEASIBILITY:
        linear_cost[:size] = cost.d_vec
    if norm == Norm.L2 and r > 0:
        if cost_form == CostForm.PERSPECTIVE:
            if quadrature is None or dictionary is None:
                raise DataError('The perspective cost needs the quadrature rule and the dictionary')
            psi = dictionary.evaluate(quadrature.nodes)
            num = np.zeros((len(psi), total))
            den = np.zeros((len(psi), total))
            num[:, size:2 * size] = psi
            den[:, :size] = psi
            perspective = (num, den, r * quadrature.weights)
        else:
            diag = np.diag(cost.D_mat)
            keep = np.flatnonzero(diag > 0)
            num = np.zeros((keep.size, total))
            den = np.zeros((keep.size, total))
            num[np.arange(keep.size), size + keep] = 1.0
            den[np.arange(keep.size), keep] = 1.0
            perspective = (num, den, r * diag[keep])
    elif norm == Norm.L1 and r > 0:
        rows = np.zeros((size, total))
        rows[np.arange(size), size + np.arange(size)] = 1.0
        l1 = (rows, np.full(size, r * cost.c_scalar))

    program = make_program(linear_cost, eq_A, cost.m_vec, nonneg, perspective=perspective, l1=l1)
    return OcpProblem(generators=gen, cost=cost, r=float(r), norm=norm, program=program, sink_idx=sink_idx,
                      cost_form=cost_form, quadrature=quadrature)


def certificate_residual(prob: OcpProblem, v: np.ndarray, w: np.ndarray, sink: np.ndarray) -> float:
    """|M0 v + M1 w + m - S sigma|_inf"""
    gen = prob.generators
    flow = gen.M0 @ v + (gen.M1 @ w if gen.M1 is not None else 0.0) + prob.cost.m_vec
    flow[prob.sink_idx] -= sink
    return float(np.max(np.abs(flow)))


def solve_ocp(prob: OcpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> DensitySolution:
    """Solves the assembled program

    Raises
    ------
    InfeasibleProblemError
        With the phase-1 certificate when the discretized dynamics admit no density
    """
    result = solve(prob.program, tol=tol, max_iter=max_iter)
    size = prob.size
    if result.status == SolveStatus.INFEASIBLE:
        raise InfeasibleProblemError({'phase1_bound': result.phase1_bound, 'eq_residual': result.kkt.eq_residual})

    v = result.z[:size]
    w = result.z[size:2 * size]
    sink = result.z[2 * size:]
    eq_residual = certificate_residual(prob, v, w, sink)
    if result.status != SolveStatus.OPTIMAL:
        logger.warning('Density program stopped at %s after %d iterations (kkt %s)',
                       result.status.value, result.iterations, tuple(result.kkt))

    logger.info('Density program %s: objective %.6g, certificate residual %.3g, %d iterations',
                result.status.value, result.objective, eq_residual, result.iterations)
    return DensitySolution(
        v=v, w=w, sink=sink, sink_idx=prob.sink_idx, objective=result.objective, status=result.status,
        eq_residual=eq_residual, norm=prob.norm, r=prob.r, cost_form=prob.cost_form, iterations=result.iterations
    )


@dataclass(frozen=True, eq=False)
class GlobalController:
    """k(x) = Psi(x)'(w / max(v, floor_eps)), evaluated with x clamped to the domain box"""
    dictionary: RbfDictionary
    v: np.ndarray
    w: np.ndarray
    floor_eps: float

    @property
    def ratio(self) -> np.ndarray:
        return self.w / np.maximum(self.v, self.floor_eps)

    def __call__(self, x: np.ndarray, time: float = 0.0) -> np.ndarray:
        points = np.asarray(x, dtype=float).reshape(-1, self.dictionary.dim)
        return self.dictionary.evaluate(self.dictionary.clamp(points)) @ self.ratio

    def density(self, x: np.ndarray) -> np.ndarray:
        points = np.asarray(x, dtype=float).reshape(-1, self.dictionary.dim)
        return self.dictionary.evaluate(self.dictionary.clamp(points)) @ self.v

    def count_clamped(self, x: np.ndarray) -> int:
        points = np.asarray(x, dtype=float).reshape(-1, self.dictionary.dim)
        points = points[np.all(np.isfinite(points), axis=1)]
        return int(np.count_nonzero(np.any(points != self.dictionary.clamp(points), axis=1)))


def recover_controller(sol: DensitySolution, dictionary: RbfDictionary,
                       floor_eps: t.Optional[float] = None) -> GlobalController:
    """
    Raises
    ------
    DegenerateDensityError
        If no coefficient of v is positive
    """
    v_max = float(np.max(sol.v)) if sol.v.size else 0.0
    if not v_max > 0:
        raise DegenerateDensityError('Density coefficients are all non-positive; no controller can be recovered')
    floor_eps = FLOOR_FACTOR * v_max if floor_eps is None else floor_eps
    below = int(np.count_nonzero(sol.v < floor_eps))
    if below:
        logger.debug('%d density coefficient(s) below the floor %.3g', below, floor_eps)
    return GlobalController(dictionary=dictionary, v=np.maximum(sol.v, 0.0), w=sol.w.copy(), floor_eps=floor_eps)


def simulate_closed_loop(
        system: ControlAffineSystem,
        x0s: t.Any,
        control: Control,
        horizon: float,
        dt: float,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND,
        workers: int = 1
) -> BatchTrajectory:
    """simulate_batch over row chunks on up to `workers` threads"""
    x0s = np.asarray(x0s, dtype=float).reshape(-1, system.dim)
    chunks = split_rows(x0s, workers)
    parts = run_in_threads(lambda chunk: simulate_batch(system, chunk, control, horizon, dt, divergence_bound),
                           chunks, workers)
    return BatchTrajectory(
        times=parts[0].times,
        states=np.concatenate([part.states for part in parts], axis=0),
        inputs=np.concatenate([part.inputs for part in parts], axis=0),
        escape_times=np.concatenate([part.escape_times for part in parts])
    )


def running_cost(batch: BatchTrajectory, q: t.Callable[[np.ndarray], np.ndarray], r: float) -> np.ndarray:
    """Trapezoid integral of q(x) + r u^2 per trajectory; inf for diverged rows"""
    n_batch, n_times, dim = batch.states.shape
    q_values = np.asarray(q(np.nan_to_num(batch.states.reshape(-1, dim))), dtype=float).reshape(n_batch, n_times)
    integrand = q_values + r * np.nan_to_num(batch.inputs) ** 2
    costs = trapezoid(integrand, batch.times, axis=1)
    costs[batch.diverged] = np.inf
    return costs


def evaluate_cost(
        controller: Control,
        system: ControlAffineSystem,
        initial_samples: t.Any,
        q: t.Callable[[np.ndarray], np.ndarray],
        r: float,
        horizon: float,
        dt: float,
        h0: t.Optional[t.Callable[[np.ndarray], np.ndarray]] = None,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND,
        workers: int = 1
) -> CostEstimate:
    """h0-weighted Monte Carlo estimate of the accumulated closed-loop cost"""
    if horizon <= 0:
        raise DataError(f'Horizon must be positive, got {horizon}')
    x0s = np.asarray(initial_samples, dtype=float).reshape(-1, system.dim)
    batch = simulate_closed_loop(system, x0s, controller, horizon, dt, divergence_bound, workers)
    costs = running_cost(batch, q, r)

    finite = np.isfinite(costs)
    diverged = int(np.count_nonzero(~finite))
    if diverged:
        logger.warning('%d of %d closed-loop trajectories diverged', diverged, len(costs))
    if not finite.any():
        return CostEstimate(per_sample=costs, mean=float('inf'), diverged=diverged)

    weights = np.ones(len(x0s)) if h0 is None else np.asarray(h0(x0s), dtype=float).reshape(-1)
    weights = weights[finite]
    mean = float(np.average(costs[finite], weights=weights)) if weights.sum() > 0 else float(costs[finite].mean())
    return CostEstimate(per_sample=costs, mean=mean, diverged=diverged)


def ball_entry(batch: BatchTrajectory, delta: float) -> StabilityEstimate:
    """A trajectory is stable when it enters the delta ball and never leaves it up to the horizon

    The entry time is the first time inside, inf for trajectories that are not stable.
    """
    norms = np.linalg.norm(batch.states, axis=2)
    inside = np.nan_to_num(norms, nan=np.inf) <= delta
    n_steps = inside.shape[1]
    # first step of the trailing run inside the ball, n_steps when the run is empty
    entry = np.where(inside.all(axis=1), 0, n_steps - np.argmax(~inside[:, ::-1], axis=1))
    first_entry = np.where(inside.any(axis=1), np.argmax(inside, axis=1), n_steps)
    stable = (entry < n_steps) & (entry == first_entry) & ~batch.diverged
    entry_times = np.where(stable, batch.times[np.minimum(entry, n_steps - 1)], np.inf)
    fraction = float(stable.mean()) if len(stable) else 0.0
    return StabilityEstimate(fraction=fraction, stable=stable, entry_times=entry_times)


def empirical_stability(
        controller: Control,
        system: ControlAffineSystem,
        n_samples: int,
        horizon: float,
        delta: float,
        dt: float,
        domain_box: t.Any,
        seed: int = 0,
        x0s: t.Optional[np.ndarray] = None,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND,
        workers: int = 1
) -> StabilityEstimate:
    """Fraction of uniform initial conditions whose closed loop enters the delta ball and stays there"""
    if x0s is None:
        if n_samples < 1:
            raise DataError(f'Need at least one sample, got {n_samples}')
        box = as_box(domain_box)
        x0s = np.random.default_rng(seed).uniform(box[:, 0], box[:, 1], size=(n_samples, system.dim))
    batch = simulate_closed_loop(system, x0s, controller, horizon, dt, divergence_bound, workers)
    estimate = ball_entry(batch, delta)
    logger.info('Empirical stability of %s: %.3f over %d samples', system.name, estimate.fraction, len(estimate.stable))
    return estimate
