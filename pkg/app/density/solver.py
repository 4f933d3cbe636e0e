"""
Structured convex solver for the three program shapes of the pipeline:

* simplex-constrained least squares (rows of a stochastic matrix), solved by
  accelerated projected gradient with row-wise simplex projections;
* linear cost + perspective terms w (a'z)^2 / (b'z) + weighted |r'z| under
  linear equalities and nonnegativity, solved by a phase-1 / barrier method on
  the rotated-cone epigraph of each perspective term.
"""

import typing as t
import json
import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, DataError
from .types import KktResiduals, SolveResult, SolveStatus, StructuredProgram

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200

BARRIER_GROWTH = 20.0
ARMIJO_SLOPE = 0.25
MAX_HALVINGS = 60
INNER_TOL = 1e-10
MERIT_NOISE = 1e-13
KKT_SOLVE_TOL = 1e-10
MIN_INNER_TOL = 1e-24
FREE_PROX = 1e-9


def make_program(
        linear_cost: t.Any,
        eq_A: t.Any,
        eq_b: t.Any,
        nonneg_idx: t.Iterable[int] = (),
        perspective: t.Optional[t.Tuple[t.Any, t.Any, t.Any]] = None,
        l1: t.Optional[t.Tuple[t.Any, t.Any]] = None
) -> StructuredProgram:
    """Builds a validated StructuredProgram

    Perspective terms with a zero numerator row are dropped (they contribute 0).

    Raises
    ------
    DataError
        If weights are not positive or a denominator row is not a nonnegative
        combination of nonnegative variables
    """
    c = np.asarray(linear_cost, dtype=float).reshape(-1)
    size = c.size
    eq_A = np.asarray(eq_A, dtype=float).reshape(-1, size)
    eq_b = np.asarray(eq_b, dtype=float).reshape(-1)
    if eq_A.shape[0] != eq_b.size:
        raise DataError(f'Equality matrix has {eq_A.shape[0]} rows but right-hand side has {eq_b.size}')
    if not (np.all(np.isfinite(eq_A)) and np.all(np.isfinite(eq_b)) and np.all(np.isfinite(c))):
        raise DataError('Program data must be finite')

    nonneg = np.unique(np.asarray(list(nonneg_idx), dtype=int))
    if nonneg.size and (nonneg.min() < 0 or nonneg.max() >= size):
        raise DataError('Nonnegative index out of range')

    if perspective is None:
        num, den, p_weights = np.zeros((0, size)), np.zeros((0, size)), np.zeros(0)
    else:
        num = np.asarray(perspective[0], dtype=float).reshape(-1, size)
        den = np.asarray(perspective[1], dtype=float).reshape(-1, size)
        p_weights = np.asarray(perspective[2], dtype=float).reshape(-1)
        if not num.shape[0] == den.shape[0] == p_weights.size:
            raise DataError('Perspective numerators, denominators and weights must have equal counts')
        if np.any(p_weights <= 0):
            raise DataError('Perspective weights must be positive')
        keep = np.any(num != 0.0, axis=1)
        num, den, p_weights = num[keep], den[keep], p_weights[keep]

        free = np.ones(size, dtype=bool)
        free[nonneg] = False
        if np.any(den < 0) or np.any(den[:, free] != 0.0):
            raise DataError('Perspective denominators must be nonnegative rows supported on nonnegative variables')
        if np.any(~np.any(den > 0, axis=1)):
            raise DataError('Perspective denominator row is zero')

    if l1 is None:
        l1_rows, l1_weights = np.zeros((0, size)), np.zeros(0)
    else:
        l1_rows = np.asarray(l1[0], dtype=float).reshape(-1, size)
        l1_weights = np.asarray(l1[1], dtype=float).reshape(-1)
        if l1_rows.shape[0] != l1_weights.size:
            raise DataError('L1 rows and weights must have equal counts')
        if np.any(l1_weights <= 0):
            raise DataError('L1 weights must be positive')
        keep = np.any(l1_rows != 0.0, axis=1)
        l1_rows, l1_weights = l1_rows[keep], l1_weights[keep]

    return StructuredProgram(
        linear_cost=c,
        eq_A=eq_A,
        eq_b=eq_b,
        nonneg_idx=nonneg,
        perspective_num=num,
        perspective_den=den,
        perspective_weights=p_weights,
        l1_rows=l1_rows,
        l1_weights=l1_weights
    )


@dataclass(frozen=True, eq=False)
class _StandardForm:
    """min c'x + sum w (a'x)^2/(b'x)  s.t.  Ax = b, x_i >= 0 on `mask`; L1 terms already split"""
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    mask: np.ndarray
    num: np.ndarray
    den: np.ndarray
    weights: np.ndarray
    original_size: int

    @property
    def size(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        value = float(self.c @ x)
        if self.weights.size:
            value += float(np.sum(self.weights * (self.num @ x) ** 2 / (self.den @ x)))
        return value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        grad = self.c.copy()
        if self.weights.size:
            alpha, beta = self.num @ x, self.den @ x
            grad += self.num.T @ (2 * self.weights * alpha / beta)
            grad -= self.den.T @ (self.weights * alpha ** 2 / beta ** 2)
        return grad

    def hessian(self, x: np.ndarray) -> np.ndarray:
        hess = np.zeros((self.size, self.size))
        if self.weights.size:
            alpha, beta = self.num @ x, self.den @ x
            u = self.num - (alpha / beta)[:, None] * self.den
            hess += (u * (2 * self.weights / beta)[:, None]).T @ u
        return hess


def _standard_form(prog: StructuredProgram) -> _StandardForm:
    size = prog.size
    n_l1 = prog.l1_weights.size
    n_eq = prog.eq_A.shape[0]
    total = size + 2 * n_l1

    eye = np.eye(n_l1)
    A = np.vstack([
        np.hstack([prog.eq_A, np.zeros((n_eq, 2 * n_l1))]),
        np.hstack([prog.l1_rows, -eye, eye])
    ])
    b = np.concatenate([prog.eq_b, np.zeros(n_l1)])
    mask = np.zeros(total, dtype=bool)
    mask[prog.nonneg_idx] = True
    mask[size:] = True
    pad = np.zeros((prog.perspective_weights.size, 2 * n_l1))

    return _StandardForm(
        c=np.concatenate([prog.linear_cost, prog.l1_weights, prog.l1_weights]),
        A=A,
        b=b,
        mask=mask,
        num=np.hstack([prog.perspective_num, pad]),
        den=np.hstack([prog.perspective_den, pad]),
        weights=prog.perspective_weights.copy(),
        original_size=size
    )


def _independent_rows(A: np.ndarray, b: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    """Drops linearly dependent equality rows (pivoted QR of A')"""
    if A.shape[0] == 0:
        return A, b
    _, R, piv = scipy.linalg.qr(A.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(R))
    if not diag.size or diag[0] == 0.0:
        return A[:0], b[:0]
    rank = int(np.sum(diag > diag[0] * 1e-12 * max(A.shape)))
    rows = np.sort(piv[:rank])
    return A[rows], b[rows]


def _kkt_solve(H: np.ndarray, A: np.ndarray, g: np.ndarray, r: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray]:
    """Newton step of H dx + A'y = -g, A dx = -r

    Variables with diag(H) > 1 are rescaled by diag(H)^-1/2 and equality rows by
    their norms; barrier Hessians near the boundary then become O(1). The
    symmetric solve falls back to lstsq when it is singular or inaccurate.
    """
    n, m = H.shape[0], A.shape[0]
    scale = 1.0 / np.sqrt(np.maximum(np.diag(H), 1.0))
    H_s = H * scale[:, None] * scale[None, :]
    A_s = A * scale[None, :]
    rows = np.linalg.norm(A_s, axis=1) if m else np.zeros(0)
    rows[rows == 0.0] = 1.0
    A_s = A_s / rows[:, None]

    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H_s
    kkt[:n, n:] = A_s.T
    kkt[n:, :n] = A_s
    rhs = np.concatenate([-scale * g, -r / rows])
    solution = None
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        try:
            solution = scipy.linalg.solve(kkt, rhs, assume_a='sym')
        except np.linalg.LinAlgError:
            solution = None
    if solution is not None and np.all(np.isfinite(solution)):
        error = np.linalg.norm(kkt @ solution - rhs)
        if error > KKT_SOLVE_TOL * max(1.0, np.linalg.norm(rhs)):
            solution = None
    if solution is None or not np.all(np.isfinite(solution)):
        solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return scale * solution[:n], solution[n:] / rows


def _regularize_free(H: np.ndarray, free: np.ndarray) -> np.ndarray:
    if free.any():
        diag = np.diag(H)
        scale = max(1.0, float(np.mean(np.abs(diag[diag != 0.0])))) if np.any(diag != 0.0) else 1.0
        flat = free & (np.abs(diag) <= 1e-14 * scale)
        H[flat, flat] += FREE_PROX * scale
    return H


class _Centering(t.NamedTuple):
    x: np.ndarray
    steps: int
    converged: bool


def _center(
        x: np.ndarray,
        A: np.ndarray,
        b: np.ndarray,
        merit: t.Callable[[np.ndarray], float],
        gradient: t.Callable[[np.ndarray], np.ndarray],
        hessian: t.Callable[[np.ndarray], np.ndarray],
        budget: int,
        history: t.List[t.Tuple[float, float]],
        tau: float,
        stop: t.Optional[t.Callable[[np.ndarray], bool]] = None,
        inner_tol: float = INNER_TOL
) -> _Centering:
    """Equality-constrained damped Newton on a barrier merit; merit is +inf outside the domain

    Converged means the Newton decrement fell below `inner_tol`. A direction
    that is not a descent direction or a line search that runs out of halvings
    is a stall and returns converged=False. `stop` ends the centering early
    once it holds for the current iterate.
    """
    value = merit(x)
    for step in range(budget):
        g = gradient(x)
        H = hessian(x)
        dx, _ = _kkt_solve(H, A, g, A @ x - b)
        decrement = max(float(dx @ H @ dx), 0.0)
        if decrement / 2 <= inner_tol:
            return _Centering(x, step, True)

        slope = float(g @ dx)
        if slope >= 0:
            logger.debug('Newton direction is not a descent direction (slope %.3g)', slope)
            return _Centering(x, step, False)
        # merit values carry rounding noise of order eps |merit|
        noise = MERIT_NOISE * max(1.0, abs(value))
        length = 1.0
        candidate = merit(x + dx)
        for _ in range(MAX_HALVINGS):
            if candidate <= value + ARMIJO_SLOPE * length * slope + noise:
                break
            length *= 0.5
            candidate = merit(x + length * dx)
        else:
            logger.debug('Line search ran out of halvings (decrement %.3g)', decrement)
            return _Centering(x, step, False)

        x = x + length * dx
        value = candidate
        history.append((tau, value))
        if stop is not None and stop(x):
            return _Centering(x, step + 1, True)
    return _Centering(x, budget, False)


class _PhaseOne(t.NamedTuple):
    x: np.ndarray
    bound: float
    steps: int


def _phase_one(form: _StandardForm, A: np.ndarray, b: np.ndarray, x0: np.ndarray, max_iter: int) -> _PhaseOne:
    """Finds x with Ax = b and x_i > 0 on the mask by minimizing s subject to x_i + s > 0 and s > -1

    The floor on s keeps the problem bounded when the equalities leave the
    direction (1, ..., 1, -1) free.
    """
    mask = form.mask
    if not mask.any():
        return _PhaseOne(x0, float('-inf'), 0)
    if np.min(x0[mask]) > 0:
        return _PhaseOne(x0, float(-np.min(x0[mask])), 0)

    n = x0.size
    count = int(mask.sum())
    A_aug = np.hstack([A, np.zeros((A.shape[0], 1))])
    free = np.append(~mask, False)
    s0 = float(max(0.0, -np.min(x0[mask])) + 1.0)
    z = np.append(x0, s0)

    def slack(point):
        return point[:n][mask] + point[n]

    tau = (count + 1) / s0
    steps = 0
    history: t.List[t.Tuple[float, float]] = []
    while steps < max_iter:
        def merit(point, tau=tau):
            y = slack(point)
            if np.any(y <= 0) or point[n] <= -1.0:
                return np.inf
            return float(tau * point[n] - np.sum(np.log(y)) - np.log(1.0 + point[n]))

        def gradient(point, tau=tau):
            y = slack(point)
            grad = np.zeros(n + 1)
            grad[:n][mask] = -1.0 / y
            grad[n] = tau - np.sum(1.0 / y) - 1.0 / (1.0 + point[n])
            return grad

        def hessian(point):
            inv2 = 1.0 / slack(point) ** 2
            H = np.zeros((n + 1, n + 1))
            idx = np.flatnonzero(mask)
            H[idx, idx] = inv2
            H[idx, n] = inv2
            H[n, idx] = inv2
            H[n, n] = np.sum(inv2) + 1.0 / (1.0 + point[n]) ** 2
            return _regularize_free(H, free)

        centering = _center(z, A_aug, b, merit, gradient, hessian, max_iter - steps, history, tau,
                            stop=lambda point: point[n] < 0)
        z, steps = centering.x, steps + centering.steps + 1
        if z[n] < 0:
            break
        if (count + 1) / tau <= 1e-10 * (1.0 + np.max(np.abs(z[:n]))):
            break
        tau *= BARRIER_GROWTH

    logger.debug('Phase 1 finished after %d Newton steps with bound %.3g', steps, z[n])
    return _PhaseOne(z[:n], float(z[n]), steps)


def _barrier(form: _StandardForm, A: np.ndarray, b: np.ndarray, x0: np.ndarray, tol: float,
             max_iter: int) -> t.Tuple[np.ndarray, float, int, bool, t.List[t.Tuple[float, float]]]:
    mask = form.mask
    nu = int(mask.sum()) + 2 * form.weights.size
    free = ~mask

    f_ref = max(abs(form.objective(x0)), float(np.abs(form.c) @ np.abs(x0)))
    if f_ref == 0.0:
        f_ref = 1.0
    tau = nu / f_ref if nu else 1.0 / f_ref
    x = x0
    # a centered iterate with Newton decrement lambda has relative stationarity <= lambda
    inner_tol = min(INNER_TOL, (0.5 * tol) ** 2 / 2)
    steps = 0
    history: t.List[t.Tuple[float, float]] = []

    while True:
        def merit(point, tau=tau):
            xi = point[mask]
            beta = form.den @ point
            if np.any(xi <= 0) or np.any(beta <= 0):
                return np.inf
            return float(tau * form.objective(point) - np.sum(np.log(xi)) - np.sum(np.log(beta)))

        def gradient(point, tau=tau):
            grad = tau * form.gradient(point)
            grad[mask] -= 1.0 / point[mask]
            if form.weights.size:
                grad -= form.den.T @ (1.0 / (form.den @ point))
            return grad

        def hessian(point, tau=tau):
            H = tau * form.hessian(point)
            idx = np.flatnonzero(mask)
            H[idx, idx] += 1.0 / point[idx] ** 2
            if form.weights.size:
                inv = 1.0 / (form.den @ point)
                H += (form.den * (inv ** 2)[:, None]).T @ form.den
            return _regularize_free(H, free)

        centering = _center(x, A, b, merit, gradient, hessian, max(1, max_iter - steps), history, tau,
                            inner_tol=inner_tol)
        x, steps = centering.x, steps + max(1, centering.steps)

        objective = form.objective(x)
        if nu == 0 or nu / tau <= tol * max(abs(objective), 1e-3 * f_ref):
            # a stalled centering is accepted too when its certificate holds
            kkt, _ = _kkt_residuals(form, A, x, tau, objective, 1e-3 * f_ref)
            if kkt.within(tol):
                return x, tau, steps, True, history
            if centering.converged:
                # off the central path by more than the tolerance allows: recenter tighter
                inner_tol = max(inner_tol * 1e-2, MIN_INNER_TOL)
        else:
            tau *= BARRIER_GROWTH
        if steps >= max_iter:
            return x, tau, steps, False, history


def _kkt_residuals(form: _StandardForm, A: np.ndarray, x: np.ndarray, tau: float,
                   objective: float, f_floor: float) -> t.Tuple[KktResiduals, np.ndarray]:
    mask = form.mask
    grad = form.gradient(x)
    dual = np.zeros(form.size)
    dual[mask] = 1.0 / (tau * x[mask])
    if form.weights.size:
        dual += form.den.T @ (1.0 / (tau * (form.den @ x)))

    if A.shape[0]:
        multipliers = np.linalg.lstsq(A.T, dual - grad, rcond=None)[0]
        stationarity = grad - dual + A.T @ multipliers
    else:
        stationarity = grad - dual
    scale = max(float(np.max(np.abs(grad))), float(np.max(np.abs(dual))), 1e-300)
    complementarity = float(dual @ x) / max(abs(objective), f_floor, 1e-300)

    eq_residual = float(np.max(np.abs(form.A @ x - form.b))) if form.A.shape[0] else 0.0
    return KktResiduals(eq_residual, float(np.max(np.abs(stationarity))) / scale, complementarity), dual


def solve(prog: StructuredProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SolveResult:
    """Solves the structured program to KKT tolerance `tol`

    Returns a SolveResult with status Infeasible when the equality system is
    inconsistent or admits no strictly feasible point, MaxIter when the Newton
    budget is exhausted (the last iterate is attached).
    """
    if tol <= 0:
        raise DataError(f'Tolerance must be positive, got {tol}')

    form = _standard_form(prog)
    A_r, b_r = _independent_rows(form.A, form.b)

    # Phase 0: consistency of the equalities
    if form.A.shape[0]:
        x_ls = np.linalg.lstsq(form.A, form.b, rcond=None)[0]
        inconsistency = float(np.max(np.abs(form.A @ x_ls - form.b)))
    else:
        x_ls, inconsistency = np.zeros(form.size), 0.0
    if inconsistency > tol * max(1.0, float(np.max(np.abs(form.b), initial=0.0))):
        logger.info('Equality system inconsistent (residual %.3g)', inconsistency)
        return SolveResult(
            z=x_ls[:form.original_size], objective=float('nan'), status=SolveStatus.INFEASIBLE,
            kkt=KktResiduals(inconsistency, float('nan'), float('nan')), iterations=0, phase1_bound=float('inf')
        )

    # Phase 1: strictly feasible point
    phase_one = _phase_one(form, A_r, b_r, x_ls, max_iter)
    eq_residual = float(np.max(np.abs(form.A @ phase_one.x - form.b))) if form.A.shape[0] else 0.0
    if phase_one.bound >= 0:
        logger.info('No strictly feasible point (phase-1 bound %.3g)', phase_one.bound)
        return SolveResult(
            z=phase_one.x[:form.original_size], objective=float('nan'), status=SolveStatus.INFEASIBLE,
            kkt=KktResiduals(eq_residual, float('nan'), float('nan')), iterations=phase_one.steps,
            phase1_bound=phase_one.bound
        )

    if not prog.has_cost:
        return SolveResult(
            z=phase_one.x[:form.original_size], objective=0.0, status=SolveStatus.OPTIMAL,
            kkt=KktResiduals(eq_residual, 0.0, 0.0), iterations=phase_one.steps, phase1_bound=phase_one.bound
        )

    # Phase 2: central path
    x, tau, steps, converged, history = _barrier(form, A_r, b_r, phase_one.x, tol, max_iter)
    z = x[:form.original_size]
    objective = prog.objective(z)
    f_ref = max(abs(form.objective(phase_one.x)), float(np.abs(form.c) @ np.abs(phase_one.x))) or 1.0
    kkt, dual = _kkt_residuals(form, A_r, x, tau, form.objective(x), 1e-3 * f_ref)

    status = SolveStatus.OPTIMAL if converged and kkt.within(tol) else SolveStatus.MAX_ITER
    logger.debug('Barrier finished: status=%s objective=%.6g steps=%d kkt=%s', status.value, objective, steps, kkt)
    return SolveResult(
        z=z, objective=objective, status=status, kkt=kkt, iterations=phase_one.steps + steps,
        phase1_bound=phase_one.bound, history=tuple(history), duals=dual[:form.original_size]
    )


def project_simplex_rows(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row of V onto the probability simplex"""
    V = np.atleast_2d(V)
    n_features = V.shape[1]
    U = np.sort(V, axis=1)[:, ::-1]
    cssv = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(n_features) + 1
    cond = U - cssv / ind > 0
    rho = np.count_nonzero(cond, axis=1)
    theta = cssv[np.arange(len(V)), rho - 1] / rho
    return np.maximum(V - theta[:, np.newaxis], 0)


class SimplexFit(t.NamedTuple):
    P: np.ndarray
    iterations: int
    kkt_residual: float
    worst_row: int


def _accelerated_projection(
        gradient: t.Callable[[np.ndarray], np.ndarray],
        lipschitz: float,
        start: np.ndarray,
        tol: float,
        max_iter: int
) -> SimplexFit:
    """FISTA with gradient-based adaptive restart over products of row simplices"""
    x = project_simplex_rows(start)
    if lipschitz <= 0:
        # no curvature: the objective is linear and each row is solved by a vertex
        descent = -gradient(x)
        vertices = np.zeros_like(x)
        vertices[np.arange(len(x)), np.argmax(descent, axis=1)] = 1.0
        return SimplexFit(vertices, 0, 0.0, 0)

    step = 1.0 / lipschitz
    y = x.copy()
    momentum = 1.0

    def row_residuals(point):
        return np.max(np.abs(point - project_simplex_rows(point - step * gradient(point))), axis=1)

    for iteration in range(1, max_iter + 1):
        x_next = project_simplex_rows(y - step * gradient(y))
        if np.sum((y - x_next) * (x_next - x)) > 0:
            momentum = 1.0
        momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
        y = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x)
        x, momentum = x_next, momentum_next

        if iteration % 10 == 0 or iteration == max_iter:
            residuals = row_residuals(x)
            if residuals.max() <= tol:
                return SimplexFit(x, iteration, float(residuals.max()), int(residuals.argmax()))

    residuals = row_residuals(x)
    return SimplexFit(x, max_iter, float(residuals.max()), int(residuals.argmax()))


def solve_stochastic_ls(H: np.ndarray, B: np.ndarray, tol: float = 1e-10, max_iter: int = 20000,
                        start: t.Optional[np.ndarray] = None) -> SimplexFit:
    """min 1/2 tr(P'HP) - tr(B'P) over row-stochastic nonnegative P

    The gradient HP - B couples the entries of a column while the feasible set
    is a product of row simplices, so each iteration is one matrix product and
    one vectorized row projection.

    Raises
    ------
    ConvergenceError
        If the projected-gradient residual is above `tol` after `max_iter` iterations
    """
    H = 0.5 * (H + H.T)
    lipschitz = float(scipy.linalg.eigvalsh(H).max())
    start = np.full(B.shape, 1.0 / B.shape[1]) if start is None else start

    fit = _accelerated_projection(lambda P: H @ P - B, lipschitz, start, tol, max_iter)
    if not fit.kkt_residual <= tol:
        raise ConvergenceError('Stochastic least squares', fit.iterations, {'kkt': fit.kkt_residual}, row=fit.worst_row)
    return fit


def solve_simplex_ls(Q: t.Any, rhs: t.Any, tol: float = 1e-10, max_iter: int = 20000) -> np.ndarray:
    """argmin 1/2 p'Qp - rhs'p over the probability simplex"""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q = 0.5 * (Q + Q.T)
    rhs = np.asarray(rhs, dtype=float).reshape(1, -1)
    lipschitz = float(scipy.linalg.eigvalsh(Q).max())
    start = np.full(rhs.shape, 1.0 / rhs.shape[1])

    fit = _accelerated_projection(lambda p: p @ Q - rhs, lipschitz, start, tol, max_iter)
    if not fit.kkt_residual <= tol:
        raise ConvergenceError('Simplex least squares', fit.iterations, {'kkt': fit.kkt_residual})
    return fit.P[0]


def dump_program(prog: StructuredProgram, directory: str) -> str:
    """Writes the program as raw float64 matrices plus a JSON manifest; returns the manifest path"""
    os.makedirs(directory, exist_ok=True)
    arrays = {
        'linear_cost': prog.linear_cost,
        'eq_A': prog.eq_A,
        'eq_b': prog.eq_b,
        'nonneg_idx': prog.nonneg_idx.astype(float),
        'perspective_num': prog.perspective_num,
        'perspective_den': prog.perspective_den,
        'perspective_weights': prog.perspective_weights,
        'l1_rows': prog.l1_rows,
        'l1_weights': prog.l1_weights,
    }
    manifest = {}
    for name, array in arrays.items():
        filename = f'{name}.bin'
        np.ascontiguousarray(array, dtype='<f8').tofile(os.path.join(directory, filename))
        manifest[name] = {'file': filename, 'shape': list(array.shape)}

    path = os.path.join(directory, 'program.json')
    with open(path, 'w') as file:
        json.dump(manifest, file, indent=2, sort_keys=True)
    return path
