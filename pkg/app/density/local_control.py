"""
Local linear identification, LQR synthesis and blending with the global density controller
"""

import typing as t
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, DataError
from .ocp import GlobalController
from .types import BatchTrajectory, LocalLinearModel, SnapshotSet

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-13
NEWTON_MAX_ITER = 100
RICCATI_TOL = 1e-8


def identify_local(data: SnapshotSet) -> LocalLinearModel:
    """Least-squares (A, b) with y = A x + b u on the stacked regressor [X; U]

    Raises
    ------
    DataError
        If the dataset lacks zero- or step-input pairs or the regressor is rank deficient
    """
    n_zero = data.n_zero_input
    if n_zero == 0 or n_zero == data.size:
        raise DataError(f'Local data needs both zero- and step-input pairs, got {n_zero} zero-input of {data.size}')

    regressor = np.hstack([data.x_points, data.inputs.reshape(-1, 1)])
    singular = scipy.linalg.svdvals(regressor)
    if singular[-1] <= 1e-12 * singular[0] * max(regressor.shape):
        _, _, vt = scipy.linalg.svd(regressor, full_matrices=False)
        raise DataError(f'Local regressor is rank deficient along direction {np.round(vt[-1], 6).tolist()} '
                        f'(state coordinates then input)')

    theta, *_ = scipy.linalg.lstsq(regressor, data.y_points)
    A, b = theta[:-1].T, theta[-1]
    fit_residual = float(np.linalg.norm(regressor @ theta - data.y_points))
    model = LocalLinearModel(A=A, b=b, dt=data.dt, fit_residual=fit_residual)
    logger.info('Identified local model: spectral radius %.6g, residual %.3g', model.spectral_radius, fit_residual)
    return model


def riccati_residual(A: np.ndarray, b: np.ndarray, Q: np.ndarray, r: float, P: np.ndarray) -> float:
    """|A'P + PA - (1/r) P b b' P + Q|_F"""
    pb = P @ b
    return float(np.linalg.norm(A.T @ P + P @ A - np.outer(pb, pb) / r + Q))


def _is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.all(np.real(np.linalg.eigvals(A)) < 0))


def _uncontrollable_unstable_modes(A: np.ndarray, b: np.ndarray) -> t.List[complex]:
    """Eigenvalues with Re >= 0 failing the PBH rank test"""
    n = A.shape[0]
    failing = []
    for eigenvalue in np.linalg.eigvals(A):
        if eigenvalue.real < 0:
            continue
        pencil = np.hstack([A - eigenvalue * np.eye(n), b.reshape(-1, 1)])
        if np.linalg.matrix_rank(pencil, tol=1e-9 * max(1.0, np.linalg.norm(pencil))) < n:
            failing.append(complex(eigenvalue))
    return failing


def _initial_gain(A: np.ndarray, b: np.ndarray, Q: np.ndarray, r: float) -> np.ndarray:
    if _is_hurwitz(A):
        return np.zeros(A.shape[0])

    # Bass: (A + beta I) Z + Z (A + beta I)' = 2 b b', K = b' Z^-1
    shift = A + (np.linalg.norm(A) + 1.0) * np.eye(A.shape[0])
    Z = scipy.linalg.solve_continuous_lyapunov(shift, 2.0 * np.outer(b, b))
    try:
        gain = scipy.linalg.solve(Z, b, assume_a='sym')
        if np.all(np.isfinite(gain)) and _is_hurwitz(A - np.outer(b, gain)):
            return gain
    except np.linalg.LinAlgError:
        pass

    logger.debug('Bass gain failed; starting Newton-Kleinman from the Schur-based CARE solution')
    P = scipy.linalg.solve_continuous_are(A, b.reshape(-1, 1), Q, np.array([[r]]))
    return b @ P / r


def solve_care(A: np.ndarray, b: np.ndarray, Q: np.ndarray, r: float) -> t.Tuple[np.ndarray, np.ndarray, int]:
    """Newton-Kleinman iteration for the continuous Riccati equation; returns (P, K, iterations)

    Raises
    ------
    ConvergenceError
        If P does not settle within the iteration budget
    """
    gain = _initial_gain(A, b, Q, r)
    P = np.zeros_like(A)
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        closed = A - np.outer(b, gain)
        P_next = scipy.linalg.solve_continuous_lyapunov(closed.T, -(Q + r * np.outer(gain, gain)))
        P_next = 0.5 * (P_next + P_next.T)
        gain = b @ P_next / r
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step <= NEWTON_TOL * max(1.0, np.linalg.norm(P)):
            return P, gain, iteration
    raise ConvergenceError('Newton-Kleinman', NEWTON_MAX_ITER, {'step': float(step)})


@dataclass(frozen=True, eq=False)
class LocalController:
    """u = -K x near the origin with local density max((x'Px)^-3 - gamma, 0)"""
    K: np.ndarray
    P: np.ndarray
    gamma: float
    delta: float
    dt: float
    A_c: np.ndarray
    b_c: np.ndarray
    riccati_residual: float = 0.0
    Q: t.Optional[np.ndarray] = None
    r: float = 1.0

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @property
    def active_level(self) -> float:
        """Sublevel of x'Px inside which the local density is positive"""
        return self.gamma ** (-1.0 / 3.0)

    def control(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x, dtype=float).reshape(-1, self.dim) @ self.K

    def __call__(self, x: np.ndarray, time: float = 0.0) -> np.ndarray:
        return self.control(x)


def lqr_local(model: LocalLinearModel, Q: t.Optional[np.ndarray] = None, r: float = 1.0, delta: float = 0.1,
              gamma: t.Optional[float] = None) -> LocalController:
    """LQR for the continuous pair ((A - I)/dt, b/dt); gamma defaults to delta

    Raises
    ------
    DataError
        If the pair is not stabilizable, the weights are invalid or the value matrix is singular
    ConvergenceError
        If the Riccati residual of the solution is above tolerance
    """
    A_c, b_c = model.continuous_pair()
    n = A_c.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if r <= 0:
        raise DataError(f'LQR control weight must be positive, got {r}')
    if Q.shape != (n, n) or np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise DataError('LQR state weight must be a symmetric PSD matrix of the state dimension')
    gamma = delta if gamma is None else gamma
    if gamma <= 0 or delta <= 0:
        raise DataError(f'gamma and delta must be positive, got gamma={gamma}, delta={delta}')

    failing = _uncontrollable_unstable_modes(A_c, b_c)
    if failing:
        raise DataError(f'Local pair is not stabilizable; uncontrollable modes {[round(e.real, 6) for e in failing]}')

    if np.allclose(b_c, 0.0):
        # Lyapunov branch: drift already locally stable, zero gain
        P = scipy.linalg.solve_continuous_lyapunov(A_c.T, -Q)
        K = np.zeros(n)
        iterations = 0
    else:
        P, K, iterations = solve_care(A_c, b_c, Q, r)
        logger.debug('Newton-Kleinman converged in %d iterations', iterations)
    P = 0.5 * (P + P.T)

    residual = riccati_residual(A_c, b_c, Q, r, P)
    if not residual <= RICCATI_TOL * max(1.0, np.linalg.norm(P)):
        raise ConvergenceError('Riccati equation', iterations, {'riccati': residual})
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise DataError('Local value matrix is not positive definite; '
                        'the state weight leaves stable directions unpenalized') from None
    if not _is_hurwitz(A_c - np.outer(b_c, K)):
        raise DataError('Local closed loop is not Hurwitz')

    logger.info('Local LQR gain %s', np.array2string(K, precision=6))
    return LocalController(K=K, P=P, gamma=float(gamma), delta=float(delta), dt=model.dt, A_c=A_c, b_c=b_c,
                           riccati_residual=residual, Q=Q, r=float(r))


def local_density(local: LocalController, x: t.Any) -> np.ndarray:
    """max((x'Px)^-3 - gamma, 0); +inf at the origin"""
    points = np.asarray(x, dtype=float).reshape(-1, local.dim)
    level = np.einsum('bi,ij,bj->b', points, local.P, points)
    with np.errstate(divide='ignore'):
        density = np.maximum(np.where(level > 0, level, 0.0) ** -3.0 - local.gamma, 0.0)
    density[level <= 0] = np.inf
    return density


@dataclass(frozen=True, eq=False)
class BlendedController:
    local: LocalController
    global_ctrl: GlobalController

    def weights(self, x: t.Any) -> t.Tuple[np.ndarray, np.ndarray]:
        """(lambda_local, lambda_global), each in [0, 1] and summing to 1"""
        rho_local = local_density(self.local, x)
        rho_global = np.maximum(self.global_ctrl.density(x), 0.0)
        total = rho_local + rho_global

        local_weight = np.ones_like(rho_local)
        mixed = np.isfinite(rho_local) & (total > 0)
        local_weight[mixed] = rho_local[mixed] / total[mixed]
        return local_weight, 1.0 - local_weight

    def __call__(self, x: np.ndarray, time: float = 0.0) -> np.ndarray:
        local_weight, global_weight = self.weights(x)
        u_local = self.local.control(x)
        u_global = np.zeros_like(u_local)
        needed = global_weight > 0
        if needed.any():
            points = np.asarray(x, dtype=float).reshape(-1, self.local.dim)
            u_global[needed] = self.global_ctrl(points[needed])
        return local_weight * u_local + global_weight * u_global

    def entry_time(self, batch: BatchTrajectory) -> np.ndarray:
        """First time each trajectory reaches the local-density support; inf if never"""
        n_batch, n_times, dim = batch.states.shape
        states = batch.states.reshape(-1, dim)
        finite = np.all(np.isfinite(states), axis=1)
        active = np.zeros(len(states), dtype=bool)
        active[finite] = local_density(self.local, states[finite]) > 0
        active = active.reshape(n_batch, n_times)
        return np.where(active.any(axis=1), batch.times[np.argmax(active, axis=1)], np.inf)


def blend(ctrl: BlendedController, x: t.Any) -> np.ndarray:
    return ctrl(x)
