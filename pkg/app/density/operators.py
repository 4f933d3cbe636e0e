"""
Data-driven approximations of the Koopman and Perron-Frobenius operators:
EDMD, its positivity and Markov preserving variant, and the generator pair
"""

import typing as t
import logging

import numpy as np
import scipy.linalg

from .dictionary import Dictionary
from .exceptions import DataError
from .solver import solve_stochastic_ls, project_simplex_rows
from .types import EdmdMatrices, GeneratorPair, InputLabel, PfApproximation, SnapshotSet

logger = logging.getLogger(__name__)

DEFAULT_NSDMD_TOL = 1e-10
DEFAULT_NSDMD_MAX_ITER = 20000
RIDGE_FACTOR = 1e-10


def edmd_matrices(data: SnapshotSet, dictionary: Dictionary) -> EdmdMatrices:
    """G = (1/M) sum Psi(x) Psi(x)', A = (1/M) sum Psi(x) Psi(y)'"""
    if data.size == 0:
        raise DataError('Cannot build EDMD matrices from an empty dataset')
    if data.dim != dictionary.dim:
        raise DataError(f'Dataset has dimension {data.dim}, dictionary has {dictionary.dim}')

    psi_x = dictionary.evaluate(data.x_points)
    psi_y = dictionary.evaluate(data.y_points)
    G = psi_x.T @ psi_x / data.size
    A = psi_x.T @ psi_y / data.size
    return EdmdMatrices(G=0.5 * (G + G.T), A=A, M=data.size)


def edmd_fit(mats: EdmdMatrices) -> np.ndarray:
    """K = pinv(G) A, the least-squares Koopman matrix"""
    K = scipy.linalg.pinv(mats.G) @ mats.A
    rank = np.linalg.matrix_rank(mats.G)
    if rank < mats.G.shape[0]:
        logger.info('EDMD Gram matrix is rank deficient (%d of %d)', rank, mats.G.shape[0])
    return K


def koopman_spectrum(K: np.ndarray) -> np.ndarray:
    """Eigenvalues of K sorted by decreasing modulus"""
    eigenvalues = scipy.linalg.eigvals(K)
    return eigenvalues[np.argsort(-np.abs(eigenvalues))]


def _normalize(mats: EdmdMatrices, Lambda: np.ndarray) -> t.Tuple[np.ndarray, np.ndarray, float, float]:
    """Returns G Lambda^-1, A Lambda^-1, cond(Lambda) and the ridge used (0 when Cholesky succeeds)"""
    Lambda = 0.5 * (Lambda + Lambda.T)
    size = Lambda.shape[0]
    condition = float(np.linalg.cond(Lambda))
    if condition > 1e12:
        logger.warning('Lambda is ill-conditioned (cond=%.3g)', condition)

    ridge = 0.0
    try:
        factor = scipy.linalg.cho_factor(Lambda)
    except np.linalg.LinAlgError:
        ridge = RIDGE_FACTOR * float(np.trace(Lambda)) / size
        logger.warning('Cholesky of Lambda failed; retrying with ridge %.3g', ridge)
        factor = scipy.linalg.cho_factor(Lambda + ridge * np.eye(size))

    # X Lambda^-1 = (Lambda^-1 X')' for symmetric Lambda
    G_hat = scipy.linalg.cho_solve(factor, mats.G.T).T
    A_hat = scipy.linalg.cho_solve(factor, mats.A.T).T
    return G_hat, A_hat, condition, ridge


def nsdmd_fit(mats: EdmdMatrices, Lambda: np.ndarray, dt: float, tol: float = DEFAULT_NSDMD_TOL,
              max_iter: int = DEFAULT_NSDMD_MAX_ITER) -> PfApproximation:
    """Nonnegative row-stochastic P_hat minimizing |G_hat P_hat - A_hat|_F

    Raises
    ------
    ConvergenceError
        If the projected-gradient iteration stops above `tol`
    """
    if dt <= 0:
        raise DataError(f'Time step must be positive, got {dt}')
    G_hat, A_hat, condition, ridge = _normalize(mats, Lambda)
    size = G_hat.shape[0]

    unconstrained = np.linalg.lstsq(G_hat, A_hat, rcond=None)[0]
    unconstrained_residual = float(np.linalg.norm(G_hat @ unconstrained - A_hat))

    fit = solve_stochastic_ls(G_hat.T @ G_hat, G_hat.T @ A_hat, tol=tol, max_iter=max_iter,
                              start=project_simplex_rows(unconstrained))

    P_hat = np.clip(fit.P, 0.0, None)
    P_hat /= P_hat.sum(axis=1, keepdims=True)
    residual = float(np.linalg.norm(G_hat @ P_hat - A_hat))

    P = P_hat.T
    logger.info('NSDMD converged in %d iterations: residual %.4g (unconstrained %.4g), kkt %.3g',
                fit.iterations, residual, unconstrained_residual, fit.kkt_residual)
    return PfApproximation(
        P=P,
        M_gen=(P - np.eye(size)) / dt,
        dt=dt,
        residual=residual,
        unconstrained_residual=unconstrained_residual,
        iterations=fit.iterations,
        kkt_residual=fit.kkt_residual,
        lambda_condition=condition,
        ridge=ridge
    )


def generator_pair(
        zero_data: SnapshotSet,
        step_data: t.Optional[SnapshotSet],
        dictionary: Dictionary,
        Lambda: np.ndarray,
        tol: float = DEFAULT_NSDMD_TOL,
        max_iter: int = DEFAULT_NSDMD_MAX_ITER
) -> GeneratorPair:
    """M0 = (P0 - I)/dt from zero-input data and M1 = (P1 - P0)/dt from step-input data

    `step_data` may be None, in which case only the drift generator is fitted.

    Raises
    ------
    DataError
        On wrong input labels, mismatched time steps or dimensions
    """
    if InputLabel(zero_data.input_label) != InputLabel.ZERO:
        raise DataError(f'Drift data must be zero-input, got {zero_data.input_label.value!r}')
    if step_data is not None:
        if InputLabel(step_data.input_label) != InputLabel.STEP:
            raise DataError(f'Input data must be step-input, got {step_data.input_label.value!r}')
        if not np.isclose(zero_data.dt, step_data.dt, rtol=0.0, atol=1e-15):
            raise DataError(f'Datasets have different time steps: {zero_data.dt} and {step_data.dt}')
        if zero_data.dim != step_data.dim:
            raise DataError(f'Datasets have different dimensions: {zero_data.dim} and {step_data.dim}')

    zero_fit = nsdmd_fit(edmd_matrices(zero_data, dictionary), Lambda, zero_data.dt, tol, max_iter)
    if step_data is None:
        return GeneratorPair(M0=zero_fit.M_gen, M1=None, dt=zero_data.dt, zero_fit=zero_fit)

    step_fit = nsdmd_fit(edmd_matrices(step_data, dictionary), Lambda, step_data.dt, tol, max_iter)
    M1 = (step_fit.P - zero_fit.P) / zero_data.dt
    return GeneratorPair(M0=zero_fit.M_gen, M1=M1, dt=zero_data.dt, zero_fit=zero_fit, step_fit=step_fit)
