"""
Gaussian RBF dictionary, quadrature over the working domain minus the origin ball,
and the precomputed integrals of the convex programs
"""

import typing as t
import logging
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DataError
from .types import CostData, QuadratureRule
from .utils import as_box, as_points, box_volume

logger = logging.getLogger(__name__)

EVAL_CHUNK = 8192
MONTE_CARLO_MIN_DIM = 4


@dataclass(frozen=True, eq=False)
class RbfDictionary:
    centers: np.ndarray
    sigma: float
    domain_box: np.ndarray
    delta: float
    spacing: np.ndarray
    warnings: t.Tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def evaluate(self, x: t.Any) -> np.ndarray:
        """psi_k(x) = exp(-|x - c_k|^2 / (2 sigma^2)); (B, n) -> (B, N), (n,) -> (N,)"""
        points, single = as_points(x, self.dim)
        values = np.empty((points.shape[0], self.size))
        scale = -0.5 / self.sigma ** 2
        for start in range(0, points.shape[0], EVAL_CHUNK):
            chunk = points[start:start + EVAL_CHUNK]
            values[start:start + EVAL_CHUNK] = np.exp(scale * cdist(chunk, self.centers, 'sqeuclidean'))
        return values[0] if single else values

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.domain_box[:, 0], self.domain_box[:, 1])


@dataclass(frozen=True)
class IdentityDictionary:
    """Psi(x) = x"""
    dim: int

    @property
    def size(self) -> int:
        return self.dim

    def evaluate(self, x: t.Any) -> np.ndarray:
        points, single = as_points(x, self.dim)
        return points[0].copy() if single else points.copy()


Dictionary = t.Union[RbfDictionary, IdentityDictionary]


def build_dictionary(
        domain_box: t.Any,
        per_dim_counts: t.Union[int, t.Sequence[int]],
        sigma_factor: float = 0.4,
        delta: float = 0.0,
        sigma: t.Optional[float] = None
) -> RbfDictionary:
    """Uniform grid of Gaussian centers; sigma = sigma_factor * spacing unless given explicitly

    The width rule d <= 3 sigma <= 1.5 d is checked per dimension; violations are
    recorded on the dictionary and logged, not rejected.
    """
    box = as_box(domain_box)
    dim = box.shape[0]
    counts = np.broadcast_to(np.asarray(per_dim_counts, dtype=int), (dim,))
    if np.any(counts < 2):
        raise DataError(f'Need at least 2 centers per dimension, got {counts.tolist()}')
    if delta < 0:
        raise DataError(f'Excluded ball radius must be >= 0, got {delta}')

    axes = [np.linspace(lo, hi, count) for (lo, hi), count in zip(box, counts)]
    spacing = (box[:, 1] - box[:, 0]) / (counts - 1)
    centers = np.array(list(itertools.product(*axes)), dtype=float)

    if sigma is None:
        if sigma_factor <= 0:
            raise DataError(f'sigma_factor must be positive, got {sigma_factor}')
        sigma = float(sigma_factor * spacing.min())
    elif sigma <= 0:
        raise DataError(f'sigma must be positive, got {sigma}')

    warnings = []
    for k, d in enumerate(spacing):
        if not d - 1e-12 <= 3 * sigma <= 1.5 * d + 1e-12:
            warnings.append(f'width rule d <= 3 sigma <= 1.5 d violated in dimension {k}: d={d:.4g}, sigma={sigma:.4g}')
    for message in warnings:
        logger.warning(message)

    return RbfDictionary(centers=centers, sigma=float(sigma), domain_box=box, delta=float(delta),
                         spacing=spacing, warnings=tuple(warnings))


def eval_basis(dictionary: Dictionary, x: t.Any) -> np.ndarray:
    return dictionary.evaluate(x)


def lambda_matrix(dictionary: RbfDictionary, form: str = 'analytic') -> np.ndarray:
    """Gram matrix of the dictionary over R^n

    `analytic` is the exact Gaussian product integral (pi sigma^2)^{n/2} exp(-|ci - cj|^2 / (4 sigma^2));
    `narrow` is the variant (pi sigma^2 / 2)^{n/2} exp(-|ci - cj|^2 / (2 sigma^2)).
    """
    sq = cdist(dictionary.centers, dictionary.centers, 'sqeuclidean')
    s2 = dictionary.sigma ** 2
    n = dictionary.dim
    if form == 'analytic':
        return (np.pi * s2) ** (n / 2) * np.exp(-sq / (4 * s2))
    if form == 'narrow':
        return (np.pi * s2 / 2) ** (n / 2) * np.exp(-sq / (2 * s2))
    raise DataError(f'Unknown Lambda form {form!r}; valid forms: analytic, narrow')


def midpoint_rule(box: np.ndarray, per_dim_nodes: t.Union[int, t.Sequence[int]]) -> t.Tuple[np.ndarray, np.ndarray]:
    counts = np.broadcast_to(np.asarray(per_dim_nodes, dtype=int), (box.shape[0],))
    if np.any(counts < 2):
        raise DataError(f'Need at least 2 quadrature nodes per dimension, got {counts.tolist()}')
    widths = (box[:, 1] - box[:, 0]) / counts
    axes = [lo + (np.arange(count) + 0.5) * width for (lo, _), count, width in zip(box, counts, widths)]
    nodes = np.array(list(itertools.product(*axes)), dtype=float)
    weights = np.full(len(nodes), float(np.prod(widths)))
    return nodes, weights


def build_quadrature(
        dictionary: Dictionary,
        per_dim_nodes: t.Union[int, t.Sequence[int]],
        domain_box: t.Any = None,
        delta: t.Optional[float] = None,
        mc_samples: int = 20000,
        seed: int = 0
) -> QuadratureRule:
    """Midpoint tensor rule over the box (Monte Carlo from 4 dimensions) with the delta-ball nodes dropped

    Raises
    ------
    DataError
        If the excluded ball covers the whole box
    """
    box = as_box(dictionary.domain_box if domain_box is None else domain_box)
    delta = dictionary.delta if delta is None else delta

    farthest = np.sqrt(np.sum(np.maximum(box[:, 0] ** 2, box[:, 1] ** 2)))
    if delta > 0 and farthest <= delta:
        raise DataError(f'Excluded ball of radius {delta} covers the whole domain box')

    if box.shape[0] >= MONTE_CARLO_MIN_DIM:
        rng = np.random.default_rng(seed)
        nodes = rng.uniform(box[:, 0], box[:, 1], size=(mc_samples, box.shape[0]))
        weights = np.full(mc_samples, box_volume(box) / mc_samples)
    else:
        nodes, weights = midpoint_rule(box, per_dim_nodes)

    keep = np.linalg.norm(nodes, axis=1) >= delta if delta > 0 else np.ones(len(nodes), dtype=bool)
    if not keep.any():
        raise DataError(f'No quadrature node lies outside the excluded ball of radius {delta}')

    return QuadratureRule(nodes=nodes[keep], weights=weights[keep], excludes_ball=delta > 0)


def project_density(dictionary: Dictionary, quadrature: QuadratureRule,
                    h0: t.Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Weighted least-squares coefficients m with Psi'm ~ h0 on the quadrature nodes"""
    psi = dictionary.evaluate(quadrature.nodes)
    root = np.sqrt(quadrature.weights)
    m_vec, *_ = np.linalg.lstsq(psi * root[:, None], np.asarray(h0(quadrature.nodes), dtype=float) * root, rcond=None)
    if np.min(psi @ m_vec) <= 0:
        logger.warning('Projected h0 is not positive on every quadrature node')
    return m_vec


def cost_data(
        dictionary: RbfDictionary,
        quadrature: QuadratureRule,
        q: t.Callable[[np.ndarray], np.ndarray],
        m_choice: t.Union[str, t.Callable[[np.ndarray], np.ndarray]] = 'ones',
        lambda_form: str = 'analytic'
) -> CostData:
    """d = int q Psi, D = int Psi Psi', c = int psi_k over X1, m, and Lambda

    Raises
    ------
    DataError
        If q is negative on a quadrature node
    """
    q_values = np.asarray(q(quadrature.nodes), dtype=float).reshape(-1)
    negative = np.flatnonzero(q_values < 0)
    if negative.size:
        raise DataError(f'State cost q is negative at {negative.size} quadrature node(s), '
                        f'e.g. x={quadrature.nodes[negative[0]].tolist()}')

    psi = dictionary.evaluate(quadrature.nodes)
    weights = quadrature.weights

    d_vec = psi.T @ (weights * q_values)
    D_mat = (psi * weights[:, None]).T @ psi
    D_mat = 0.5 * (D_mat + D_mat.T)
    basis_mass = psi.T @ weights

    if isinstance(m_choice, str):
        if m_choice != 'ones':
            raise DataError(f'Unknown m choice {m_choice!r}')
        m_vec = np.ones(dictionary.size)
    else:
        m_vec = project_density(dictionary, quadrature, m_choice)

    return CostData(
        d_vec=d_vec,
        D_mat=D_mat,
        c_scalar=float(basis_mass.mean()),
        m_vec=m_vec,
        Lambda=lambda_matrix(dictionary, lambda_form),
        basis_mass=basis_mass,
        lambda_form=lambda_form
    )


def sink_indices(dictionary: RbfDictionary) -> np.ndarray:
    """Basis functions absorbing the density flow: centers inside the delta ball, else those nearest the origin"""
    distances = np.linalg.norm(dictionary.centers, axis=1)
    inside = np.flatnonzero(distances <= dictionary.delta)
    if inside.size:
        return inside
    nearest = distances.min()
    return np.flatnonzero(distances <= nearest * (1 + 1e-9) + 1e-12)


def quadratic_cost(weights: t.Sequence[float]) -> t.Callable[[np.ndarray], np.ndarray]:
    """q(x) = x' diag(weights) x"""
    weights = np.asarray(weights, dtype=float)

    def q(x: np.ndarray) -> np.ndarray:
        points = np.asarray(x, dtype=float).reshape(-1, weights.size)
        return (points ** 2) @ weights

    return q
