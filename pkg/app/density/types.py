import typing as t
import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

MARKOV_ENTRY_TOL = 1e-9
MARKOV_ROW_SUM_TOL = 1e-8


class InputLabel(str, enum.Enum):
    ZERO = 'zero'
    STEP = 'step'
    MIXED = 'mixed'


class SolveStatus(str, enum.Enum):
    OPTIMAL = 'optimal'
    MAX_ITER = 'max_iter'
    INFEASIBLE = 'infeasible'


class Norm(str, enum.Enum):
    L2 = 'l2'
    L1 = 'l1'
    FEASIBILITY = 'feasibility'


class CostForm(str, enum.Enum):
    PERSPECTIVE = 'perspective'
    DIAGONAL = 'diagonal'


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """One-step pairs (x_i, y_i) sampled from a known system"""
    x_points: np.ndarray
    y_points: np.ndarray
    dt: float
    input_label: InputLabel
    domain_box: np.ndarray
    inputs: np.ndarray
    seed: t.Optional[int] = None

    def __post_init__(self):
        if self.x_points.ndim != 2 or self.y_points.shape != self.x_points.shape:
            raise DataError(f'Snapshot pairs need matching (M, n) arrays, got x {self.x_points.shape} '
                            f'and y {self.y_points.shape}')
        if self.inputs.shape != (self.size,):
            raise DataError(f'Expected {self.size} recorded inputs, got shape {self.inputs.shape}')
        if self.dt <= 0:
            raise DataError(f'Time step must be positive, got {self.dt}')
        if self.domain_box.shape != (self.dim, 2) or np.any(self.domain_box[:, 0] >= self.domain_box[:, 1]):
            raise DataError(f'Domain box must be {self.dim} increasing [lo, hi] pairs, got {self.domain_box.tolist()}')

        lo, hi = self.domain_box[:, 0], self.domain_box[:, 1]
        slack = 1e-9 * (hi - lo)
        outside = np.any((self.x_points < lo - slack) | (self.x_points > hi + slack), axis=1)
        if outside.any():
            raise DataError(f'{int(outside.sum())} snapshot point(s) lie outside the domain box, '
                            f'first at index {int(np.argmax(outside))}')

    @property
    def dim(self) -> int:
        return self.x_points.shape[1]

    @property
    def size(self) -> int:
        return self.x_points.shape[0]

    @property
    def n_zero_input(self) -> int:
        return int(np.count_nonzero(self.inputs == 0.0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class BatchTrajectory:
    """Trajectories of a batch of initial conditions; diverged rows are NaN after `escape_times`"""
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    escape_times: np.ndarray

    @property
    def diverged(self) -> np.ndarray:
        return np.isfinite(self.escape_times)

    def trajectory(self, index: int) -> Trajectory:
        return Trajectory(times=self.times, states=self.states[index], inputs=self.inputs[index])


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    excludes_ball: bool

    def __post_init__(self):
        if self.nodes.ndim != 2 or self.weights.shape != (self.nodes.shape[0],):
            raise DataError(f'Quadrature needs one weight per node, got nodes {self.nodes.shape} '
                            f'and weights {self.weights.shape}')
        if not np.all(self.weights > 0):
            raise DataError('Quadrature weights must be positive')

    @property
    def volume(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class CostData:
    d_vec: np.ndarray
    D_mat: np.ndarray
    c_scalar: float
    m_vec: np.ndarray
    Lambda: np.ndarray
    basis_mass: np.ndarray
    lambda_form: str = 'analytic'


class EdmdMatrices(t.NamedTuple):
    G: np.ndarray
    A: np.ndarray
    M: int


@dataclass(frozen=True, eq=False)
class PfApproximation:
    P: np.ndarray
    M_gen: np.ndarray
    dt: float
    residual: float
    unconstrained_residual: float
    iterations: int
    kkt_residual: float
    lambda_condition: float
    ridge: float = 0.0

    def __post_init__(self):
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise DataError(f'Transfer matrix must be square, got {self.P.shape}')
        if not self.min_entry >= -MARKOV_ENTRY_TOL:
            raise DataError(f'Transfer matrix has a negative entry {self.min_entry:.3g}')
        if not self.max_row_sum_deviation <= MARKOV_ROW_SUM_TOL:
            raise DataError(f'Transfer matrix rows of P_hat deviate from sum 1 by {self.max_row_sum_deviation:.3g}')

    @property
    def P_hat(self) -> np.ndarray:
        return self.P.T

    @property
    def min_entry(self) -> float:
        return float(self.P.min())

    @property
    def max_row_sum_deviation(self) -> float:
        return float(np.abs(self.P_hat.sum(axis=1) - 1.0).max())


@dataclass(frozen=True, eq=False)
class GeneratorPair:
    M0: np.ndarray
    M1: t.Optional[np.ndarray]
    dt: float
    zero_fit: t.Optional[PfApproximation] = None
    step_fit: t.Optional[PfApproximation] = None

    @property
    def size(self) -> int:
        return self.M0.shape[0]


@dataclass(frozen=True, eq=False)
class StructuredProgram:
    """min c'z + sum w (a'z)^2/(b'z) + sum w |r'z|  s.t.  Ez = e, z_i >= 0 for i in nonneg_idx"""
    linear_cost: np.ndarray
    eq_A: np.ndarray
    eq_b: np.ndarray
    nonneg_idx: np.ndarray
    perspective_num: np.ndarray
    perspective_den: np.ndarray
    perspective_weights: np.ndarray
    l1_rows: np.ndarray
    l1_weights: np.ndarray

    @property
    def size(self) -> int:
        return self.linear_cost.shape[0]

    @property
    def has_cost(self) -> bool:
        return bool(np.any(self.linear_cost != 0.0) or self.perspective_weights.size or self.l1_weights.size)

    def objective(self, z: np.ndarray) -> float:
        value = float(self.linear_cost @ z)
        if self.perspective_weights.size:
            alpha = self.perspective_num @ z
            beta = self.perspective_den @ z
            value += float(np.sum(self.perspective_weights * alpha ** 2 / beta))
        if self.l1_weights.size:
            value += float(np.sum(self.l1_weights * np.abs(self.l1_rows @ z)))
        return value


class KktResiduals(t.NamedTuple):
    eq_residual: float
    stationarity_residual: float
    complementarity: float

    def within(self, tol: float) -> bool:
        return max(self) <= tol


@dataclass(frozen=True, eq=False)
class SolveResult:
    z: np.ndarray
    objective: float
    status: SolveStatus
    kkt: KktResiduals
    iterations: int
    phase1_bound: float
    history: t.Tuple[t.Tuple[float, float], ...] = ()
    duals: t.Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class DensitySolution:
    v: np.ndarray
    w: np.ndarray
    sink: np.ndarray
    sink_idx: np.ndarray
    objective: float
    status: SolveStatus
    eq_residual: float
    norm: Norm
    r: float
    cost_form: CostForm = CostForm.PERSPECTIVE
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class LocalLinearModel:
    A: np.ndarray
    b: np.ndarray
    dt: float
    fit_residual: float

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def continuous_pair(self) -> t.Tuple[np.ndarray, np.ndarray]:
        n = self.A.shape[0]
        return (self.A - np.eye(n)) / self.dt, self.b / self.dt


class CostEstimate(t.NamedTuple):
    per_sample: np.ndarray
    mean: float
    diverged: int


class StabilityEstimate(t.NamedTuple):
    fraction: float
    stable: np.ndarray
    entry_times: np.ndarray


class ComparisonRow(t.NamedTuple):
    x0: float
    cost_analytic: float
    cost_datadriven: float
    cost_ratio: float
    sup_state_gap: float
    analytic_diverged: bool
    datadriven_diverged: bool


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    rows: t.List[ComparisonRow]
    trajectories: t.List[t.Tuple[BatchTrajectory, BatchTrajectory]] = field(default_factory=list)

    @property
    def cost_ratio(self) -> float:
        analytic = sum(row.cost_analytic for row in self.rows)
        datadriven = sum(row.cost_datadriven for row in self.rows)
        if analytic == 0.0:
            return 1.0 if datadriven == 0.0 else float('inf')
        return datadriven / analytic

    @property
    def max_gap(self) -> float:
        return max((row.sup_state_gap for row in self.rows), default=0.0)

    @property
    def diverged(self) -> int:
        return sum(1 for row in self.rows if row.analytic_diverged or row.datadriven_diverged)


@dataclass(frozen=True, eq=False)
class OcpProblem:
    """Assembled density program over z = (v, w, sink mass)"""
    generators: GeneratorPair
    cost: CostData
    r: float
    norm: Norm
    program: StructuredProgram
    sink_idx: np.ndarray
    cost_form: CostForm = CostForm.PERSPECTIVE
    quadrature: t.Optional[QuadratureRule] = None

    @property
    def size(self) -> int:
        return self.generators.size
