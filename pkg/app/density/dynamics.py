"""
Benchmark control-affine systems, fixed-step RK4 integration and snapshot generation
"""

import typing as t
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, DivergenceError
from .types import InputLabel, SnapshotSet, Trajectory, BatchTrajectory
from .utils import as_box, as_points, run_in_threads, split_rows

logger = logging.getLogger(__name__)

DEFAULT_DIVERGENCE_BOUND = 1e6

VectorField = t.Callable[[np.ndarray], np.ndarray]
Control = t.Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class ControlAffineSystem:
    """x' = f(x) + g(x) u with scalar u; `drift` and `input_channel` map (B, n) -> (B, n)"""
    name: str
    dim: int
    drift: VectorField
    input_channel: VectorField
    drift_divergence: t.Optional[t.Callable[[np.ndarray], np.ndarray]] = None

    def f(self, x: t.Any) -> np.ndarray:
        points, single = as_points(x, self.dim)
        values = self.drift(points)
        return values[0] if single else values

    def g(self, x: t.Any) -> np.ndarray:
        points, single = as_points(x, self.dim)
        values = self.input_channel(points)
        return values[0] if single else values

    def vector_field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.drift(x) + self.input_channel(x) * np.asarray(u, dtype=float).reshape(-1, 1)

    def divergence(self, x: t.Any) -> np.ndarray:
        """Returns div f at x, closed form when known, central differences otherwise"""
        points, single = as_points(x, self.dim)
        if self.drift_divergence is not None:
            values = self.drift_divergence(points)
        else:
            step = 1e-6
            values = np.zeros(len(points))
            for k in range(self.dim):
                offset = np.zeros(self.dim)
                offset[k] = step
                values += (self.drift(points + offset)[:, k] - self.drift(points - offset)[:, k]) / (2 * step)
        return values[0] if single else values


def _scalar_cubic(a: float = 0.5) -> ControlAffineSystem:
    return ControlAffineSystem(
        name='scalar-cubic',
        dim=1,
        drift=lambda x: a * x ** 3,
        input_channel=lambda x: np.ones_like(x),
        drift_divergence=lambda x: 3 * a * x[:, 0] ** 2
    )


def _duffing() -> ControlAffineSystem:
    def drift(x):
        x1, x2 = x[:, 0], x[:, 1]
        return np.stack([x2, -x1 - x1 ** 3 - 0.5 * x2], axis=1)

    def input_channel(x):
        channel = np.zeros_like(x)
        channel[:, 1] = 1.0
        return channel

    return ControlAffineSystem(
        name='duffing',
        dim=2,
        drift=drift,
        input_channel=input_channel,
        drift_divergence=lambda x: np.full(len(x), -0.5)
    )


def _vdp3d() -> ControlAffineSystem:
    def drift(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([x2, -x1 + x2 - x3 - x1 ** 2 * x2, x3 - x3 ** 2], axis=1)

    def input_channel(x):
        channel = np.zeros_like(x)
        channel[:, 2] = 0.5
        return channel

    return ControlAffineSystem(
        name='vdp3d',
        dim=3,
        drift=drift,
        input_channel=input_channel,
        drift_divergence=lambda x: (1.0 - x[:, 0] ** 2) + (1.0 - 2.0 * x[:, 2])
    )


BUILTIN_SYSTEMS: t.Dict[str, t.Callable[[], ControlAffineSystem]] = {
    'scalar-cubic': _scalar_cubic,
    'duffing': _duffing,
    'vdp3d': _vdp3d,
}


def builtin_system(name: str) -> ControlAffineSystem:
    """Returns one of the benchmark systems

    Raises
    ------
    DataError
        If the name is unknown
    """
    factory = BUILTIN_SYSTEMS.get(name)
    if factory is None:
        raise DataError(f'Unknown system {name!r}; valid names: {", ".join(sorted(BUILTIN_SYSTEMS))}')
    return factory()


def linear_system(a_matrix: t.Any, b_vector: t.Any, name: str = 'linear') -> ControlAffineSystem:
    a_matrix = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    b_vector = np.asarray(b_vector, dtype=float).reshape(-1)
    trace = float(np.trace(a_matrix))
    return ControlAffineSystem(
        name=name,
        dim=a_matrix.shape[0],
        drift=lambda x: x @ a_matrix.T,
        input_channel=lambda x: np.broadcast_to(b_vector, x.shape).copy(),
        drift_divergence=lambda x: np.full(len(x), trace)
    )


def zero_control(x: np.ndarray, time: float = 0.0) -> np.ndarray:
    return np.zeros(len(x))


def constant_control(value: float) -> Control:
    def control(x: np.ndarray, time: float = 0.0) -> np.ndarray:
        return np.full(np.asarray(x).shape[0], float(value))

    return control


def rk4_step(system: ControlAffineSystem, control: Control, x: np.ndarray, time: float, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of the closed loop for a (B, n) batch"""
    def field_at(state, at):
        return system.vector_field(state, control(state, at))

    k1 = field_at(x, time)
    k2 = field_at(x + 0.5 * dt * k1, time + 0.5 * dt)
    k3 = field_at(x + 0.5 * dt * k2, time + 0.5 * dt)
    k4 = field_at(x + dt * k3, time + dt)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_count(t_final: float, dt: float) -> int:
    if dt <= 0:
        raise DataError(f'Time step must be positive, got {dt}')
    if t_final < dt:
        raise DataError(f'Horizon {t_final} is shorter than the time step {dt}')
    return max(1, int(round(t_final / dt)))


def simulate_batch(
        system: ControlAffineSystem,
        x0s: t.Any,
        control: Control,
        t_final: float,
        dt: float,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND
) -> BatchTrajectory:
    """Integrates a batch of initial conditions; rows leaving the bound are frozen as NaN"""
    states0, _ = as_points(x0s, system.dim)
    steps = _step_count(t_final, dt)
    batch = states0.shape[0]

    times = np.arange(steps + 1) * dt
    states = np.full((batch, steps + 1, system.dim), np.nan)
    inputs = np.full((batch, steps + 1), np.nan)
    escape_times = np.full(batch, np.inf)

    x = states0.copy()
    alive = np.ones(batch, dtype=bool)
    states[:, 0] = x
    for k in range(steps + 1):
        if not alive.any():
            break
        inputs[alive, k] = control(x[alive], times[k])
        if k == steps:
            break
        x_next = np.full_like(x, np.nan)
        x_next[alive] = rk4_step(system, control, x[alive], times[k], dt)

        norms = np.linalg.norm(x_next, axis=1)
        escaped = alive & ~(np.isfinite(norms) & (norms <= divergence_bound))
        if escaped.any():
            escape_times[escaped] = times[k + 1]
            alive &= ~escaped
            logger.debug('%d trajectories of %s diverged at t=%.4g', escaped.sum(), system.name, times[k + 1])

        x = np.where(alive[:, None], x_next, np.nan)
        states[alive, k + 1] = x[alive]

    return BatchTrajectory(times=times, states=states, inputs=inputs, escape_times=escape_times)


def integrate(
        system: ControlAffineSystem,
        x0: t.Any,
        control: Control,
        t_final: float,
        dt: float,
        divergence_bound: float = DEFAULT_DIVERGENCE_BOUND
) -> Trajectory:
    """Fixed-step RK4 trajectory of x' = f(x) + g(x) control(x, t)

    Raises
    ------
    DivergenceError
        If the state norm exceeds `divergence_bound`
    """
    batch = simulate_batch(system, np.asarray(x0, dtype=float).reshape(1, -1), control, t_final, dt, divergence_bound)
    if batch.diverged[0]:
        raise DivergenceError(float(batch.escape_times[0]), divergence_bound)
    return batch.trajectory(0)


def _one_step(system: ControlAffineSystem, x_points: np.ndarray, inputs: np.ndarray, dt: float,
              workers: int) -> np.ndarray:
    def job(rows):
        x_chunk, u_chunk = x_points[rows], inputs[rows]
        return rk4_step(system, lambda state, time: u_chunk, x_chunk, 0.0, dt)

    chunks = split_rows(np.arange(len(x_points)), workers)
    return np.concatenate(run_in_threads(job, chunks, workers), axis=0)


def generate_snapshots(
        system: ControlAffineSystem,
        domain_box: t.Any,
        M: int,
        dt: float,
        input_label: InputLabel,
        seed: int,
        x_points: t.Optional[np.ndarray] = None,
        workers: int = 1
) -> SnapshotSet:
    """Uniform samples in the box paired with one RK4 step under zero or unit input"""
    box = as_box(domain_box)
    if box.shape[0] != system.dim:
        raise DataError(f'Domain box has {box.shape[0]} dimensions, system {system.name} has {system.dim}')
    if M < 1:
        raise DataError(f'Sample count must be >= 1, got {M}')
    if dt <= 0:
        raise DataError(f'Time step must be positive, got {dt}')
    input_label = InputLabel(input_label)
    if input_label == InputLabel.MIXED:
        raise DataError('Use generate_local_snapshots for mixed-input datasets')

    if x_points is None:
        rng = np.random.default_rng(seed)
        x_points = rng.uniform(box[:, 0], box[:, 1], size=(M, system.dim))
    else:
        x_points = np.asarray(x_points, dtype=float).reshape(M, system.dim)

    inputs = np.full(M, 1.0 if input_label == InputLabel.STEP else 0.0)
    y_points = _one_step(system, x_points, inputs, dt, workers)

    logger.info('Generated %d %s-input snapshots of %s (dt=%g, seed=%s)', M, input_label.value, system.name, dt, seed)
    return SnapshotSet(x_points=x_points, y_points=y_points, dt=dt, input_label=input_label,
                       domain_box=box, inputs=inputs, seed=seed)


def generate_local_snapshots(
        system: ControlAffineSystem,
        radius: float,
        M: int,
        L: int,
        dt: float,
        seed: int,
        workers: int = 1
) -> SnapshotSet:
    """Samples in the ball of `radius` around the origin; first L pairs under zero input, the rest under step"""
    if radius <= 0:
        raise DataError(f'Local radius must be positive, got {radius}')
    if not 0 < L < M:
        raise DataError(f'Need 0 < L < M for local data, got L={L}, M={M}')
    if dt <= 0:
        raise DataError(f'Time step must be positive, got {dt}')

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((M, system.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, size=M) ** (1.0 / system.dim)
    x_points = directions * radii[:, None]

    inputs = np.concatenate([np.zeros(L), np.ones(M - L)])
    y_points = _one_step(system, x_points, inputs, dt, workers)

    box = np.tile([-radius, radius], (system.dim, 1)).astype(float)
    logger.info('Generated %d local snapshots of %s (%d zero-input, radius=%g)', M, system.name, L, radius)
    return SnapshotSet(x_points=x_points, y_points=y_points, dt=dt, input_label=InputLabel.MIXED,
                       domain_box=box, inputs=inputs, seed=seed)
