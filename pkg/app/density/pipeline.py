import typing as t
import logging
import os
from dataclasses import dataclass

import numpy as np

from .dictionary import build_dictionary, build_quadrature, cost_data, lambda_matrix, quadratic_cost
from .dynamics import ControlAffineSystem, builtin_system, generate_local_snapshots, generate_snapshots
from .exceptions import ConvergenceError, DataError, InvariantError, SolverError
from .local_control import BlendedController, identify_local, lqr_local
from .ocp import assemble, ball_entry, recover_controller, running_cost, simulate_closed_loop, solve_ocp
from .operators import generator_pair
from .solver import dump_program
from .types import ComparisonReport, InputLabel, SolveStatus
from .validation import compare_scalar, invariant_suite, scalar_oracle
from . import storage

logger = logging.getLogger(__name__)

DEFAULT_COMPARE_X0 = (-3.0, -2.0, -1.0, 1.0, 2.0, 3.0)
CERTIFICATE_TOL = 1e-6


@dataclass
class Pipeline:
    """Runs the pipeline stages of one validated experiment config inside `root`"""
    config: t.Dict[str, t.Any]
    config_hash: str
    root: str
    workers: int = 1
    divergence_bound: float = 1e6

    @property
    def system(self) -> ControlAffineSystem:
        return builtin_system(self.config['system'])

    @property
    def box(self) -> np.ndarray:
        return np.asarray(self.config['domain_box'], dtype=float)

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    def __save_config(self) -> None:
        storage.write_json(self.path('config.json'), {'config': self.config}, self.config_hash)

    def gen_data(self) -> t.List[str]:
        """Writes the zero-input, step-input and local datasets"""
        data = self.config['data']
        system = self.system
        self.__save_config()

        zero = generate_snapshots(system, self.box, data['M'], data['dt'], InputLabel.ZERO, data['seed'],
                                  workers=self.workers)
        shared = zero.x_points if data['share_x_points'] else None
        step = generate_snapshots(system, self.box, data['M'], data['dt'], InputLabel.STEP, data['seed'] + 1,
                                  x_points=shared, workers=self.workers)
        local = generate_local_snapshots(system, data['local_radius'], data['M_local'], data['L_local'], data['dt'],
                                         data['seed'] + 2, workers=self.workers)

        directory = self.path('data')
        return [
            storage.save_snapshots(directory, 'zero', zero, self.config_hash),
            storage.save_snapshots(directory, 'step', step, self.config_hash),
            storage.save_snapshots(directory, 'local', local, self.config_hash),
        ]

    def fit(self, zero_only: bool = False) -> t.Dict[str, t.Any]:
        """Fits the generators and precomputes the cost integrals; returns the operator manifest"""
        settings = self.config['dictionary']
        solver = self.config['solver']
        self.__save_config()

        dictionary = build_dictionary(self.box, settings['per_dim_counts'], settings['sigma_factor'],
                                      settings['delta'], settings['sigma'])
        storage.save_dictionary(self.path('dictionary.json'), dictionary, self.config_hash)
        Lambda = lambda_matrix(dictionary, settings['lambda_form'])

        zero = storage.load_snapshots(self.path('data'), 'zero')
        step = None if zero_only else storage.load_snapshots(self.path('data'), 'step')
        gen = generator_pair(zero, step, dictionary, Lambda, solver['nsdmd_tol'], solver['nsdmd_max_iter'])
        storage.save_generators(self.path('operators'), gen, self.config_hash)

        quadrature = build_quadrature(dictionary, settings['quadrature_nodes'], seed=self.config['data']['seed'])
        cost = cost_data(dictionary, quadrature, quadratic_cost(self.config['ocp']['q_weights']),
                         self.config['ocp']['m_choice'], settings['lambda_form'])
        storage.save_cost(self.path('cost'), cost, quadrature, self.config_hash)

        _, _, manifest = storage.load_generators(self.path('operators'))
        return manifest

    def solve(self, dump: bool = False) -> t.Dict[str, t.Any]:
        """Solves the density program and synthesizes the local controller;
        `dump` also writes the assembled program to solution/program

        Raises
        ------
        ConvergenceError
            If the barrier method stops before the KKT tolerance (the iterate is still written)
        SolverError
            If the returned density violates the constraint certificate
        """
        ocp = self.config['ocp']
        solver = self.config['solver']
        local_settings = self.config['local']
        self.__save_config()

        dictionary = storage.load_dictionary(self.path('dictionary.json'))
        gen, _, _ = storage.load_generators(self.path('operators'))
        cost, quadrature, _ = storage.load_cost(self.path('cost'))

        problem = assemble(gen, cost, ocp['r'], ocp['norm'], quadrature=quadrature, dictionary=dictionary,
                           cost_form=ocp['cost_form'])
        if dump:
            dump_program(problem.program, self.path('solution', 'program'))
        solution = solve_ocp(problem, tol=solver['tol'], max_iter=solver['max_iter'])
        storage.save_solution(self.path('solution', 'density.json'), solution, self.config_hash)

        model = identify_local(storage.load_snapshots(self.path('data'), 'local'))
        local = lqr_local(model, np.asarray(local_settings['Q'], dtype=float), local_settings['r'],
                          delta=dictionary.delta, gamma=local_settings['gamma'])
        storage.save_local(self.path('solution', 'local.json'), local, self.config_hash)
        storage.write_json(self.path('solution', 'blended.json'), {
            'global': 'density.json',
            'local': 'local.json',
            'dictionary': '../dictionary.json',
        }, self.config_hash)

        if solution.status != SolveStatus.OPTIMAL:
            raise ConvergenceError('Density program', solution.iterations, {'eq_residual': solution.eq_residual})
        if solution.eq_residual > CERTIFICATE_TOL:
            raise SolverError(f'Density certificate residual {solution.eq_residual:.3g} exceeds {CERTIFICATE_TOL:g}')
        return {'objective': solution.objective, 'eq_residual': solution.eq_residual,
                'status': solution.status.value, 'iterations': solution.iterations}

    def controller(self) -> BlendedController:
        dictionary = storage.load_dictionary(self.path('dictionary.json'))
        solution = storage.load_solution(self.path('solution', 'density.json'))
        local = storage.load_local(self.path('solution', 'local.json'))
        return BlendedController(local=local, global_ctrl=recover_controller(solution, dictionary))

    def initial_conditions(self) -> np.ndarray:
        settings = self.config['simulate']
        if settings['x0']:
            return np.asarray(settings['x0'], dtype=float).reshape(-1, self.system.dim)
        box = self.box
        rng = np.random.default_rng(settings['seed'])
        return rng.uniform(box[:, 0], box[:, 1], size=(settings['n_samples'], self.system.dim))

    def simulate(self) -> t.Dict[str, t.Any]:
        """Closed-loop trajectories under the blended controller plus the stability report

        Raises
        ------
        InvariantError
            If the stability fraction is below `simulate.stability_threshold` (the report is still written)
        """
        settings = self.config['simulate']
        controller = self.controller()
        x0s = self.initial_conditions()

        batch = simulate_closed_loop(self.system, x0s, controller, settings['horizon'], settings['dt'],
                                     self.divergence_bound, self.workers)
        costs = running_cost(batch, quadratic_cost(self.config['ocp']['q_weights']), self.config['ocp']['r'])
        stability = ball_entry(batch, controller.local.delta)
        blend_entry = controller.entry_time(batch)

        rows = []
        for k in range(len(x0s)):
            trajectory = batch.trajectory(k)
            storage.save_trajectory(self.path('simulation', f'trajectory_{k:02d}.csv'), trajectory.times,
                                    trajectory.states, trajectory.inputs)
            rows.append({
                'x0': x0s[k].tolist(),
                'stable': bool(stability.stable[k]),
                'diverged': bool(batch.diverged[k]),
                'ball_entry_time': float(stability.entry_times[k]),
                'blend_entry_time': float(blend_entry[k]),
                'cost': float(costs[k]),
                'clamped_steps': controller.global_ctrl.count_clamped(trajectory.states),
            })

        finite = np.isfinite(costs)
        report = {
            'stability_fraction': stability.fraction,
            'mean_cost': float(costs[finite].mean()) if finite.any() else float('inf'),
            'diverged': int(np.count_nonzero(batch.diverged)),
            'trajectories': rows,
        }
        storage.write_json(self.path('simulation', 'report.json'), report, self.config_hash)

        threshold = settings['stability_threshold']
        if stability.fraction < threshold:
            raise InvariantError([{'check': 'simulate.stability', 'value': stability.fraction, 'limit': threshold,
                                   'detail': 'stability fraction below threshold'}])
        return report

    def check(self) -> t.List[t.Dict[str, t.Any]]:
        return invariant_suite(self.root)

    def compare_analytic(self) -> ComparisonReport:
        """Full pipeline followed by the comparison against the closed-form scalar optimal control"""
        if self.config['system'] != 'scalar-cubic':
            raise DataError(f'The analytic comparison exists for scalar-cubic only, got {self.config["system"]!r}')
        if self.config['ocp']['r'] != 1.0:
            raise DataError(f'The analytic control is the optimum for ocp.r = 1, got {self.config["ocp"]["r"]}')
        self.gen_data()
        self.fit()
        self.solve()

        settings = self.config['compare']
        x0_set = settings['x0'] or list(DEFAULT_COMPARE_X0)
        report = compare_scalar(self.controller(), scalar_oracle(), x0_set, settings['horizon'],
                                self.config['simulate']['dt'], self.system, r=1.0,
                                divergence_bound=self.divergence_bound, workers=self.workers)
        self.__save_comparison(report)
        return report

    def __save_comparison(self, report: ComparisonReport) -> None:
        directory = self.path('comparison')
        rows = np.array([list(row) for row in report.rows], dtype=float)
        storage.write_csv(os.path.join(directory, 'rows.csv'), list(report.rows[0]._fields), rows)
        for k, (analytic, datadriven) in enumerate(report.trajectories):
            table = np.column_stack([analytic.times, analytic.states[:, 0], analytic.inputs,
                                     datadriven.states[:, 0], datadriven.inputs])
            storage.write_csv(os.path.join(directory, f'trajectory_{k:02d}.csv'),
                              ['t', 'x_analytic', 'u_analytic', 'x_datadriven', 'u_datadriven'], table)
        storage.write_json(os.path.join(directory, 'report.json'), {
            'cost_ratio': report.cost_ratio,
            'max_gap': report.max_gap,
            'diverged': report.diverged,
            'rows': [row._asdict() for row in report.rows],
        }, self.config_hash)
