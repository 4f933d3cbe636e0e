import typing as t
import functools
import json

import click
from flask import current_app as app

from app.density import Pipeline
from app.density.exceptions import InvariantError
from app.blueprints.pipeline import pipeline
from app.blueprints.pipeline.handlers import handle_errors
from app.blueprints.pipeline.utils import load_config, run_layout


def experiment_options(command):
    """--config, repeatable --set and --output-dir, shared by every command"""

    @click.option('--output-dir', default=None, type=click.Path(file_okay=False),
                  help='Root of the run directories (default: OUTPUT_DIR).')
    @click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                  help='Override a config field, e.g. data.M=500 (value parsed as JSON).')
    @click.option('--config', 'config_name', required=True,
                  help='Experiment config file or the name of a shipped experiment.')
    @functools.wraps(command)
    def wrapper(config_name: str, overrides: t.Tuple[str, ...], output_dir: t.Optional[str], **kwargs):
        config, digest = load_config(config_name, overrides)
        layout = run_layout(config, output_dir)
        runner = Pipeline(config=config, config_hash=digest, root=layout.root, workers=app.config['THREADS'],
                          divergence_bound=app.config['DIVERGENCE_BOUND'])
        return command(runner, **kwargs)

    return wrapper


def echo_json(payload: t.Any) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@pipeline.cli.command('gen-data')
@handle_errors
@experiment_options
def gen_data(runner: Pipeline):
    """Generate the zero-input, step-input and local snapshot datasets."""
    echo_json({'files': runner.gen_data()})


@pipeline.cli.command('fit')
@click.option('--zero-only', is_flag=True, help='Fit the drift generator M0 only.')
@handle_errors
@experiment_options
def fit(runner: Pipeline, zero_only: bool):
    """Fit the generator pair M0, M1 and precompute the cost integrals."""
    manifest = runner.fit(zero_only=zero_only)
    echo_json({key: manifest[key] for key in ('N', 'dt', 'has_step', 'zero_fit', 'step_fit')})


@pipeline.cli.command('solve')
@click.option('--dump-program', 'dump', is_flag=True, help='Also write the assembled program to solution/program.')
@handle_errors
@experiment_options
def solve(runner: Pipeline, dump: bool):
    """Solve the density program and synthesize the local LQR controller."""
    echo_json(runner.solve(dump=dump))


@pipeline.cli.command('simulate')
@handle_errors
@experiment_options
def simulate(runner: Pipeline):
    """Simulate the blended closed loop from the configured initial conditions."""
    report = runner.simulate()
    echo_json({key: report[key] for key in ('stability_fraction', 'mean_cost', 'diverged')})


@pipeline.cli.command('check')
@handle_errors
@experiment_options
def check(runner: Pipeline):
    """Run every invariant check over the run directory; prints the failures as JSON."""
    failures = runner.check()
    echo_json(failures)
    if failures:
        raise InvariantError(failures)


@pipeline.cli.command('compare-analytic')
@handle_errors
@experiment_options
def compare_analytic(runner: Pipeline):
    """Run the scalar pipeline and compare it with the closed-form optimal control."""
    report = runner.compare_analytic()
    echo_json({'cost_ratio': report.cost_ratio, 'max_gap': report.max_gap, 'diverged': report.diverged})
