import functools
import json

import click
from flask import current_app as app

from app.density.exceptions import ConfigValidationError, DensityOcpError

ERRORS_DATA = {
    2: {
        'description': 'Invalid config, input data or artifacts'
    },
    3: {
        'description': 'Solver failed'
    },
    4: {
        'description': 'Invariant or stability check failed'
    }
}

DEFAULT_ERRORS_DATA = {
    'description': 'Pipeline error'
}


def handle_errors(command):
    """Turns a DensityOcpError into a logged message and its exit code; anything else is a bug and propagates"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except DensityOcpError as error:
            data = ERRORS_DATA.get(error.exit_code, DEFAULT_ERRORS_DATA)
            app.logger.error('%s: %s', data['description'], error.message)
            if isinstance(error, ConfigValidationError):
                click.echo(json.dumps({'errors': error.errors}, indent=2, sort_keys=True), err=True)
            click.get_current_context().exit(error.exit_code)

    return wrapper
