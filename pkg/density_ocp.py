from flask.cli import FlaskGroup

from app import create_app  # lgtm [py/import-own-module]

cli = FlaskGroup(create_app=create_app, add_default_commands=False,
                 help='Data-driven density-function optimal control pipeline.')

if __name__ == "__main__":
    cli()
