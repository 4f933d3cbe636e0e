from os import environ

from flask import Flask

from config import config

CONFIG = config.get(environ.get('DENSITY_OCP_CONFIG') or 'default')


def create_app(config_class=CONFIG):
    """Initialize the core application."""
    app = Flask(__name__)
    app.config.from_object(config_class)

    # Domain modules log under the `app` namespace, i.e. through app.logger
    app.logger.setLevel(app.config.get('LOG_LEVEL', 'INFO'))

    with app.app_context():
        # Register blueprints
        from app.blueprints.pipeline import pipeline
        app.register_blueprint(pipeline)

    return app
