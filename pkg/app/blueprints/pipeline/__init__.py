from flask import Blueprint

pipeline = Blueprint('pipeline', __name__, cli_group=None)

from app.blueprints.pipeline import commands
