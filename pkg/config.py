from os import environ, path
from dotenv import load_dotenv

basedir = path.abspath(path.dirname(__file__))  # Getting base directory
load_dotenv(path.join(basedir, '.env'))  # Loading env


# Base Config
class Config(object):
    OUTPUT_DIR = environ.get('DENSITY_OCP_OUTPUT_DIR') or path.join(basedir, 'runs')
    EXPERIMENTS_DIR = path.join(basedir, 'experiments')

    LOG_LEVEL = environ.get('DENSITY_OCP_LOG_LEVEL', 'INFO')

    # Caps every thread pool of the pipeline
    THREADS = max(1, int(environ.get('DENSITY_OCP_THREADS') or 1))

    SOLVER_TOL = 1e-6
    SOLVER_MAX_ITER = 200

    NSDMD_TOL = 1e-10
    NSDMD_MAX_ITER = 20000

    DIVERGENCE_BOUND = 1e6


# Production Config
class ProdConfig(Config):
    DEBUG = False
    TESTING = False


# Developing Config
class DevConfig(Config):
    DEBUG = True
    TESTING = False
    LOG_LEVEL = environ.get('DENSITY_OCP_LOG_LEVEL', 'DEBUG')


config = {
    'dev': DevConfig,
    'prod': ProdConfig,
    'default': ProdConfig,
}
