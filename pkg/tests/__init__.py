import tempfile

from config import Config


class TestConfig(Config):
    """Basic application config for tests"""
    TESTING = True
    OUTPUT_DIR = tempfile.mkdtemp(prefix='density-ocp-tests-')
    LOG_LEVEL = 'WARNING'
    THREADS = 1


def scalar_config(**sections):
    """Small scalar-cubic experiment that runs end to end in seconds"""
    config = {
        'name': 'scalar_small',
        'system': 'scalar-cubic',
        'domain_box': [[-5.0, 5.0]],
        'dictionary': {'per_dim_counts': [5], 'sigma': 1.225, 'delta': 0.15, 'quadrature_nodes': 120},
        'data': {'M': 400, 'M_local': 200, 'L_local': 100, 'dt': 0.01, 'seed': 0},
        'ocp': {'r': 1.0, 'norm': 'l2', 'q_weights': [1.0]},
        'solver': {'tol': 1e-6, 'max_iter': 400, 'nsdmd_tol': 1e-8},
        'simulate': {'horizon': 2.0, 'x0': [[-2.0], [1.0]]},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            config.setdefault(name, {}).update(values)
        else:
            config[name] = values
    return config
