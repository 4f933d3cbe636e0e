"""
Module with pipeline utils: config loading, overrides, hashing and the run directory layout
"""

import typing as t
import copy
import hashlib
import json
import os

from wtforms.form import BaseForm

from flask import current_app as app

from app.density.dynamics import builtin_system
from app.density.exceptions import ArtifactError, ConfigValidationError
from app.blueprints.pipeline.forms import PipelineForm


class RunLayout(t.NamedTuple):
    root: str

    @property
    def data(self) -> str:
        return os.path.join(self.root, 'data')

    @property
    def dictionary(self) -> str:
        return os.path.join(self.root, 'dictionary.json')

    @property
    def operators(self) -> str:
        return os.path.join(self.root, 'operators')

    @property
    def cost(self) -> str:
        return os.path.join(self.root, 'cost')

    @property
    def solution(self) -> str:
        return os.path.join(self.root, 'solution')

    @property
    def simulation(self) -> str:
        return os.path.join(self.root, 'simulation')

    @property
    def comparison(self) -> str:
        return os.path.join(self.root, 'comparison')

    @property
    def config(self) -> str:
        return os.path.join(self.root, 'config.json')


def resolve_config_path(name_or_path: str) -> str:
    """Accepts a path or the name of a shipped experiment"""
    if os.path.exists(name_or_path):
        return name_or_path
    candidate = os.path.join(app.config['EXPERIMENTS_DIR'], f'{name_or_path}.json')
    if os.path.exists(candidate):
        return candidate
    raise ArtifactError(f'Config {name_or_path!r} is neither a file nor a shipped experiment')


def parse_override(item: str) -> t.Tuple[t.List[str], t.Any]:
    """`section.field=value`; the value is parsed as JSON and kept as a string otherwise"""
    if '=' not in item:
        raise ConfigValidationError({item: ['Override must look like section.field=value.']})
    key, raw = item.split('=', 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split('.'), value


def apply_overrides(config: t.Dict[str, t.Any], overrides: t.Iterable[str]) -> t.Dict[str, t.Any]:
    config = copy.deepcopy(config)
    for item in overrides:
        path, value = parse_override(item)
        node = config
        for key in path[:-1]:
            child = node.get(key)
            if not isinstance(child, dict):
                child = node[key] = {}
            node = child
        node[path[-1]] = value
    return config


def flatten_errors(errors: t.Any, prefix: str = '') -> t.Dict[str, t.List[str]]:
    """Nested WTForms errors -> {'dictionary.sigma': [...], 'domain_box.0.1': [...]}"""
    flat: t.Dict[str, t.List[str]] = {}
    if isinstance(errors, dict):
        for key, value in errors.items():
            path = prefix if key is None else (f'{prefix}.{key}' if prefix else str(key))
            for name, messages in flatten_errors(value, path).items():
                flat.setdefault(name, []).extend(messages)
    elif isinstance(errors, (list, tuple)):
        for index, value in enumerate(errors):
            if isinstance(value, str):
                flat.setdefault(prefix or 'config', []).append(value)
            elif value:
                for name, messages in flatten_errors(value, f'{prefix}.{index}' if prefix else str(index)).items():
                    flat.setdefault(name, []).extend(messages)
    return flat


def _broadcast(values: t.List[t.Any], dim: int, path: str, errors: t.Dict[str, t.List[str]]) -> t.List[t.Any]:
    if len(values) == 1:
        return values * dim
    if len(values) != dim:
        errors.setdefault(path, []).append(f'Needs 1 or {dim} entries, got {len(values)}.')
    return values


def normalize_config(data: t.Dict[str, t.Any]) -> t.Dict[str, t.Any]:
    """Cross-field checks and defaults that depend on the system dimension"""
    errors: t.Dict[str, t.List[str]] = {}
    dim = builtin_system(data['system']).dim
    config = copy.deepcopy(data)

    if len(config['domain_box']) != dim:
        errors['domain_box'] = [f'System {data["system"]} needs {dim} intervals, got {len(config["domain_box"])}.']
    dictionary = config['dictionary']
    dictionary['per_dim_counts'] = _broadcast(dictionary['per_dim_counts'], dim, 'dictionary.per_dim_counts', errors)
    ocp = config['ocp']
    ocp['q_weights'] = _broadcast(ocp['q_weights'], dim, 'ocp.q_weights', errors)

    local = config['local']
    if not local['Q']:
        local['Q'] = [[1.0 if i == j else 0.0 for j in range(dim)] for i in range(dim)]
    elif len(local['Q']) != dim or any(len(row) != dim for row in local['Q']):
        errors['local.Q'] = [f'Must be a {dim}x{dim} matrix.']
    if local['r'] is None:
        local['r'] = ocp['r'] if ocp['r'] > 0 else 1.0
    if local['gamma'] is None:
        local['gamma'] = dictionary['delta']

    data_section = config['data']
    if data_section['local_radius'] is None:
        data_section['local_radius'] = 2.0 * dictionary['delta']

    simulate = config['simulate']
    if simulate['dt'] is None:
        simulate['dt'] = data_section['dt']
    for k, x0 in enumerate(simulate['x0']):
        if len(x0) != dim:
            errors.setdefault(f'simulate.x0.{k}', []).append(f'Needs {dim} coordinates, got {len(x0)}.')
    if config['compare']['x0'] and data['system'] != 'scalar-cubic':
        errors['compare.x0'] = ['The analytic comparison exists for scalar-cubic only.']

    if errors:
        raise ConfigValidationError(errors)
    return config


def validate_config(raw: t.Dict[str, t.Any]) -> t.Dict[str, t.Any]:
    """
    Raises
    ------
    ConfigValidationError
        With every failing field by dotted path
    """
    if not isinstance(raw, dict):
        raise ConfigValidationError({'config': ['Top level must be a JSON object.']})
    form = PipelineForm(data=raw)
    if not form.validate():
        raise ConfigValidationError(flatten_errors(form.errors))
    # the `data` section field shadows Form.data on the instance; read the property directly
    return normalize_config(BaseForm.data.fget(form))


def config_hash(config: t.Dict[str, t.Any]) -> str:
    serialized = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(serialized.encode('utf-8')).hexdigest()


def load_config(name_or_path: str, overrides: t.Iterable[str] = ()) -> t.Tuple[t.Dict[str, t.Any], str]:
    """Returns the validated config and its hash"""
    path = resolve_config_path(name_or_path)
    try:
        with open(path) as file:
            raw = json.load(file)
    except json.JSONDecodeError as error:
        raise ConfigValidationError({'config': [f'{path} is not valid JSON: {error}']})
    config = validate_config(apply_overrides(raw, overrides))
    return config, config_hash(config)


def run_layout(config: t.Dict[str, t.Any], output_dir: t.Optional[str] = None) -> RunLayout:
    return RunLayout(os.path.join(output_dir or app.config['OUTPUT_DIR'], config['name']))
