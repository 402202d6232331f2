from copy import deepcopy
from typing import Any, Dict, Optional

import yaml

from .. import core, utils
from .base import config as base_config
from .defense_like import config as defense_like_config
from .gan_like import config as gan_like_config
from .pose_like import config as pose_like_config
from .rugged_desk import config as rugged_desk_config
from .smoke import config as smoke_config

CONFIGS = {
    'rugged-desk': rugged_desk_config,
    'gan-like': gan_like_config,
    'pose-like': pose_like_config,
    'defense-like': defense_like_config,
    'smoke': smoke_config,
}
DEFAULT_PRESET = 'rugged-desk'

def get_default_config(name):
    if name not in CONFIGS:
        raise core.ConfigError(f"unknown preset {name!r}, expected one of {list(CONFIGS)}")
    return deepcopy(CONFIGS[name])

def _coerce(config: Dict[str, Any], reference: Dict[str, Any], path: str = "") -> None:
    """bring yaml scalars back to the type of the schema default ('1e-4' -> float)"""
    for key, value in config.items():
        ref = reference.get(key)
        where = f"{path}{key}"
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise core.ConfigError(f"{where} must be a mapping")
            _coerce(value, ref, f"{where}.")
        elif isinstance(ref, list):
            if not isinstance(value, (list, tuple)):
                raise core.ConfigError(f"{where} must be a list")
            try:
                items = [float(v) for v in value]
            except (TypeError, ValueError):
                raise core.ConfigError(f"{where} must hold numbers, got {value!r}")
            as_int = bool(ref) and all(isinstance(r, int) for r in ref)
            config[key] = [int(v) for v in items] if as_int else items
        elif isinstance(ref, bool):
            if not isinstance(value, bool):
                raise core.ConfigError(f"{where} must be true or false, got {value!r}")
        elif isinstance(ref, (int, float)) and not isinstance(value, bool):
            try:
                number = float(value)
            except (TypeError, ValueError):
                raise core.ConfigError(f"{where} must be a number, got {value!r}")
            if isinstance(ref, int):
                if number != int(number):
                    raise core.ConfigError(f"{where} must be an integer, got {value!r}")
                config[key] = int(number)
            else:
                config[key] = number

def resolve_config(user: Optional[Dict[str, Any]] = None, preset: Optional[str] = None) -> Dict[str, Any]:
    """preset + overrides (nested or dotted keys) + LOPT_SEED -> concrete config"""
    user = deepcopy(user or {})
    name = user.pop('preset', None) or preset or DEFAULT_PRESET
    config = get_default_config(name)
    utils.nested_update(config, utils.unflatten_dict(user))
    _coerce(config, base_config)
    config['seed'] = utils.env_seed(config['seed'])
    if config['seed'] < 0:
        raise core.ConfigError(f"seed must be >= 0, got {config['seed']}")
    config['preset'] = name
    return config

def load_config(path: str) -> Dict[str, Any]:
    try:
        user = utils.load_config(path)
    except yaml.YAMLError as e:
        raise core.ConfigError(f"cannot parse {path}: {e}")
    if not isinstance(user, dict):
        raise core.ConfigError(f"{path} must hold a mapping of config keys")
    return resolve_config(user)

def serialize_config(config: Dict[str, Any]) -> str:
    """flat, sorted dotted keys; resolve_config(yaml.safe_load(text)) gives config back"""
    return yaml.safe_dump(utils.flatten_dict(config), sort_keys=True, default_flow_style=None, width=120)

def config_hash(config: Dict[str, Any]) -> str:
    return utils.config_hash(serialize_config(config))
