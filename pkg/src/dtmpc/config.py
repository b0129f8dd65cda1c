"""
Strict JSON experiment configuration.
"""

import json
import logging
from pathlib import Path
from typing import Any

from .output_formatter import FileSavingError
from .tasks import SYSTEMS, TaskConfig, default_task_config
from .tube_mpc import MpcSettings

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Exception raised when a configuration file is missing, malformed or invalid."""


_NUMBER = (int, float)
_SCALAR_TYPES: dict[str, tuple[type, ...]] = {
    "system": (str,),
    "algorithm": (str,),
    "trials": (int,),
    "seed": (int,),
    "threads": (int,),
}
_SECTION_SCHEMAS: dict[str, dict[str, tuple[type, ...]]] = {
    "solve": {
        "horizon": (int,),
        "budget": (int,),
        "tol": _NUMBER,
        "mode": (str,),
    },
    "gradcheck": {
        "budgets": (list,),
        "horizon": (int,),
        "fd_step": _NUMBER,
        "fd_tolerance": _NUMBER,
        "pdp_tolerance": _NUMBER,
        "inject_bundle_error": (bool,),
    },
    "bench": {
        "reps": (int,),
        "routes": (list,),
        "horizon": (int,),
    },
}
# Sections whose keys are dataclass fields, checked by name only
_FIELD_SECTIONS = {
    "task": TaskConfig.field_names,
    "mpc": lambda: set(MpcSettings.__dataclass_fields__),
}


def _check_type(path: str, value: Any, expected: tuple[type, ...]) -> None:
    # bool is an int subclass; only accept it where bool is expected
    if isinstance(value, bool) and bool not in expected:
        raise ConfigError(f"'{path}' must be {_type_names(expected)}, got a boolean")
    if not isinstance(value, expected):
        raise ConfigError(
            f"'{path}' must be {_type_names(expected)}, got {type(value).__name__}",
        )


def _type_names(expected: tuple[type, ...]) -> str:
    return " or ".join(t.__name__ for t in expected)


def validate_config(config: Any) -> dict[str, Any]:
    """
    Reject unknown keys at any level and values of the wrong type.

    Raises:
        ConfigError: Naming the dotted key path of the first problem
    """
    if not isinstance(config, dict):
        raise ConfigError("Configuration must be a JSON object")
    for key, value in config.items():
        if key in _SCALAR_TYPES:
            _check_type(key, value, _SCALAR_TYPES[key])
        elif key in _SECTION_SCHEMAS:
            _check_type(key, value, (dict,))
            schema = _SECTION_SCHEMAS[key]
            for sub_key, sub_value in value.items():
                path = f"{key}.{sub_key}"
                if sub_key not in schema:
                    raise ConfigError(f"Unknown configuration key '{path}'")
                _check_type(path, sub_value, schema[sub_key])
        elif key in _FIELD_SECTIONS:
            _check_type(key, value, (dict,))
            known = _FIELD_SECTIONS[key]()
            for sub_key in value:
                if sub_key not in known:
                    raise ConfigError(f"Unknown configuration key '{key}.{sub_key}'")
        else:
            raise ConfigError(f"Unknown configuration key '{key}'")
    if "system" in config and config["system"] not in SYSTEMS:
        raise ConfigError(f"'system' must be one of {SYSTEMS}, got '{config['system']}'")
    for key in ("trials", "threads"):
        if key in config and config[key] < 1:
            raise ConfigError(f"'{key}' must be positive, got {config[key]}")
    if "seed" in config and config["seed"] < 0:
        raise ConfigError(f"'seed' must be non-negative, got {config['seed']}")
    return config


def load_config(config_file: str | Path) -> dict[str, Any]:
    """
    Load and validate an experiment configuration.

    Raises:
        ConfigError: If the file is missing, is not valid JSON (message
            anchored at line and column) or fails validation
    """
    config_path = Path(config_file)
    if not config_path.exists():
        raise ConfigError(f"Config file {config_file} does not exist")
    try:
        with open(config_path, encoding="utf-8") as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{config_file}:{e.lineno}:{e.colno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(f"Failed to read config file {config_file}: {e}") from e
    validate_config(config)
    logger.debug(f"Loaded config from {config_file}")
    return config


def save_config(config_file: str | Path, config: dict[str, Any]) -> None:
    """Write a configuration as indented JSON."""
    try:
        config_path = Path(config_file)
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, "w", encoding="utf-8") as f:
            json.dump(config, f, indent=2, ensure_ascii=False)
        logger.debug(f"Configuration saved to {config_file}")
    except OSError as e:
        raise FileSavingError(f"Failed to save config to {config_file}: {e}") from e


def task_config(system: str, config: dict[str, Any]) -> TaskConfig:
    """Per-system defaults with the ``task`` section applied."""
    overrides = config.get("task", {})
    try:
        return default_task_config(system).with_overrides(overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid task settings: {e}") from e


def mpc_settings(config: dict[str, Any]) -> MpcSettings:
    try:
        return MpcSettings(**config.get("mpc", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid mpc settings: {e}") from e
