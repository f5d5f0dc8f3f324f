"""
Process-wide settings and config resolution.
"""

import json
import logging
import os
from dataclasses import fields, is_dataclass

from errors import ConfigError

RUNS_DIR = os.environ.get('SOCIAL_MLM_RUNS_DIR', 'static/data/runs')
LOG_LEVEL = os.environ.get('SOCIAL_MLM_LOG_LEVEL', 'INFO')
DEFAULT_THREADS = int(os.environ.get('SOCIAL_MLM_THREADS', os.cpu_count() or 1))
REFRESH_MINUTES = int(os.environ.get('SOCIAL_MLM_REFRESH_MINUTES', '5'))


def configure_logging(level=None):
    """Configure root logging once per process."""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


def load_config_file(path, section=None):
    """Read a JSON config file. A top-level key named `section` wins over flat keys."""
    if not path:
        return {}
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if section and isinstance(data.get(section), dict):
        return dict(data[section])
    return {k: v for k, v in data.items() if not isinstance(v, dict)}


def resolve(cls, file_values, flag_values):
    """Build dataclass `cls` with precedence flags > config file > defaults.

    Flag values of None mean "not given on the command line".
    """
    if not is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    names = {f.name for f in fields(cls)}
    unknown = set(file_values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys in config file: {sorted(unknown)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if k in names and v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}") from e
