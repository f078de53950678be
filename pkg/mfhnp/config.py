import os
import json
import hashlib
import logging
import dataclasses

from configparser import ConfigParser
from typing import Any, Dict, Mapping, Optional, Type

from .exceptions import ConfigError

# for CLI use
HOME_PATH = os.path.dirname(os.path.abspath(__file__))
ETC_DIR = os.path.join(HOME_PATH, "etc")

DEFAULT_CONFIG = os.path.join(ETC_DIR, "config.ini")
GLOBAL_CONFIG_PATH = "/etc/mfhnp/mfhnp.ini"
USER_CONFIG_PATH = os.path.join(os.path.expanduser("~"), ".config", "mfhnp", "mfhnp.ini")
ENV_CONFIG_PATH = os.environ["MFHNP_CONFIG_PATH"] if "MFHNP_CONFIG_PATH" in os.environ else None

# Later configs override earlier configs
DEFAULT_CONFIG_PATHS = [DEFAULT_CONFIG, GLOBAL_CONFIG_PATH, USER_CONFIG_PATH]
if ENV_CONFIG_PATH is not None:
    DEFAULT_CONFIG_PATHS.append(ENV_CONFIG_PATH)


def load_config(config_paths: list = DEFAULT_CONFIG_PATHS) -> ConfigParser:
    """Load mfhnp configuration.

    Args:
      config_paths: List of configuration paths.

    Returns:
      A ConfigParser, or False if none of the paths exist.
    """

    config = ConfigParser()
    finds = []
    for cp in config_paths:
        if cp and os.path.exists(cp):
            logging.debug("Found config file at {}.".format(cp))
            finds.append(cp)
    if not finds:
        logging.error("Didn't find any config files defined at these paths: {}".format(config_paths))
        return False

    config.read(finds)

    return config


def _coerce(name: str, default: Any, raw: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "yes", "true", "on"):
                return True
            if lowered in ("0", "no", "false", "off"):
                return False
            raise ValueError(f"not a boolean: {raw}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (tuple, list)):
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"invalid value for {name}: {e}")
    return raw


def section_overrides(config: Optional[ConfigParser], section: str, settings_type: Type) -> Dict[str, Any]:
    """Typed values of one config section for the fields of a settings dataclass.

    Types follow the dataclass defaults. Keys that are not fields of the
    dataclass raise ConfigError.
    """
    if not config or not config.has_section(section):
        return {}
    fields = {f.name: f for f in dataclasses.fields(settings_type)}
    values = {}
    for key, raw in config.items(section, raw=True):
        if key in config.defaults():
            continue
        if key not in fields:
            raise ConfigError(f"[{section}] {key} is not a known setting; expected one of {sorted(fields)}")
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        values[key] = _coerce(f"[{section}] {key}", default, raw)
    logging.debug(f"config [{section}] overrides: {values}")
    return values


def config_digest(*settings: Mapping[str, Any]) -> str:
    """First 16 hex digits of SHA-256 over the sorted key=value lines of the settings."""
    lines = []
    for mapping in settings:
        for key in sorted(mapping):
            lines.append(f"{key}={json.dumps(mapping[key], sort_keys=True)}")
    return hashlib.sha256("\n".join(sorted(lines)).encode("utf-8")).hexdigest()[:16]
