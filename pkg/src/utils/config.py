"""
Configuration Loader for the Exit-Problem Toolkit

Loads engine defaults from YAML and campaign configs from TOML, both with
environment variable substitution.
"""

import copy
import os
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
import yaml
from pathlib import Path
from typing import Any, Dict, Optional
from dotenv import load_dotenv

from src.utils.errors import ConfigError

# Load environment variables from .env file immediately
load_dotenv()

PROJECT_ROOT = Path(__file__).parent.parent.parent


def _substitute_env_vars(value: Any) -> Any:
    """
    Recursively substitute environment variables in config values.

    Supports ${VAR_NAME} syntax. Unset variables keep their placeholder.
    """
    if isinstance(value, str):
        pattern = r'\$\{([^}]+)\}'
        for var_name in re.findall(pattern, value):
            env_value = os.environ.get(var_name)
            if env_value is not None:
                value = value.replace(f'${{{var_name}}}', env_value)
        return value
    elif isinstance(value, dict):
        return {k: _substitute_env_vars(v) for k, v in value.items()}
    elif isinstance(value, list):
        return [_substitute_env_vars(item) for item in value]
    else:
        return value


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Return a copy of base with override merged in (nested dicts merged key by key)."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load engine defaults from YAML file.

    Args:
        config_path: Path to config file. If None, uses config/config.yaml.

    Returns:
        Configuration dictionary with environment variables substituted.
    """
    if config_path is None:
        config_path = PROJECT_ROOT / "config" / "config.yaml"
    else:
        config_path = Path(config_path)

    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    with open(config_path, 'r') as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}") from e

    return _substitute_env_vars(config)


def load_campaign(campaign_path: str) -> Dict[str, Any]:
    """
    Load a campaign TOML file.

    Parse errors are re-raised as ConfigError with the parser's line/column.

    Returns:
        Campaign dict with environment variables substituted and the optional
        [engine] table merged over the YAML engine defaults under key 'engine'.
    """
    path = Path(campaign_path)
    if not path.exists():
        raise FileNotFoundError(f"Campaign file not found: {path}")

    with open(path, 'rb') as f:
        try:
            campaign = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            # message carries "(at line N, column M)"
            raise ConfigError(f"{path}: {e}") from e

    campaign = _substitute_env_vars(campaign)
    campaign['engine'] = deep_merge(get_config(), campaign.get('engine', {}))
    campaign.setdefault('source_path', str(path))
    return campaign


def get_output_dir(campaign: Dict[str, Any], override: Optional[str] = None) -> Path:
    """
    Get the output directory for a campaign, resolving relative paths.
    """
    out_dir = override or campaign.get('output', {}).get('dir') \
        or campaign.get('engine', {}).get('paths', {}).get('output')

    # Unset ${VAR} placeholders fall back to the default
    if not out_dir or '${' in str(out_dir):
        out_dir = 'runs'

    out_path = Path(out_dir)
    if not out_path.is_absolute():
        out_path = PROJECT_ROOT / out_path

    return out_path


# Singleton config instance
_config_cache: Optional[Dict] = None


def get_config() -> Dict[str, Any]:
    """
    Get cached engine config instance.
    """
    global _config_cache
    if _config_cache is None:
        _config_cache = load_config()
    return _config_cache


def reload_config() -> Dict[str, Any]:
    """
    Force reload of configuration.
    """
    global _config_cache
    _config_cache = load_config()
    return _config_cache


def section(config: Optional[Dict[str, Any]], name: str) -> Dict[str, Any]:
    """Get one engine section from either an engine dict or a campaign dict."""
    if not config:
        return {}
    if 'engine' in config and isinstance(config['engine'], dict):
        config = config['engine']
    return config.get(name, {}) or {}
