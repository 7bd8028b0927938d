"""
Configuration management for pddkit.

Process settings come from a ``.env`` file and the environment; model and
training settings come from TOML or JSON config files. Precedence for the
latter is CLI flag > config file > built-in default.
"""
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import structlog
from dotenv import load_dotenv
from pydantic import ValidationError

from shared.errors import InputError
from shared.types import PddkitSettings, PstConfig, TrainOpts


logger = structlog.get_logger()


class ConfigManager:
    """
    Manages configuration loading and validation.
    """

    def __init__(self, env_file: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            env_file: Path to .env file. If None, searches for .env in project root.
        """
        self.env_file = env_file or self._find_env_file()
        self._env_dict: Dict[str, str] = {}
        self._config: Optional[PddkitSettings] = None

    def _find_env_file(self) -> str:
        """Find .env file in the current directory or up to 3 parents."""
        current = Path.cwd()
        for _ in range(4):
            env_path = current / ".env"
            if env_path.exists():
                return str(env_path)
            current = current.parent
        return ".env"

    def load(self) -> PddkitSettings:
        """
        Load settings from environment.

        Returns:
            PddkitSettings object with all settings.
        """
        if self._config:
            return self._config

        if Path(self.env_file).exists():
            load_dotenv(self.env_file)
            logger.debug("Loaded configuration from file", env_file=self.env_file)

        self._env_dict = {
            key: value
            for key, value in os.environ.items()
            if self._is_relevant_env_var(key) and value
        }

        try:
            self._config = PddkitSettings.from_env(self._env_dict)
        except ValueError as e:
            logger.error("Failed to parse configuration", error=str(e))
            raise InputError(f"invalid environment configuration: {e}") from e
        self._validate_config()
        logger.debug("Configuration loaded", threads=self._config.threads)
        return self._config

    def _is_relevant_env_var(self, key: str) -> bool:
        """Check if environment variable is relevant to our config."""
        return key.startswith("PDDKIT_") or key.startswith("LOG_")

    def _validate_config(self) -> None:
        """Validate the loaded configuration."""
        if not self._config:
            raise InputError("No configuration loaded")
        if self._config.threads < 1:
            raise InputError("PDDKIT_THREADS must be at least 1")
        if self._config.max_supercell_points < 1:
            raise InputError("PDDKIT_MAX_SUPERCELL_POINTS must be at least 1")
        if self._config.k < 1:
            raise InputError("PDDKIT_K must be at least 1")
        if self._config.tolerance < 0:
            raise InputError("PDDKIT_TOL must be non-negative")
        if self._config.http_timeout <= 0:
            raise InputError("PDDKIT_HTTP_TIMEOUT must be positive")

    def get_logging_config(self) -> Dict[str, Any]:
        """
        Get logging configuration.

        Returns:
            Dictionary with logging settings.
        """
        return {
            "level": os.environ.get("LOG_LEVEL", "INFO"),
            "format": os.environ.get("LOG_FORMAT", "text"),
            "file": os.environ.get("LOG_FILE", None),
        }


def read_config_file(path: str) -> Dict[str, Any]:
    """
    Read a TOML or JSON config file into a flat dictionary.

    A file may hold the model and training sections as ``[model]`` and
    ``[train]`` tables, or one flat table that is split by field name.
    """
    file = Path(path)
    try:
        if file.suffix.lower() == ".toml":
            data = tomllib.loads(file.read_text(encoding="utf-8"))
        else:
            data = json.loads(file.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise InputError(f"config file {path} must hold a table")
    logger.info("Read config file", path=str(file), keys=sorted(data))
    return data


def resolve_model_config(
    file_data: Optional[Dict[str, Any]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[PstConfig, TrainOpts]:
    """
    Merge defaults, config-file values and CLI overrides.

    Args:
        file_data: Parsed config file (see ``read_config_file``).
        overrides: Values given on the command line; ``None`` values are ignored.

    Returns:
        Validated (PstConfig, TrainOpts).
    """
    file_data = dict(file_data or {})
    model_data = dict(file_data.pop("model", {}) or {})
    train_data = dict(file_data.pop("train", {}) or {})
    for key, value in file_data.items():
        if key not in PstConfig.model_fields and key not in TrainOpts.model_fields:
            raise InputError(f"unknown config key {key!r}")
        if key in PstConfig.model_fields:
            model_data[key] = value
        if key in TrainOpts.model_fields:
            train_data[key] = value

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in PstConfig.model_fields:
            model_data[key] = value
        if key in TrainOpts.model_fields:
            train_data[key] = value

    try:
        return PstConfig(**model_data), TrainOpts(**train_data)
    except ValidationError as e:
        raise InputError(f"invalid model configuration: {e}") from e


# Global configuration instance
_config_manager: Optional[ConfigManager] = None


def get_config() -> PddkitSettings:
    """
    Get the global settings.

    Returns:
        PddkitSettings object.
    """
    return get_config_manager().load()


def get_config_manager() -> ConfigManager:
    """
    Get the global configuration manager.

    Returns:
        ConfigManager instance.
    """
    global _config_manager
    if not _config_manager:
        _config_manager = ConfigManager()
    return _config_manager


def reset_config() -> None:
    """Reset the global configuration (useful for testing)."""
    global _config_manager
    _config_manager = None
