"""Shared types, errors, configuration and logging for pddkit."""

__version__ = "0.1.0"

from shared.types import (
    Amd,
    EmdResult,
    Embedding,
    EncodingMode,
    Isometry,
    LatticeBasis,
    Motif,
    Pdd,
    PeriodicSet,
    PstConfig,
    RunManifest,
    TrainOpts,
    TransportPlan,
)
from shared.errors import InputError, NumericalError, PddkitError
from shared.config import (
    ConfigManager,
    get_config,
    get_config_manager,
    reset_config,
)
from shared.logging_setup import configure_logging

__all__ = [
    "__version__",
    # Types
    "Amd",
    "EmdResult",
    "Embedding",
    "EncodingMode",
    "Isometry",
    "LatticeBasis",
    "Motif",
    "Pdd",
    "PeriodicSet",
    "PstConfig",
    "RunManifest",
    "TrainOpts",
    "TransportPlan",
    # Errors
    "InputError",
    "NumericalError",
    "PddkitError",
    # Config
    "ConfigManager",
    "get_config",
    "get_config_manager",
    "reset_config",
    "configure_logging",
]
