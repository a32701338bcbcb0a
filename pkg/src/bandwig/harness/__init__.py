"""Config-driven experiment harness behind the ``bandwig`` command."""

from .config import ConfigError, RunConfig, config_from_mapping, load_config
from .reports import decay_report, semicircle_deviation
from .runner import RunResult, TaskFailure, run

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunResult",
    "TaskFailure",
    "config_from_mapping",
    "load_config",
    "run",
    "semicircle_deviation",
    "decay_report",
]
