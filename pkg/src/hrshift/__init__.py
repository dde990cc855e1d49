"""hrshift: change-point detection and post-selection inference for
event-related hemodynamic response time series."""

from .config import KnownCpConfig, StudyConfig, UnknownCpConfig, load_config
from .learning import backward_learning_curve, learning_criterion
from .pipelines import run_procedure1, run_procedure2
from .util import ConfigError, DataError, PosiFailure

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "KnownCpConfig",
    "PosiFailure",
    "StudyConfig",
    "UnknownCpConfig",
    "backward_learning_curve",
    "learning_criterion",
    "load_config",
    "run_procedure1",
    "run_procedure2",
    "__version__",
]
