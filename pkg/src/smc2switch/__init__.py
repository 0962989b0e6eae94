"""SMC^2 for state space models with adaptive PMMH/PG kernel switching."""

from ._accel import BACKEND
from .bench import GoldReference, replicate_runner, run_gold, score_runs
from .engine import SMC2, ConfigError, EngineConfig, RunAbort, RunMetrics, RunResult, run
from .filters import bootstrap_pf, conditional_pf, tune_state_particles
from .kalman import kalman_loglik
from .models import MODELS, TimeSeries, get_model
from .population import PG, PMMH

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GoldReference",
    "replicate_runner",
    "run_gold",
    "score_runs",
    "SMC2",
    "ConfigError",
    "EngineConfig",
    "RunAbort",
    "RunMetrics",
    "RunResult",
    "run",
    "bootstrap_pf",
    "conditional_pf",
    "tune_state_particles",
    "kalman_loglik",
    "MODELS",
    "TimeSeries",
    "get_model",
    "PG",
    "PMMH",
]
