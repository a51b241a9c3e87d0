"""Learning CTMC transition rates from aggregate steady-state observations."""
from .ctmc import UniformizedChain, SteadyState, steady_state, uniformize
from .estimator import CTMCRateEstimator
from .models import ParametricModel, Relaxation
from .optimizer import FitResult, OptimizerConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CTMCRateEstimator",
    "FitResult",
    "OptimizerConfig",
    "ParametricModel",
    "Relaxation",
    "SteadyState",
    "UniformizedChain",
    "fit",
    "steady_state",
    "uniformize",
]
