"""Energy-harvesting SWIPT sensor-network simulator with Lyapunov, policy-gradient
and lifelong-learning controllers, plus a benchmark harness."""
from .env import ActionFeasible, DomainConfig, SlotState, StepOutcome, SwiptNetwork, TaskConfig
from .errors import (DimensionMismatch, EmptySeries, InfeasibleAction, NonFiniteAction, NotPSD, NotSymmetric,
                     ParseError, SingularFisher, SingularSystem, SwiptBenchError, ValidationError)
from .harness import ExperimentSpec, MetricsRow, run_sequential
from .lifelong import LifelongAgent, LifelongConfig
from .lyapunov import LyapunovConfig, LyapunovController, solve_slot
from .pg import CriticParams, LinearGaussianPolicy, PGConfig

__version__ = "0.1.0"

__all__ = [
    "ActionFeasible", "CriticParams", "DimensionMismatch", "DomainConfig", "EmptySeries", "ExperimentSpec",
    "InfeasibleAction", "LifelongAgent", "LifelongConfig", "LinearGaussianPolicy", "LyapunovConfig",
    "LyapunovController", "MetricsRow", "NonFiniteAction", "NotPSD", "NotSymmetric", "PGConfig", "ParseError",
    "SingularFisher", "SingularSystem", "SlotState", "StepOutcome", "SwiptBenchError", "SwiptNetwork",
    "TaskConfig", "ValidationError", "run_sequential", "solve_slot",
]
