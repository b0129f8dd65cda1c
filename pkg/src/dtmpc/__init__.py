"""
dtmpc - Differentiable tube-based model predictive control.

This package provides a box-constrained DDP solver with discrete barrier
states, hypergradients of upper-level losses through the solver, and a
two-layer tube MPC that adapts its parameters online.
"""

from .barrier import BarrierConfig, BarrierKind, augment
from .ddp import SolverSettings, solve
from .doc import hypergradient
from .experiments import CampaignConfig, CampaignResult, run_campaign
from .models import GradientRoute, Solution, Trajectory, TrialOutcome
from .problem import OCProblem, ParameterLayout, TrackingCost
from .tasks import TaskConfig, build_task, default_task_config
from .tube_mpc import MpcSettings, run_dt_mpc, run_nt_mpc

__version__ = "0.1.0"
__all__ = [
    "BarrierConfig",
    "BarrierKind",
    "CampaignConfig",
    "CampaignResult",
    "GradientRoute",
    "MpcSettings",
    "OCProblem",
    "ParameterLayout",
    "Solution",
    "SolverSettings",
    "TaskConfig",
    "TrackingCost",
    "Trajectory",
    "TrialOutcome",
    "augment",
    "build_task",
    "default_task_config",
    "hypergradient",
    "run_campaign",
    "run_dt_mpc",
    "run_nt_mpc",
    "solve",
]
