"""Optimal investment, consumption and life insurance for a household
whose breadwinner faces health shocks, with habit-forming preferences.

Closed-form solvers for the post-death and alive problems, a Monte Carlo
engine, numerical verification, hazard calibration and a CLI.
"""

__version__ = "0.1.0"

from .alive import AliveCoefficients, alive_policy, alive_value, alive_value_tilde, solve_alive
from .config import paper_defaults, paper_defaults_dict, resolve_params
from .dead import DeadCoefficients, dead_policy, dead_value, solve_dead
from .model import ModelParams, PolicyDecision
from .simulation import (
    ConstantPolicy,
    MCEstimate,
    OptimalPolicy,
    PathBundle,
    PolicyOracle,
    SimConfig,
    estimate_objective,
    simulate,
)

__all__ = [
    "AliveCoefficients", "ConstantPolicy", "DeadCoefficients", "MCEstimate", "ModelParams",
    "OptimalPolicy", "PathBundle", "PolicyDecision", "PolicyOracle", "SimConfig", "alive_policy",
    "alive_value", "alive_value_tilde", "dead_policy", "dead_value", "estimate_objective",
    "paper_defaults", "paper_defaults_dict", "resolve_params", "simulate", "solve_alive", "solve_dead",
]
