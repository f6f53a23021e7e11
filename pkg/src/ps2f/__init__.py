"""Predictive safety-stability filter toolkit.

A nominal MPC acts as copilot; a secondary optimal control problem projects
an arbitrary external command onto the set of first inputs that keep the
closed loop safe and (for a < 1) provably stabilizing. The package provides
the two solvers, closed-form linear-case geometry, a closed-loop simulation
harness, a CLI, and a live teleoperation service.
"""

from ps2f.cases import (
    case1_config,
    case3_config,
    run_baseline_case3,
    run_case1,
    run_case3,
)
from ps2f.filter import FilterResult, S2Grid, filter, s2_membership, sample_s2_set
from ps2f.linear import closed_form_membership, max_ellipsoid_level, solve_dare
from ps2f.nominal import NominalSolution, solve_nominal
from ps2f.simulate import (
    ClosedLoopAssertionError,
    ClosedLoopLog,
    discounted_goal_command,
    parameter_sweep_s2,
    run_closed_loop,
)
from ps2f.types import (
    BoxSet,
    ModeSchedule,
    Ps2fConfig,
    QuadraticCost,
    SystemModel,
    TerminalSet,
    validate_config,
)

__all__ = [
    "BoxSet",
    "ClosedLoopAssertionError",
    "ClosedLoopLog",
    "FilterResult",
    "ModeSchedule",
    "NominalSolution",
    "Ps2fConfig",
    "QuadraticCost",
    "S2Grid",
    "SystemModel",
    "TerminalSet",
    "case1_config",
    "case3_config",
    "closed_form_membership",
    "discounted_goal_command",
    "filter",
    "max_ellipsoid_level",
    "parameter_sweep_s2",
    "run_baseline_case3",
    "run_case1",
    "run_case3",
    "run_closed_loop",
    "s2_membership",
    "sample_s2_set",
    "solve_dare",
    "solve_nominal",
    "validate_config",
]

__version__ = "0.1.0"
