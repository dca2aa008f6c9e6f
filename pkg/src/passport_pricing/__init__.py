"""Passport option pricing under jump diffusions.

The running account of a self-financing trading strategy, capped in size,
is priced through its ratio to the underlying: a one-dimensional obstacle
problem solved by an implicit monotone scheme with policy iteration, and
cross-checked by Monte Carlo playback of the solved control.
"""

from .config import ConfigError, RunConfig, load_config
from .estimator import PassportOptionPricer
from .market import (
    KouJumps,
    MarketModel,
    MertonJumps,
    TabulatedJumps,
    compensator,
    tilt,
    validate_model,
)
from .montecarlo import PolicyTable, estimate_price, ls_stop_estimate
from .properties import (
    PropertyReport,
    bang_bang_report,
    comparison_test,
    convergence_report,
    convexity_report,
    regularity_report,
)
from .reduction import (
    drift_coefficient,
    jump_displacement,
    normalize_constraint,
    reassemble,
)
from .solver import (
    Grid,
    Solution,
    SolverConfig,
    build_grid,
    jump_integral,
    price_at,
    solve,
    solve_european,
    surface_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Grid",
    "KouJumps",
    "MarketModel",
    "MertonJumps",
    "PassportOptionPricer",
    "PolicyTable",
    "PropertyReport",
    "RunConfig",
    "Solution",
    "SolverConfig",
    "TabulatedJumps",
    "bang_bang_report",
    "build_grid",
    "comparison_test",
    "compensator",
    "convergence_report",
    "convexity_report",
    "drift_coefficient",
    "estimate_price",
    "jump_displacement",
    "jump_integral",
    "load_config",
    "ls_stop_estimate",
    "normalize_constraint",
    "price_at",
    "reassemble",
    "regularity_report",
    "solve",
    "solve_european",
    "surface_csv",
    "tilt",
    "validate_model",
]
