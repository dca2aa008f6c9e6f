"""Estimator-style front end: fit solves the surface, predict prices points.

The fit/predict split maps cleanly onto the pricing workflow: fitting runs
the backward induction once for a parameter set, prediction evaluates the
stored surface at query points, and get_params/set_params give pipelines and
grid searches a uniform handle on the model parameters.  Nothing is learned
from data; X is accepted by fit only for interface compatibility.

A trading bound C prices through the bound-1 surface by scaling the spot:
the contract at bound C and spot S is the bound-1 contract at spot C * S.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .market import JumpSpec, MarketModel
from .solver import SolverConfig, build_grid, price_at, solve

__all__ = ["PassportOptionPricer"]


class PassportOptionPricer(BaseEstimator):
    """Prices an American passport option on a trading account.

    Parameters mirror the market model plus the numerical window; fitted
    state is the solved surface in `solution_`.  predict takes rows of
    (t, spot, account) and returns option values.
    """

    def __init__(self, rate: float = 0.05, dividend_yield: float = 0.02,
                 volatility: float = 0.2, maturity: float = 1.0,
                 jumps: Optional[JumpSpec] = None, control_bound: float = 1.0,
                 x_min: float = -4.0, x_max: float = 4.0,
                 num_space: int = 400, num_time: int = 400,
                 drift_variant: str = "with_a"):
        self.rate = rate
        self.dividend_yield = dividend_yield
        self.volatility = volatility
        self.maturity = maturity
        self.jumps = jumps
        self.control_bound = control_bound
        self.x_min = x_min
        self.x_max = x_max
        self.num_space = num_space
        self.num_time = num_time
        self.drift_variant = drift_variant

    def fit(self, X=None, y=None):
        """Solve the bound-1 surface for the configured parameters."""
        if not self.control_bound > 0.0:
            raise ValueError(f"control_bound must be > 0, got {self.control_bound}")
        model = MarketModel(rate=self.rate, dividend_yield=self.dividend_yield,
                            volatility=self.volatility, maturity=self.maturity,
                            jumps=self.jumps)
        grid = build_grid(x_min=self.x_min, x_max=self.x_max,
                          num_space=self.num_space, num_time=self.num_time)
        self.solution_ = solve(model, grid,
                               SolverConfig(drift_variant=self.drift_variant))
        return self

    def predict(self, X):
        """Option values for rows (t, spot, account); spot must be > 0."""
        check_is_fitted(self, "solution_")
        X = check_array(X, ensure_min_features=3)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns (t, spot, account), got {X.shape[1]}")
        return np.array([self.price(t, s, x) for t, s, x in X])

    def price(self, t: float, spot: float, account: float) -> float:
        """Single-point convenience wrapper around predict's lookup."""
        check_is_fitted(self, "solution_")
        return price_at(self.solution_, t, self.control_bound * spot, account)
