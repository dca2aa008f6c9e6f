"""Monte Carlo valuation of the controlled, stopped wealth ratio.

Plays back a control policy (usually the backward solver's) on simulated
paths of the ratio under the asset-numeraire measure and averages discounted
stopped payoffs.  Any admissible pair of control and stopping rule prices a
lower bound for the optimized value, so agreement with the grid solve within
Monte Carlo and discretization error cross-validates both routes without
sharing code.

Path recipe for one step of length dt at control q: the ratio moves by

    (q - L) * (-(dividend_yield + kappa) dt + volatility * sqrt(dt) * xi)

with xi standard normal, then each of Poisson(lambda_tilde dt) jumps with
size z drawn from the tilted law contracts the gap L - q by the factor
e^{-z}.  kappa is the price-side compensator, equal to the tilted-law mean
of 1 - e^{-z}, so folding it into the drift centers the jump stream and no
separate compensation is needed.

Paths are simulated in fixed-size batches, each driven by its own
counter-keyed random stream, so results do not depend on how batches are
scheduled and a run is reproducible from the root seed alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as npoly

from .market import MarketModel, compensator, sample_jump, tilt, validate_model
from .solver import Grid, Solution

__all__ = [
    "PolicyTable",
    "simulate_path",
    "estimate_price",
    "ls_stop_estimate",
    "batch_summary",
]

_BATCH = 10_000
_Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Control and stopping rule looked up by nearest grid node and slice.

    Variants: ``table`` plays back a solved surface; ``fixed`` holds the
    control constant and never stops early; ``sign_switch`` opposes the
    sign of the ratio (the classic bang-bang guess); ``immediate`` stops
    at once, useful as a degenerate stopping check.
    """

    kind: str
    grid: Optional[Grid] = None
    q_star: Optional[np.ndarray] = None
    exercise: Optional[np.ndarray] = None
    maturity: Optional[float] = None
    fixed_value: float = 1.0

    @classmethod
    def from_solution(cls, solution: Solution) -> "PolicyTable":
        return cls(kind="table", grid=solution.grid,
                   q_star=solution.q_star, exercise=solution.exercise,
                   maturity=solution.maturity)

    @classmethod
    def fixed(cls, q: float) -> "PolicyTable":
        return cls(kind="fixed", fixed_value=float(q))

    @classmethod
    def sign_switch(cls) -> "PolicyTable":
        return cls(kind="sign_switch")

    @classmethod
    def immediate(cls) -> "PolicyTable":
        return cls(kind="immediate")

    def _indices(self, t: float, ratio: np.ndarray):
        grid = self.grid
        k = int(round(t / self.maturity * grid.num_time))
        k = min(max(k, 0), grid.num_time)
        x = np.clip(ratio, grid.x_min, grid.x_max)
        j = np.rint((x - grid.x_min) / grid.dx).astype(int)
        return k, np.clip(j, 0, grid.num_space)

    def control(self, t: float, ratio):
        ratio = np.asarray(ratio, dtype=float)
        if self.kind == "table":
            k, j = self._indices(t, ratio)
            return self.q_star[k, j]
        if self.kind == "sign_switch":
            return np.where(ratio > 0.0, -1.0, 1.0)
        return np.full(ratio.shape, self.fixed_value)

    def should_stop(self, t: float, ratio):
        ratio = np.asarray(ratio, dtype=float)
        if self.kind == "table":
            k, j = self._indices(t, ratio)
            return self.exercise[k, j]
        if self.kind == "immediate":
            return np.ones(ratio.shape, dtype=bool)
        return np.zeros(ratio.shape, dtype=bool)


class _Dynamics:
    """Per-step coefficients shared by the path generators."""

    def __init__(self, model: MarketModel):
        validate_model(model).raise_if_invalid()
        self.vol = model.volatility
        self.tilted = tilt(model.jumps)
        self.lam = self.tilted.lambda_tilde
        # drift on the gap q - L: dividend yield plus jump compensator
        self.pull = model.dividend_yield + (
            compensator(model.jumps) if model.jumps is not None else 0.0
        )

    def advance(self, ratio, q, dt, rng):
        """One Euler step plus raw jumps, in place on a float array."""
        gap = q - ratio
        shock = -self.pull * dt
        if self.vol > 0.0:
            shock = shock + self.vol * math.sqrt(dt) * rng.standard_normal(ratio.shape)
        ratio = ratio + gap * shock
        if self.lam > 0.0:
            counts = rng.poisson(self.lam * dt, ratio.shape)
            rounds = int(counts.max()) if counts.size else 0
            for j in range(rounds):
                hit = counts > j
                z = sample_jump(self.tilted, rng, int(hit.sum()))
                ratio[hit] = q[hit] + (ratio[hit] - q[hit]) * np.exp(-z)
        return ratio


def simulate_path(model: MarketModel, policy: PolicyTable, t0: float, l0: float,
                  n_steps: int, rng_state) -> np.ndarray:
    """One path of the ratio from t0 to maturity; returns n_steps + 1 values.

    The control is refreshed from the policy at every step.  Stopping is
    not applied here; the caller owns the stopping time.  Identical
    rng_state gives an identical path.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    dyn = _Dynamics(model)
    rng = np.random.default_rng(rng_state)
    dt = (model.maturity - t0) / n_steps
    path = np.empty(n_steps + 1)
    path[0] = l0
    state = np.array([l0])
    for k in range(n_steps):
        q = np.asarray(policy.control(t0 + k * dt, state), dtype=float)
        state = dyn.advance(state, q, dt, rng)
        path[k + 1] = state[0]
    return path


def _batch_rng(seed: int, batch_index: int) -> np.random.Generator:
    # counter-keyed streams: batch c starts 2^192 draws away from batch c+1
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, seed >> 64], dtype=np.uint64)
    counter = np.array([0, 0, 0, batch_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def estimate_price(model: MarketModel, policy: PolicyTable, t0: float, l0: float,
                   n_paths: int, n_steps: int, seed: int,
                   antithetic: bool = False) -> dict:
    """Mean discounted stopped payoff with a standard error and 95% band.

    Stops a path the first time the policy's exercise lookup fires (and
    always at maturity); the payoff is e^{-a (tau - t0)} max(L_tau, 0).
    Returns {mean, std_error, ci95, n_paths, n_steps, seed}.
    """
    if n_paths < 100:
        raise ValueError(f"n_paths must be >= 100, got {n_paths}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    dyn = _Dynamics(model)
    a = model.dividend_yield
    horizon = model.maturity - t0
    dt = horizon / n_steps
    payoffs = np.empty(n_paths)
    for batch_index, start in enumerate(range(0, n_paths, _BATCH)):
        size = min(_BATCH, n_paths - start)
        rng = _batch_rng(seed, batch_index)
        if antithetic:
            half = size // 2
            base = rng.standard_normal((n_steps, half))
            extra = rng.standard_normal((n_steps, size - 2 * half))
            normals = np.concatenate([base, -base, extra], axis=1)
        else:
            normals = None
        ratio = np.full(size, float(l0))
        out = np.empty(size)
        alive = np.ones(size, dtype=bool)
        for k in range(n_steps):
            t = t0 + k * dt
            stop = policy.should_stop(t, ratio) & alive
            if stop.any():
                out[stop] = math.exp(-a * (t - t0)) * np.maximum(ratio[stop], 0.0)
                alive &= ~stop
            if not alive.any():
                break
            q = np.asarray(policy.control(t, ratio), dtype=float)
            gap = q - ratio
            shock = -dyn.pull * dt
            if dyn.vol > 0.0:
                xi = normals[k] if antithetic else rng.standard_normal(size)
                shock = shock + dyn.vol * math.sqrt(dt) * xi
            moved = ratio + gap * shock
            if dyn.lam > 0.0:
                counts = rng.poisson(dyn.lam * dt, size)
                counts[~alive] = 0
                rounds = int(counts.max()) if counts.size else 0
                for j in range(rounds):
                    hit = counts > j
                    z = sample_jump(dyn.tilted, rng, int(hit.sum()))
                    moved[hit] = q[hit] + (moved[hit] - q[hit]) * np.exp(-z)
            ratio[alive] = moved[alive]
        if alive.any():
            out[alive] = math.exp(-a * horizon) * np.maximum(ratio[alive], 0.0)
        payoffs[start:start + size] = out
    mean = math.fsum(payoffs) / n_paths
    var = math.fsum((p - mean) ** 2 for p in payoffs) / (n_paths - 1)
    se = math.sqrt(var / n_paths)
    return {
        "mean": mean,
        "std_error": se,
        "ci95": _Z95 * se,
        "n_paths": n_paths,
        "n_steps": n_steps,
        "seed": seed,
    }


def ls_stop_estimate(model: MarketModel, policy: PolicyTable, t0: float, l0: float,
                     n_paths: int, n_steps: int, basis_degree: int,
                     seed: int) -> dict:
    """Regression-based stopping value under the policy's control.

    Simulates full paths with the given control, then runs backward
    least-squares regression of continuation values on a polynomial basis
    in the ratio to decide exercise at each step.  An independent check on
    the solver's exercise region; returns {mean, std_error,
    degenerate_basis}, the flag marking any regression whose design matrix
    lost rank (all paths identical, for instance).
    """
    if not 2 <= basis_degree <= 6:
        raise ValueError(f"basis_degree must be in [2, 6], got {basis_degree}")
    if n_paths < 100:
        raise ValueError(f"n_paths must be >= 100, got {n_paths}")
    dyn = _Dynamics(model)
    a = model.dividend_yield
    dt = (model.maturity - t0) / n_steps
    rng = _batch_rng(seed, 0)
    states = np.empty((n_steps + 1, n_paths))
    states[0] = l0
    ratio = np.full(n_paths, float(l0))
    for k in range(n_steps):
        q = np.asarray(policy.control(t0 + k * dt, ratio), dtype=float)
        ratio = dyn.advance(ratio, q, dt, rng)
        states[k + 1] = ratio
    disc = math.exp(-a * dt)
    value = np.maximum(states[n_steps], 0.0)
    degenerate = False
    for k in range(n_steps - 1, 0, -1):
        value = disc * value
        # regress and decide only where exercising could pay: fitting one
        # polynomial across the payoff kink manufactures spurious exercise
        money = states[k] > 0.0
        if int(money.sum()) <= basis_degree + 1:
            continue
        basis = npoly.polyvander(states[k][money], basis_degree)
        coef, _, rank, _ = np.linalg.lstsq(basis, value[money], rcond=None)
        if rank < basis_degree + 1:
            degenerate = True
        continuation = basis @ coef
        take = np.zeros_like(money)
        take[money] = states[k][money] > continuation
        value[take] = states[k][take]
    value = disc * value
    continuation_mean = math.fsum(value) / n_paths
    var = math.fsum((v - continuation_mean) ** 2 for v in value) / (n_paths - 1)
    return {
        "mean": max(continuation_mean, max(l0, 0.0)),
        "std_error": math.sqrt(var / n_paths),
        "degenerate_basis": degenerate,
    }


def batch_summary(result: dict) -> str:
    """Canonical one-line JSON for a batch result; key-sorted, LF-free."""
    return json.dumps(result, sort_keys=True)
