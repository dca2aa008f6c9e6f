"""Executable property reports for solved surfaces.

Each report is a pure, deterministic function of its inputs and follows one
rule: it fails exactly when its statistic exceeds its tolerance.  What the
reports measure is the discrete shadow of the continuous problem: convexity
propagation, scheme monotonicity, the Lipschitz and square-root-in-time
moduli, grid convergence to a single limit, and the two-point control
reduction.  They certify the scheme, not the limit it approximates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .market import MarketModel
from .solver import (
    Grid,
    Solution,
    SolverConfig,
    generator_apply,
    solve,
)

__all__ = [
    "PropertyReport",
    "convexity_report",
    "regularity_report",
    "comparison_test",
    "convergence_report",
    "bang_bang_report",
]


@dataclass(frozen=True)
class PropertyReport:
    name: str
    passed: bool
    statistic: float
    tolerance: float
    artifacts: dict

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "statistic": self.statistic,
            "tolerance": self.tolerance,
            "artifacts": self.artifacts,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _report(name: str, statistic: float, tolerance: float,
            artifacts: dict) -> PropertyReport:
    statistic = float(statistic)
    # NaN must fail, so the comparison is written to reject it
    passed = bool(statistic <= tolerance)
    return PropertyReport(name=name, passed=passed, statistic=statistic,
                          tolerance=float(tolerance), artifacts=artifacts)


def convexity_report(solution: Solution, tolerance: float = 1e-8) -> PropertyReport:
    """Largest normalized concavity over every slice of the surface.

    statistic = max of -D2 u / (1 + |u|); a convex-in-x surface keeps it
    at rounding level.
    """
    u = solution.u
    second = u[:, :-2] - 2.0 * u[:, 1:-1] + u[:, 2:]
    normalized = -second / (1.0 + np.abs(u[:, 1:-1]))
    worst_flat = int(np.argmax(normalized))
    worst = np.unravel_index(worst_flat, normalized.shape)
    return _report(
        "convexity", float(normalized.max()), tolerance,
        {
            "worst_slice": int(worst[0]),
            "worst_node": int(worst[1] + 1),
            "second_difference": float(second[worst]),
        },
    )


def _pair_constant(solution: Solution, max_points: int = 40) -> float:
    """Max |du| / (sqrt(dt) + dx) over a deterministic subsample of pairs."""
    grid = solution.grid
    t = grid.time_nodes(solution.maturity)
    x = grid.space_nodes()
    st = max(1, grid.num_time // max_points)
    sx = max(1, grid.num_space // max_points)
    tt, xx = np.meshgrid(t[::st], x[::sx], indexing="ij")
    uu = solution.u[::st, ::sx]
    tf, xf, uf = tt.ravel(), xx.ravel(), uu.ravel()
    dt = np.abs(tf[:, None] - tf[None, :])
    dx = np.abs(xf[:, None] - xf[None, :])
    du = np.abs(uf[:, None] - uf[None, :])
    denom = np.sqrt(dt) + dx
    mask = denom > 0.0
    return float((du[mask] / denom[mask]).max())


def regularity_report(solution: Solution,
                      refined: Solution | None = None) -> PropertyReport:
    """Empirical space-Lipschitz and time-Hoelder-1/2 moduli.

    Without a refined companion the report records the constants and passes
    when they are finite.  With one, the statistic becomes the factor by
    which the mixed-pair constant moved under refinement and the tolerance
    is 2: the modulus must be stable, since no a-priori constant is
    available to compare against.
    """
    grid = solution.grid
    h = grid.dx
    dt = solution.maturity / grid.num_time
    lip_x = float(np.abs(np.diff(solution.u, axis=1)).max() / h)
    holder_t = float(np.abs(np.diff(solution.u, axis=0)).max() / math.sqrt(dt))
    base = _pair_constant(solution)
    artifacts = {
        "lipschitz_x": lip_x,
        "holder_t": holder_t,
        "pair_constant": base,
    }
    if refined is None:
        statistic = base if math.isfinite(base) else math.nan
        return _report("regularity", statistic, math.inf, artifacts)
    other = _pair_constant(refined)
    artifacts["refined_pair_constant"] = other
    lo, hi = sorted((base, other))
    factor = hi / lo if lo > 0.0 else math.inf
    return _report("regularity", factor, 2.0, artifacts)


def comparison_test(model: MarketModel, grid: Grid, config: SolverConfig,
                    phi1: np.ndarray, phi2: np.ndarray) -> PropertyReport:
    """Monotonicity shadow: ordered terminal rows stay ordered at every slice.

    statistic = max of u1 - u2 over the whole surface, tolerance 1e-12.
    Raises when the rows are not ordered to begin with.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if phi1.shape != phi2.shape:
        raise ValueError("terminal rows must share a shape")
    if np.any(phi2 < phi1):
        raise ValueError("ordered terminal rows required: phi1 <= phi2 pointwise")
    u1 = solve(model, grid, config, terminal_row=phi1).u
    u2 = solve(model, grid, config, terminal_row=phi2).u
    drop = u1 - u2
    worst = np.unravel_index(int(np.argmax(drop)), drop.shape)
    return _report(
        "comparison", float(drop.max()), 1e-12,
        {
            "worst_slice": int(worst[0]),
            "worst_node": int(worst[1]),
            "max_gain": float((u2 - u1).max()),
        },
    )


def convergence_report(model: MarketModel, config: SolverConfig,
                       grids, probes=(-1.0, 0.0, 1.0)) -> PropertyReport:
    """Richardson order across a dyadic grid sequence at fixed probes.

    Needs at least three strictly refining grids.  The statistic is the
    worst of two shortfalls at tolerance zero: the estimated order must
    reach 0.8 at every probe, and the extrapolated limit must sit within
    twice the finest-pair difference of the finest solve (a concrete
    single-limit check; it also guards against order estimates produced by
    sign-flipping differences).
    """
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError(f"need at least 3 grids, got {len(grids)}")
    for a, b in zip(grids, grids[1:]):
        if not (b.num_space > a.num_space and b.num_time > a.num_time):
            raise ValueError(
                "grid sequence must refine strictly in space and time; "
                f"got ({a.num_space},{a.num_time}) then ({b.num_space},{b.num_time})"
            )
    solutions = [solve(model, g, config) for g in grids]
    values: dict = {}
    for p in probes:
        per_grid = []
        for s in solutions:
            g = s.grid
            i = g.zero_index + int(round(p / g.dx))
            if not 0 <= i <= g.num_space or abs(g.space_nodes()[i] - p) > 1e-9:
                raise ValueError(f"probe {p} is not a node of grid {g}")
            per_grid.append(float(s.u[0][i]))
        values[f"{p:g}"] = per_grid
    orders, ratios, limits, margins = {}, {}, {}, {}
    shortfall = -math.inf
    excess = -1.0
    for key, vals in values.items():
        e1 = vals[-3] - vals[-2]
        e2 = vals[-2] - vals[-1]
        if e2 == 0.0:
            orders[key] = math.inf
            ratios[key] = math.inf
            limits[key] = vals[-1]
            margins[key] = 0.0
            continue
        ratio = abs(e1) / abs(e2)
        order = math.log2(ratio) if ratio > 0.0 else -math.inf
        limit = vals[-1] - e2 / (2.0 ** order - 1.0) if order > 0 else math.nan
        gap = abs(vals[-1] - limit) if math.isfinite(limit) else math.inf
        orders[key] = order
        ratios[key] = ratio
        limits[key] = limit
        margins[key] = gap / abs(e2)
        shortfall = max(shortfall, 0.8 - order)
        excess = max(excess, (gap - 2.0 * abs(e2)) / abs(e2))
    return _report(
        "convergence", max(shortfall, excess), 0.0,
        {
            "values": values,
            "orders": orders,
            "ratios": ratios,
            "extrapolated": limits,
            "limit_gap_over_pair": margins,
        },
    )


def bang_bang_report(solution: Solution, model: MarketModel,
                     config: SolverConfig, n_controls: int = 21,
                     tolerance: float = 1e-9) -> PropertyReport:
    """Two controls suffice: a dense control grid gains nothing.

    Re-optimizes the generator over `n_controls` evenly spaced controls on
    sampled slices of the solved surface and compares with the two-point
    optimum.  On convex data the maximum is at an endpoint, so the gain
    should vanish; nonconvex input is flagged in the artifacts instead of
    raising.
    """
    grid = solution.grid
    bound = config.control_bound
    controls = np.linspace(-bound, bound, n_controls)
    stride = max(1, grid.num_time // 20)
    slice_ids = list(range(0, grid.num_time + 1, stride))
    second = solution.u[:, :-2] - 2.0 * solution.u[:, 1:-1] + solution.u[:, 2:]
    nonconvex = bool((-second / (1.0 + np.abs(solution.u[:, 1:-1]))).max() > 1e-8)
    worst = -math.inf
    worst_at = (0, 0)
    for k in slice_ids:
        row = solution.u[k]
        stack = np.stack([
            generator_apply(row, grid, model, float(q), config.drift_variant,
                            config.jump_quadrature_nodes)
            for q in controls
        ])
        dense = stack.max(axis=0)
        two = np.maximum(stack[0], stack[-1])
        gain = (dense - two)[1:-1]
        j = int(np.argmax(gain))
        if gain[j] > worst:
            worst = float(gain[j])
            worst_at = (k, j + 1)
    return _report(
        "bang_bang", worst, tolerance,
        {
            "worst_slice": worst_at[0],
            "worst_node": worst_at[1],
            "n_controls": n_controls,
            "nonconvex_input": nonconvex,
        },
    )
