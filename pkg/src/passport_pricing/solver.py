"""Finite-difference solver for the reduced wealth-ratio obstacle problem.

The value u(t, x) of the normalized problem solves, backward from
u(maturity, x) = max(x, 0),

    min( -du/dt - sup_q G_q u + a u,  u - x ) = 0

where a is the dividend yield (the discount of the reduced problem), the
sup runs over the admissible trading positions q, and

    G_q u = 0.5 vol^2 (q-x)^2 u_xx - b (q-x) u_x
            + integral of [u(x + (q-x)(1-e^{-z})) - u(x) - (q-x)(1-e^{-z}) u_x] nu_tilde(dz)

with b the drift scale (a, or 1 under the paper_literal diagnostic
variant).  The scheme is implicit in the local terms and lagged in the
jump gather:

  * second differences central, first differences upwinded by the sign of
    the total drift coefficient -(b + kappa)(q - x); the jump-compensation
    drift -kappa (q-x) u_x is folded into the upwinded implicit drift and
    the mass term lambda_tilde u is implicit, so every time-step matrix is
    an M-matrix and the update is monotone without a step-size condition;
  * the remaining gather integral of u(x + displacement) nu_tilde(dz) is
    evaluated on the latest policy iterate (explicit), with linear
    interpolation off-grid, value 0 below the domain and slope-one
    extrapolation above it;
  * the control is frozen by pointwise argmax, the linear system solved,
    and the pair iterated until the sup-norm change is below policy_tol
    (policy iteration); the obstacle is applied by projection afterwards.

The compensated jump integral annihilates affine rows exactly: the gather,
mass and compensation terms are all finite sums over the same quadrature
nodes, so the cancellation is algebraic, not a tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csr_matrix

from .market import MarketModel, TiltedJumps, model_fingerprint, tilt, validate_model
from .reduction import DRIFT_VARIANTS, drift_coefficient

__all__ = [
    "Grid",
    "SolverConfig",
    "Solution",
    "build_grid",
    "terminal_condition",
    "jump_integral",
    "generator_apply",
    "optimize_control",
    "time_step",
    "solve",
    "solve_european",
    "price_at",
    "surface_csv",
]

# Step-size guard for the lagged gather term; the scheme is monotone
# regardless, this bounds the splitting error of the explicit part.
CFL_LIMIT = 0.9


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid; x = 0 is always a node (index zero_index)."""

    x_min: float
    x_max: float
    num_space: int
    num_time: int
    zero_index: int

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.num_space

    def space_nodes(self) -> np.ndarray:
        # Built from integer offsets so the zero node is exactly 0.0.
        return (np.arange(self.num_space + 1) - self.zero_index) * self.dx

    def time_nodes(self, maturity: float) -> np.ndarray:
        return np.linspace(0.0, maturity, self.num_time + 1)


def build_grid(x_min: float = -4.0, x_max: float = 4.0,
               num_space: int = 200, num_time: int = 200) -> Grid:
    """Build a grid, snapping the window onto the lattice so 0 is a node."""
    if not (x_min < 0.0 < x_max):
        raise ValueError(f"domain must straddle zero, got [{x_min}, {x_max}]")
    if num_space < 2:
        raise ValueError(f"num_space must be >= 2, got {num_space}")
    if num_time < 1:
        raise ValueError(f"num_time must be >= 1, got {num_time}")
    h = (x_max - x_min) / num_space
    zero_index = int(round(-x_min / h))
    # Shift both ends by the same sub-cell amount; width and spacing are kept.
    x_lo = (0 - zero_index) * h
    x_hi = (num_space - zero_index) * h
    if not (x_lo < 0.0 < x_hi):
        raise ValueError(f"snapped domain [{x_lo}, {x_hi}] no longer straddles zero")
    return Grid(x_min=x_lo, x_max=x_hi, num_space=num_space,
                num_time=num_time, zero_index=zero_index)


@dataclass(frozen=True)
class SolverConfig:
    """Scheme parameters.

    q_candidates must lie within [-control_bound, control_bound]; the
    two-point bang-bang set is the default and is sufficient when the
    value is convex (the generator is then convex in q).
    """

    q_candidates: tuple = (-1.0, 1.0)
    control_bound: float = 1.0
    policy_max_iters: int = 20
    policy_tol: float = 1e-9
    jump_quadrature_nodes: int = 128
    drift_variant: str = "with_a"
    obstacle: str = "projection"
    boundary_left: str = "dirichlet_zero"
    boundary_right: str = "neumann_slope_one"
    cfl_guard: bool = True
    exercise_tol: float = 1e-7


def validate_config(config: SolverConfig) -> None:
    if len(config.q_candidates) == 0:
        raise ValueError("q_candidates must be nonempty")
    if not config.control_bound > 0.0:
        raise ValueError(f"control_bound must be > 0, got {config.control_bound}")
    c = config.control_bound
    if any(abs(q) > c + 1e-12 for q in config.q_candidates):
        raise ValueError(f"q_candidates must lie in [-{c}, {c}], got {config.q_candidates}")
    if config.policy_max_iters < 1:
        raise ValueError("policy_max_iters must be >= 1")
    if not config.policy_tol >= 0.0:
        raise ValueError("policy_tol must be >= 0")
    if config.jump_quadrature_nodes < 8:
        raise ValueError(f"jump_quadrature_nodes must be >= 8, got {config.jump_quadrature_nodes}")
    if config.drift_variant not in DRIFT_VARIANTS:
        raise ValueError(f"drift_variant must be one of {DRIFT_VARIANTS}")
    if config.obstacle not in ("projection", "none"):
        raise ValueError(f"obstacle must be 'projection' or 'none', got {config.obstacle!r}")
    if config.boundary_left != "dirichlet_zero":
        raise ValueError("boundary_left: only 'dirichlet_zero' is supported")
    if config.boundary_right != "neumann_slope_one":
        raise ValueError("boundary_right: only 'neumann_slope_one' is supported")


@dataclass
class Solution:
    """Backward-in-time value surface and the policies that produced it.

    u, q_star and exercise have shape (num_time + 1, num_space + 1); row k
    lives at time k * maturity / num_time, the last row is the payoff.
    """

    u: np.ndarray
    q_star: np.ndarray
    exercise: np.ndarray
    grid: Grid
    maturity: float
    model_hash: str
    drift_variant: str
    max_policy_iters_used: int


def _cell_average(u: np.ndarray) -> np.ndarray:
    # Exact cell average of the piecewise-linear interpolant:
    # (u[i-1] + 6 u[i] + u[i+1]) / 8 over [x_i - h/2, x_i + h/2].
    # Positive weights, exact on affine data, preserves convexity.
    s = u.copy()
    s[1:-1] = (u[:-2] + 6.0 * u[1:-1] + u[2:]) / 8.0
    return s


def terminal_condition(grid: Grid) -> np.ndarray:
    """Payoff row max(x, 0); exact, the kink sits on the zero node."""
    return np.maximum(grid.space_nodes(), 0.0)


class _JumpOperator:
    """Quadrature gather of u against the tilted jump law, per control value.

    For control q the post-jump state is x + (q-x)(1-e^{-z}); destinations
    are affine in x, so each quadrature node contributes a two-diagonal
    interpolation stencil.  gather(q) returns (sparse matrix M, constant
    vector d) with  M u + d ~ integral of u(x + displacement) nu_tilde(dz),
    using u = 0 below the grid and slope-one extrapolation above it.

    mass and kappa are the quadrature sums of 1 and (1 - e^{-z}); the
    solver uses these (not the closed forms) so that affine rows evolve
    exactly.
    """

    def __init__(self, grid: Grid, tilted: TiltedJumps, n_nodes: int):
        self.grid = grid
        z, w = tilted.quadrature(n_nodes)
        self.z = z
        self.w = w
        self.shrink = np.exp(-z)        # factor on (x - q)
        self.move = -np.expm1(-z)       # 1 - e^{-z}
        self.mass = float(w.sum())
        self.kappa = float((w * self.move).sum())
        self._cache: dict = {}

    def gather(self, q: float):
        key = float(q)
        if key not in self._cache:
            self._cache[key] = self._build(key)
        return self._cache[key]

    def _build(self, q: float):
        grid = self.grid
        nodes = grid.space_nodes()
        n = grid.num_space
        h = grid.dx
        size = n + 1
        rows_acc, cols_acc, vals_acc = [], [], []
        d = np.zeros(size)
        base = np.arange(size)
        for zk, wk, shrink, move in zip(self.z, self.w, self.shrink, self.move):
            dest = nodes * shrink + q * move
            inside = (dest >= grid.x_min) & (dest <= grid.x_max)
            above = dest > grid.x_max
            # below the grid: u = 0, no stencil entry
            if np.any(inside):
                j = np.clip(((dest[inside] - grid.x_min) / h).astype(int), 0, n - 1)
                frac = (dest[inside] - nodes[j]) / h
                r = base[inside]
                rows_acc.extend((r, r))
                cols_acc.extend((j, j + 1))
                vals_acc.extend((wk * (1.0 - frac), wk * frac))
            if np.any(above):
                r = base[above]
                rows_acc.append(r)
                cols_acc.append(np.full(r.shape, n))
                vals_acc.append(np.full(r.shape, wk))
                d[above] += wk * (dest[above] - grid.x_max)
        if rows_acc:
            rows = np.concatenate(rows_acc)
            cols = np.concatenate(cols_acc)
            vals = np.concatenate(vals_acc)
        else:
            rows = cols = np.array([], dtype=int)
            vals = np.array([])
        mat = csr_matrix((vals, (rows, cols)), shape=(size, size))
        return mat, d


def jump_integral(u_row: np.ndarray, grid: Grid, tilted: TiltedJumps, q: float,
                  node: Optional[int] = None, n_nodes: int = 128):
    """Compensated jump integral of a value row at control q.

    Quadrature of u(x + displacement) - u(x) - displacement * u_x against
    the tilted law, with u_x the central difference (one-sided at the two
    boundary nodes).  Displaced evaluations falling off the grid continue
    the row affinely from its end slopes, so affine rows annihilate to
    rounding error on any window.  Returns the full row, or a scalar when
    `node` is given.
    """
    u_row = np.asarray(u_row, dtype=float)
    x = grid.space_nodes()
    h = grid.dx
    z, w = tilted.quadrature(n_nodes)
    mass = float(w.sum())
    move = -np.expm1(-z)                       # 1 - e^{-z}
    kappa = float((w * move).sum())
    # dest[k, i] = x_i + (q - x_i) * move_k, evaluated against the row
    dest = x[None, :] + (q - x[None, :]) * move[:, None]
    gathered = np.interp(dest, x, u_row)
    left_slope = (u_row[1] - u_row[0]) / h
    right_slope = (u_row[-1] - u_row[-2]) / h
    below = dest < grid.x_min
    above = dest > grid.x_max
    gathered[below] = u_row[0] + left_slope * (dest[below] - grid.x_min)
    gathered[above] = u_row[-1] + right_slope * (dest[above] - grid.x_max)
    total = w @ gathered
    slope = np.gradient(u_row, h)
    out = total - mass * u_row - kappa * (q - x) * slope
    return out if node is None else float(out[node])


class _Stepper:
    """Shared machinery for one backward solve: candidate tables, matrices."""

    def __init__(self, model: MarketModel, grid: Grid, config: SolverConfig):
        self.model = model
        self.grid = grid
        self.config = config
        self.tilted = tilt(model.jumps)
        self.jump_op = _JumpOperator(grid, self.tilted, config.jump_quadrature_nodes)
        self.x = grid.space_nodes()
        self.h = grid.dx
        self.dt = model.maturity / grid.num_time
        self.discount = model.dividend_yield
        self.mass = self.jump_op.mass
        b0 = drift_coefficient(model.dividend_yield, config.drift_variant)
        # ties toward the largest candidate: descending order, argmax keeps first
        self.cands = tuple(sorted(dict.fromkeys(float(q) for q in config.q_candidates),
                                  reverse=True))
        vol2 = model.volatility**2
        self.diffusion = np.stack([0.5 * vol2 * (q - self.x) ** 2 for q in self.cands])
        # total first-order coefficient: drift plus folded jump compensation
        self.drift = np.stack([-(b0 + self.jump_op.kappa) * (q - self.x)
                               for q in self.cands])
        self.gathers = [self.jump_op.gather(q) for q in self.cands]
        if config.cfl_guard and self.dt * (self.mass + self.discount) > CFL_LIMIT:
            raise ValueError(
                f"step-size guard violated: dt*(lambda_tilde + dividend_yield) = "
                f"{self.dt * (self.mass + self.discount):.4g} > {CFL_LIMIT}; "
                f"increase num_time"
            )

    def objective_rows(self, u: np.ndarray):
        """Per-candidate generator rows and gather rows (edge columns unused)."""
        h = self.h
        n = self.grid.num_space
        d2 = np.zeros_like(u)
        fwd = np.zeros_like(u)
        bwd = np.zeros_like(u)
        d2[1:n] = (u[2:] - 2.0 * u[1:n] + u[:-2]) / h**2
        fwd[:n] = (u[1:] - u[:n]) / h
        bwd[1:] = (u[1:] - u[:n]) / h
        rows = np.empty((len(self.cands), n + 1))
        gathers = np.empty((len(self.cands), n + 1))
        for c, (mat, d) in enumerate(self.gathers):
            drift = self.drift[c]
            upwinded = np.where(drift >= 0.0, fwd, bwd)
            gathers[c] = mat @ u + d
            rows[c] = (self.diffusion[c] * d2 + drift * upwinded
                       + gathers[c] - (self.mass + self.discount) * u)
        return rows, gathers

    def select(self, u: np.ndarray):
        """Pointwise argmax over candidates; deterministic at ties."""
        rows, gathers = self.objective_rows(u)
        pick = np.argmax(rows, axis=0)
        pick[0] = pick[1]
        pick[-1] = pick[-2]
        return pick, gathers

    def step(self, u_next: np.ndarray):
        """One backward step: policy iteration, then obstacle projection."""
        n = self.grid.num_space
        h = self.h
        dt = self.dt
        u_lag = u_next
        pick, gathers = self.select(u_lag)
        iters_used = self.config.policy_max_iters
        for it in range(1, self.config.policy_max_iters + 1):
            diffusion = np.take_along_axis(self.diffusion, pick[None, :], axis=0)[0]
            drift = np.take_along_axis(self.drift, pick[None, :], axis=0)[0]
            gather = np.take_along_axis(gathers, pick[None, :], axis=0)[0]
            a_diff = diffusion / h**2
            up = np.maximum(drift, 0.0) / h
            dn = np.maximum(-drift, 0.0) / h
            lower = -dt * (a_diff + dn)
            diag = 1.0 + dt * (self.discount + self.mass + 2.0 * a_diff + up + dn)
            upper = -dt * (a_diff + up)
            rhs = u_next + dt * gather
            # boundary rows: u = 0 on the left, unit slope on the right
            diag[0] = 1.0
            upper[0] = 0.0
            lower[0] = 0.0
            rhs[0] = 0.0
            diag[n] = 1.0
            lower[n] = -1.0
            upper[n] = 0.0
            rhs[n] = h
            # weak dominance on the Neumann row, strict elsewhere by construction
            if np.any(np.abs(diag) < np.abs(lower) + np.abs(upper) - 1e-12):
                raise RuntimeError("time-step matrix lost diagonal dominance")
            ab = np.zeros((3, n + 1))
            ab[0, 1:] = upper[:-1]
            ab[1, :] = diag
            ab[2, :-1] = lower[1:]
            u_new = solve_banded((1, 1), ab, rhs)
            change = float(np.max(np.abs(u_new - u_lag)))
            u_lag = u_new
            if change <= self.config.policy_tol:
                iters_used = it
                break
            pick, gathers = self.select(u_lag)
        if self.config.obstacle == "projection":
            u_lag = np.maximum(u_lag, self.x)
        q_row = np.asarray(self.cands)[pick]
        return u_lag, q_row, iters_used


def generator_apply(u_row: np.ndarray, grid: Grid, model: MarketModel, q: float,
                    drift_variant: str = "with_a", n_nodes: int = 128) -> np.ndarray:
    """Discrete generator row minus the discount term, at a fixed control.

    0.5 vol^2 (q-x)^2 D2 u - b (q-x) Dx u + jump_integral - a u, with D2
    the central second difference and Dx upwinded by the sign of the drift
    -b(q-x).  The jump compensation inside jump_integral uses the central
    difference.  Defined on interior nodes; the two edge entries are NaN.
    """
    u_row = np.asarray(u_row, dtype=float)
    x = grid.space_nodes()
    h = grid.dx
    n = grid.num_space
    b0 = drift_coefficient(model.dividend_yield, drift_variant)
    drift = -b0 * (q - x)
    d2 = np.full_like(u_row, np.nan)
    d2[1:n] = (u_row[2:] - 2.0 * u_row[1:n] + u_row[:-2]) / h**2
    fwd = np.full_like(u_row, np.nan)
    bwd = np.full_like(u_row, np.nan)
    fwd[:n] = (u_row[1:] - u_row[:n]) / h
    bwd[1:] = (u_row[1:] - u_row[:n]) / h
    upwinded = np.where(drift >= 0.0, fwd, bwd)
    jump = jump_integral(u_row, grid, tilt(model.jumps), q, n_nodes=n_nodes)
    out = (0.5 * model.volatility**2 * (q - x) ** 2 * d2
           + drift * upwinded + jump - model.dividend_yield * u_row)
    out[0] = np.nan
    out[n] = np.nan
    return out


def optimize_control(u_row: np.ndarray, grid: Grid, model: MarketModel,
                     config: SolverConfig = SolverConfig()):
    """Pointwise maximizing control among config.q_candidates.

    Returns (q_row, objective_row).  Ties go to the largest candidate; the
    edge nodes copy their interior neighbors (the generator is not defined
    there).
    """
    cands = tuple(sorted(dict.fromkeys(float(q) for q in config.q_candidates),
                         reverse=True))
    rows = np.stack([
        generator_apply(u_row, grid, model, q, config.drift_variant,
                        config.jump_quadrature_nodes)
        for q in cands
    ])
    pick = np.argmax(rows[:, 1:-1], axis=0)
    pick = np.concatenate([pick[:1], pick, pick[-1:]])
    q_row = np.asarray(cands)[pick]
    best = np.take_along_axis(rows, pick[None, :], axis=0)[0]
    return q_row, best


def time_step(u_next: np.ndarray, grid: Grid, model: MarketModel,
              config: SolverConfig = SolverConfig()):
    """One backward step (policy iteration + projection); returns (u, q_row)."""
    validate_config(config)
    stepper = _Stepper(model, grid, config)
    u, q_row, _ = stepper.step(np.asarray(u_next, dtype=float))
    return u, q_row


def _solve(model: MarketModel, grid: Grid, config: SolverConfig,
           terminal_row: Optional[np.ndarray] = None) -> Solution:
    validate_model(model).raise_if_invalid()
    validate_config(config)
    stepper = _Stepper(model, grid, config)
    nt, nx = grid.num_time, grid.num_space
    u = np.empty((nt + 1, nx + 1))
    q_star = np.empty((nt + 1, nx + 1))
    if terminal_row is None:
        u[nt] = terminal_condition(grid)
    else:
        terminal_row = np.asarray(terminal_row, dtype=float)
        if terminal_row.shape != (nx + 1,):
            raise ValueError(
                f"terminal_row must have shape ({nx + 1},), got {terminal_row.shape}"
            )
        u[nt] = terminal_row
    q_star[nt] = np.asarray(stepper.cands)[stepper.select(u[nt])[0]]
    worst = 0
    for k in range(nt - 1, -1, -1):
        # The first backward step reads a cell average of the payoff
        # (exact away from the kink): plain node sampling of kinked data
        # destroys clean grid convergence at the kink node.  The stored
        # terminal row stays the exact payoff.
        prev = _cell_average(u[k + 1]) if k == nt - 1 else u[k + 1]
        u[k], q_star[k], iters = stepper.step(prev)
        worst = max(worst, iters)
    exercise = (u - grid.space_nodes()[None, :]) <= config.exercise_tol
    return Solution(u=u, q_star=q_star, exercise=exercise, grid=grid,
                    maturity=model.maturity, model_hash=model_fingerprint(model),
                    drift_variant=config.drift_variant,
                    max_policy_iters_used=worst)


def solve(model: MarketModel, grid: Grid, config: SolverConfig = SolverConfig(),
          terminal_row: Optional[np.ndarray] = None) -> Solution:
    """Solve the obstacle problem backward over the whole grid.

    `terminal_row` overrides the payoff as terminal data; a diagnostic hook
    for scheme-monotonicity checks.  The exercise flags always compare
    against the standard payoff.
    """
    return _solve(model, grid, config, terminal_row)


def solve_european(model: MarketModel, grid: Grid,
                   config: SolverConfig = SolverConfig()) -> Solution:
    """Same stepping with the obstacle projection disabled."""
    return _solve(model, grid, replace(config, obstacle="none"))


def price_at(solution: Solution, t: float, spot: float, account: float) -> float:
    """Reassembled price V(t, S, X) = S * u(t, X/S), bilinear in (t, x).

    Raises when t is outside [0, maturity] or X/S is off the grid.
    """
    if not spot > 0.0:
        raise ValueError(f"spot must be > 0, got {spot}")
    eps_t = 1e-12 * max(1.0, solution.maturity)
    if not -eps_t <= t <= solution.maturity + eps_t:
        raise ValueError(f"t={t} outside [0, {solution.maturity}]")
    t = min(max(t, 0.0), solution.maturity)
    ratio = account / spot
    grid = solution.grid
    if not grid.x_min <= ratio <= grid.x_max:
        raise ValueError(
            f"account/spot = {ratio:.6g} outside the solved window "
            f"[{grid.x_min}, {grid.x_max}]"
        )
    dt = solution.maturity / grid.num_time
    k = min(int(t / dt), grid.num_time - 1)
    wt = t / dt - k
    h = grid.dx
    j = min(int((ratio - grid.x_min) / h), grid.num_space - 1)
    wx = (ratio - (grid.x_min + j * h)) / h
    u = solution.u
    lo = u[k, j] * (1.0 - wx) + u[k, j + 1] * wx
    hi = u[k + 1, j] * (1.0 - wx) + u[k + 1, j + 1] * wx
    return spot * (lo * (1.0 - wt) + hi * wt)


def surface_csv(solution: Solution) -> str:
    """Value surface as CSV text: t,x,u,q_star,exercise, time-major, LF lines."""
    lines = ["t,x,u,q_star,exercise"]
    times = solution.grid.time_nodes(solution.maturity)
    xs = solution.grid.space_nodes()
    for k, t in enumerate(times):
        for j, x in enumerate(xs):
            lines.append(
                f"{t:.17g},{x:.17g},{solution.u[k, j]:.17g},"
                f"{solution.q_star[k, j]:.17g},{int(solution.exercise[k, j])}"
            )
    return "\n".join(lines) + "\n"
