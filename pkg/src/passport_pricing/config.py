"""Run configuration: strict TOML ingestion for the batch front end.

One file describes a run: a model block, a grid block, optional solver
overrides, a Monte Carlo block, and a query block.  Unknown keys anywhere
are rejected outright; silent typos in model parameters are the failure
mode this layer exists to stop.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .market import (
    KouJumps,
    MarketModel,
    MertonJumps,
    TabulatedJumps,
    validate_model,
)
from .solver import Grid, SolverConfig, build_grid, validate_config

__all__ = ["ConfigError", "McConfig", "QueryConfig", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Anything wrong with a run configuration file."""


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20_000
    n_steps: int = 200
    seed: int = 20260822
    antithetic: bool = False


@dataclass(frozen=True)
class QueryConfig:
    t: float = 0.0
    spot: Optional[float] = None
    account: Optional[float] = None
    ratios: Optional[tuple] = None


@dataclass(frozen=True)
class RunConfig:
    model: MarketModel
    grid: Grid
    solver: SolverConfig
    mc: McConfig
    query: Optional[QueryConfig]


_JUMP_FAMILIES = {
    "merton": MertonJumps,
    "kou": KouJumps,
    "tabulated": TabulatedJumps,
}

_MODEL_KEYS = {"rate", "dividend_yield", "volatility", "maturity", "jumps"}
_GRID_KEYS = {"x_min", "x_max", "num_space", "num_time"}
_TOP_KEYS = {"model", "grid", "solver", "mc", "query"}


def _reject_unknown(section: str, got: dict, allowed: set):
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(
            f"[{section}] unknown key(s): {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def _build_jumps(raw: dict):
    if "family" not in raw:
        raise ConfigError("[model.jumps] missing required key: family")
    family = raw["family"]
    cls = _JUMP_FAMILIES.get(family)
    if cls is None:
        raise ConfigError(
            f"[model.jumps] unknown family {family!r}; "
            f"allowed: {', '.join(sorted(_JUMP_FAMILIES))}"
        )
    names = {f.name for f in fields(cls)}
    params = {k: v for k, v in raw.items() if k != "family"}
    _reject_unknown(f"model.jumps ({family})", params, names)
    missing = sorted(names - set(params))
    if missing:
        raise ConfigError(f"[model.jumps] missing key(s): {', '.join(missing)}")
    if cls is TabulatedJumps:
        params = {"sizes": tuple(params["sizes"]), "weights": tuple(params["weights"])}
    return cls(**params)


def _section(data: dict, name: str, required: bool) -> Optional[dict]:
    block = data.get(name)
    if block is None:
        if required:
            raise ConfigError(f"missing required section [{name}]")
        return None
    if not isinstance(block, dict):
        raise ConfigError(f"[{name}] must be a table")
    return block


def parse_config(data: dict) -> RunConfig:
    """Build a validated RunConfig from parsed TOML data."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table")
    _reject_unknown("top level", data, _TOP_KEYS)

    raw_model = _section(data, "model", required=True)
    _reject_unknown("model", raw_model, _MODEL_KEYS)
    jumps = None
    if "jumps" in raw_model:
        if not isinstance(raw_model["jumps"], dict):
            raise ConfigError("[model.jumps] must be a table")
        jumps = _build_jumps(raw_model["jumps"])
    try:
        model = MarketModel(
            rate=float(raw_model.get("rate", 0.0)),
            dividend_yield=float(raw_model.get("dividend_yield", 0.0)),
            volatility=float(raw_model.get("volatility", 0.0)),
            maturity=float(raw_model.get("maturity", 1.0)),
            jumps=jumps,
        )
        validate_model(model).raise_if_invalid()
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[model] {err}") from err

    raw_grid = _section(data, "grid", required=True)
    _reject_unknown("grid", raw_grid, _GRID_KEYS)
    try:
        grid = build_grid(
            x_min=float(raw_grid.get("x_min", -4.0)),
            x_max=float(raw_grid.get("x_max", 4.0)),
            num_space=int(raw_grid.get("num_space", 400)),
            num_time=int(raw_grid.get("num_time", 400)),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[grid] {err}") from err

    raw_solver = _section(data, "solver", required=False) or {}
    names = {f.name for f in fields(SolverConfig)}
    _reject_unknown("solver", raw_solver, names)
    if "q_candidates" in raw_solver:
        raw_solver = dict(raw_solver, q_candidates=tuple(raw_solver["q_candidates"]))
    try:
        solver = SolverConfig(**raw_solver)
        validate_config(solver)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[solver] {err}") from err

    raw_mc = _section(data, "mc", required=False) or {}
    _reject_unknown("mc", raw_mc, {f.name for f in fields(McConfig)})
    try:
        mc = McConfig(**{k: (bool(v) if k == "antithetic" else int(v))
                         for k, v in raw_mc.items()})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[mc] {err}") from err
    if mc.n_paths < 100:
        raise ConfigError(f"[mc] n_paths must be >= 100, got {mc.n_paths}")
    if mc.n_steps < 1:
        raise ConfigError(f"[mc] n_steps must be >= 1, got {mc.n_steps}")
    if mc.seed < 0:
        raise ConfigError(f"[mc] seed must be a nonnegative integer, got {mc.seed}")

    raw_query = _section(data, "query", required=False)
    query = None
    if raw_query is not None:
        _reject_unknown("query", raw_query, {f.name for f in fields(QueryConfig)})
        has_point = "spot" in raw_query or "account" in raw_query
        has_list = "ratios" in raw_query
        if has_point and has_list:
            raise ConfigError("[query] give either spot/account or ratios, not both")
        if has_point and not ("spot" in raw_query and "account" in raw_query):
            raise ConfigError("[query] spot and account must come together")
        if not has_point and not has_list:
            raise ConfigError("[query] needs spot/account or ratios")
        query = QueryConfig(
            t=float(raw_query.get("t", 0.0)),
            spot=float(raw_query["spot"]) if has_point else None,
            account=float(raw_query["account"]) if has_point else None,
            ratios=tuple(float(r) for r in raw_query["ratios"]) if has_list else None,
        )
        if query.spot is not None and not query.spot > 0.0:
            raise ConfigError(f"[query] spot must be > 0, got {query.spot}")
        if not 0.0 <= query.t <= model.maturity:
            raise ConfigError(
                f"[query] t must lie in [0, {model.maturity}], got {query.t}")
        ratios = query.ratios if query.ratios is not None \
            else (query.account / query.spot,)
        for ratio in ratios:
            if not grid.x_min <= ratio <= grid.x_max:
                raise ConfigError(
                    f"[query] ratio {ratio:g} is outside the grid window "
                    f"[{grid.x_min:g}, {grid.x_max:g}]")

    return RunConfig(model=model, grid=grid, solver=solver, mc=mc, query=query)


def load_config(path: str) -> RunConfig:
    """Parse and validate a TOML run configuration file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config {path} is not valid TOML: {err}") from err
    return parse_config(data)
