"""Batch front end: price, surface, verify, sweep.

``price`` prints one reassembled value as JSON, ``surface`` exports the
full grid as CSV, ``verify`` runs every property report plus a Monte
Carlo cross-check and aggregates them into one exit code, ``sweep``
prices a one-parameter family of configs, optionally across threads.

Exit codes: 0 success, 1 verify found failures, 2 invalid configuration,
3 numerical failure during a run.  Payload goes to standard output and,
with --out, to a file; diagnostics go to standard error only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .market import validate_model
from .montecarlo import PolicyTable, estimate_price
from .properties import (
    PropertyReport,
    bang_bang_report,
    comparison_test,
    convergence_report,
    convexity_report,
    regularity_report,
)
from .solver import build_grid, price_at, solve, surface_csv

__all__ = ["main"]


def _grid_fingerprint(grid) -> str:
    payload = [grid.x_min, grid.x_max, grid.num_space, grid.num_time]
    return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:12]


def _write_out(out_dir: str, name: str, text: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _require_point_query(run: RunConfig, who: str):
    q = run.query
    if q is None or q.spot is None:
        raise ConfigError(f"{who} needs a [query] block with t, spot and account")
    return q


def _cmd_price(run: RunConfig, args) -> int:
    q = _require_point_query(run, "price")
    solution = solve(run.model, run.grid, run.solver)
    value = price_at(solution, q.t, q.spot, q.account)
    payload = {
        "V": value,
        "u": value / q.spot,
        "t": q.t,
        "S": q.spot,
        "X": q.account,
        "grid_fingerprint": _grid_fingerprint(run.grid),
    }
    text = json.dumps(payload, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_out(args.out, "price.json", text)
    return 0


def _cmd_surface(run: RunConfig, args) -> int:
    solution = solve(run.model, run.grid, run.solver)
    text = surface_csv(solution)
    if args.out:
        _write_out(args.out, "surface.csv", text)
    else:
        sys.stdout.write(text)
    return 0


def _mc_crosscheck(run: RunConfig, solution) -> PropertyReport:
    q = run.query
    t0 = q.t if q is not None else 0.0
    if q is not None and q.ratios is not None:
        points = list(q.ratios)
    elif q is not None and q.spot is not None:
        points = [q.account / q.spot]
    else:
        points = [0.0]
    policy = PolicyTable.from_solution(solution)
    rows = []
    worst = -math.inf
    for i, l0 in enumerate(points):
        est = estimate_price(run.model, policy, t0, float(l0),
                             run.mc.n_paths, run.mc.n_steps, run.mc.seed + i,
                             antithetic=run.mc.antithetic)
        # spot 1 turns the reassembled price back into the reduced value
        pde = price_at(solution, t0, 1.0, float(l0))
        bound = max(2.0 * est["ci95"], 5e-3)
        gap = abs(pde - est["mean"])
        worst = max(worst, gap / bound)
        rows.append({"ratio": float(l0), "pde": pde, "mc_mean": est["mean"],
                     "ci95": est["ci95"], "gap": gap, "bound": bound})
    stat = float(worst)
    return PropertyReport(
        name="mc_crosscheck", passed=bool(stat <= 1.0), statistic=stat,
        tolerance=1.0,
        artifacts={"points": rows, "n_paths": run.mc.n_paths,
                   "n_steps": run.mc.n_steps, "seed": run.mc.seed},
    )


def _ode_oracle(run: RunConfig, solution) -> PropertyReport:
    # deterministic dynamics: holding the -1 control to maturity is optimal,
    # giving (1 + x) - e^{-a (T - t)} wherever the terminal ratio stays positive
    a, horizon = run.model.dividend_yield, run.model.maturity
    probe = 0.5 if run.grid.x_max >= 0.5 else 0.0
    ode = (1.0 + probe) - math.exp(-a * horizon)
    pde = price_at(solution, 0.0, 1.0, probe)
    gap = abs(pde - ode)
    return PropertyReport(
        name="ode_oracle", passed=bool(gap <= 2e-3), statistic=gap,
        tolerance=2e-3, artifacts={"probe": probe, "ode": ode, "pde": pde},
    )


def _snap_probes(coarse, raw=(-1.0, 0.0, 1.0)) -> tuple:
    nodes = coarse.space_nodes()
    snapped = set()
    for p in raw:
        i = coarse.zero_index + int(round(p / coarse.dx))
        snapped.add(float(nodes[min(max(i, 0), coarse.num_space)]))
    return tuple(sorted(snapped))


def _cmd_verify(run: RunConfig, args) -> int:
    model, grid, sconf = run.model, run.grid, run.solver
    solution = solve(model, grid, sconf)
    reports = []

    payoff = np.maximum(grid.space_nodes(), 0.0)
    gap = float(np.abs(solution.u[-1] - payoff).max())
    reports.append(PropertyReport(
        name="terminal_payoff", passed=bool(gap <= 0.0), statistic=gap,
        tolerance=0.0, artifacts={"num_space": grid.num_space}))

    reports.append(comparison_test(model, grid, sconf, payoff, payoff + 0.05))
    reports.append(convexity_report(solution))
    reports.append(bang_bang_report(solution, model, sconf))

    half = build_grid(grid.x_min, grid.x_max,
                      max(grid.num_space // 2, 4), max(grid.num_time // 2, 2))
    reports.append(regularity_report(solve(model, half, sconf), refined=solution))

    n0 = max(grid.num_space // 4, 8)
    k0 = max(grid.num_time // 4, 2)
    sequence = [build_grid(grid.x_min, grid.x_max, n0 * m, k0 * m) for m in (1, 2, 4)]
    # probes snapped onto the coarsest lattice stay nodes of every refinement
    reports.append(convergence_report(model, sconf, sequence,
                                      probes=_snap_probes(sequence[0])))

    reports.append(_mc_crosscheck(run, solution))
    if model.volatility == 0.0 and model.jumps is None:
        reports.append(_ode_oracle(run, solution))

    text = "".join(r.to_json() + "\n" for r in reports)
    sys.stdout.write(text)
    if args.out:
        _write_out(args.out, "verify.jsonl", text)

    n_pass = sum(r.passed for r in reports)
    print(f"verify: {n_pass}/{len(reports)} checks passed", file=sys.stderr)
    for r in reports:
        if not r.passed:
            print(f"verify: FAIL {r.name}: statistic {r.statistic:.6g} "
                  f"exceeds tolerance {r.tolerance:.6g}", file=sys.stderr)
    return 0 if n_pass == len(reports) else 1


_SWEEPABLE_MODEL = ("rate", "dividend_yield", "volatility", "maturity")
_SWEEPABLE_GRID = ("x_min", "x_max", "num_space", "num_time")


def _parse_vary(spec: str):
    key, sep, rng = spec.partition("=")
    parts = rng.split(":")
    if not sep or not key or len(parts) != 3:
        raise ConfigError(f"--vary must look like key=lo:hi:n, got {spec!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--vary must look like key=lo:hi:n, got {spec!r}") from None
    if n < 1:
        raise ConfigError(f"--vary needs at least 1 point, got {n}")
    return key, [float(v) for v in np.linspace(lo, hi, n)]


def _revalidated(run: RunConfig, model) -> RunConfig:
    report = validate_model(model)
    if not report.ok:
        raise ConfigError("--vary produced an invalid model: "
                          + "; ".join(report.violations))
    return replace(run, model=model)


def _apply_vary(run: RunConfig, key: str, value: float) -> RunConfig:
    parts = key.split(".")
    if parts[0] == "model" and len(parts) == 2 and parts[1] in _SWEEPABLE_MODEL:
        return _revalidated(run, replace(run.model, **{parts[1]: float(value)}))
    if parts[:2] == ["model", "jumps"] and len(parts) == 3:
        jumps = run.model.jumps
        if jumps is None:
            raise ConfigError("--vary targets model.jumps but the model has none")
        names = {f.name for f in dataclass_fields(type(jumps))}
        field = parts[2]
        if field not in names or not isinstance(getattr(jumps, field), float):
            raise ConfigError(f"cannot sweep model.jumps.{field}")
        return _revalidated(run, replace(run.model,
                                         jumps=replace(jumps, **{field: float(value)})))
    if parts[0] == "grid" and len(parts) == 2 and parts[1] in _SWEEPABLE_GRID:
        kw = {name: getattr(run.grid, name) for name in _SWEEPABLE_GRID}
        kw[parts[1]] = int(round(value)) if parts[1].startswith("num_") else float(value)
        try:
            return replace(run, grid=build_grid(**kw))
        except ValueError as err:
            raise ConfigError(f"--vary grid: {err}") from err
    raise ConfigError(
        f"--vary key {key!r} is not sweepable; use model.<param>, "
        "model.jumps.<param> or grid.<param>")


def _cmd_sweep(run: RunConfig, args) -> int:
    key, values = _parse_vary(args.vary)
    _require_point_query(run, "sweep")
    points = [_apply_vary(run, key, v) for v in values]

    def price_point(point: RunConfig) -> float:
        sol = solve(point.model, point.grid, point.solver)
        return price_at(sol, point.query.t, point.query.spot, point.query.account)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            prices = list(pool.map(price_point, points))
    else:
        prices = [price_point(p) for p in points]

    lines = [f"{key},V"]
    lines += [f"{v:.17g},{p:.17g}" for v, p in zip(values, prices)]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_out(args.out, "sweep.csv", text)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_DISPATCH = {
    "price": _cmd_price,
    "surface": _cmd_surface,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="passport-pricer",
        description="Passport option pricing runs driven by a TOML config.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "price": "value at one query point, printed as JSON",
        "surface": "full value surface as CSV",
        "verify": "property reports and cross-checks as JSON lines",
        "sweep": "prices over a one-parameter family, as CSV",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="directory to write output files into")
        p.add_argument("--seed", type=int, help="override mc.seed")
        if name == "sweep":
            p.add_argument("--vary", required=True, metavar="KEY=LO:HI:N",
                           help="parameter grid, e.g. model.volatility=0.1:0.4:7")
            p.add_argument("--threads", type=int, default=1,
                           help="solve sweep points in parallel")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
            run = replace(run, mc=replace(run.mc, seed=args.seed))
        return _DISPATCH[args.command](run, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
