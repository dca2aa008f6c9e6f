"""Path oracle checks: closed forms, measure identities, solver agreement.

The deterministic examples come from the no-noise ordinary differential
equation (gap to the control grows at the yield rate).  The stochastic
checks pin the compensated dynamics: zero-yield paths are martingales, the
regression slope of increments on the gap recovers the yield, and playing
back the solver's policy reprices the grid value within Monte Carlo error.
All runs are seeded; every asserted number is reproducible.
"""

import json
import math

import numpy as np
import pytest

from passport_pricing.market import MarketModel, MertonJumps
from passport_pricing.montecarlo import (
    PolicyTable,
    batch_summary,
    estimate_price,
    ls_stop_estimate,
    simulate_path,
)
from passport_pricing.solver import build_grid, solve

MERTON_MODEL = MarketModel(
    rate=0.05, dividend_yield=0.02, volatility=0.2, maturity=1.0,
    jumps=MertonJumps(intensity=0.5, mean=0.0, std=0.1),
)
FLAT_MODEL = MarketModel(rate=0.05, dividend_yield=0.02, volatility=0.0, maturity=1.0)
ODE_VALUE = 1.5 - math.exp(-0.02)          # no-noise value at l0 = 0.5


@pytest.fixture(scope="module")
def merton_solution():
    grid = build_grid(x_min=-4.0, x_max=4.0, num_space=800, num_time=800)
    return solve(MERTON_MODEL, grid)


@pytest.fixture(scope="module")
def solver_policy(merton_solution):
    return PolicyTable.from_solution(merton_solution)


class TestPolicyTable:
    def test_fixed_is_constant(self):
        p = PolicyTable.fixed(-0.5)
        np.testing.assert_array_equal(p.control(0.3, np.array([-2.0, 0.0, 3.0])),
                                      [-0.5, -0.5, -0.5])
        assert not p.should_stop(0.3, np.array([1.0])).any()

    def test_sign_switch_opposes_the_ratio(self):
        p = PolicyTable.sign_switch()
        np.testing.assert_array_equal(p.control(0.0, np.array([-1.0, 0.0, 2.0])),
                                      [1.0, 1.0, -1.0])

    def test_immediate_always_stops(self):
        p = PolicyTable.immediate()
        assert p.should_stop(0.0, np.array([-1.0, 1.0])).all()

    def test_table_lookup_is_nearest_node(self, merton_solution, solver_policy):
        g = merton_solution.grid
        x = g.space_nodes()
        i = g.zero_index + 37
        # dead on a node, and just off it in both directions
        for probe in (x[i], x[i] + 0.4 * g.dx, x[i] - 0.4 * g.dx):
            got = solver_policy.control(0.0, np.array([probe]))
            assert got[0] == merton_solution.q_star[0, i]

    def test_table_lookup_clips_off_grid(self, solver_policy, merton_solution):
        g = merton_solution.grid
        got = solver_policy.control(0.0, np.array([g.x_min - 5.0, g.x_max + 5.0]))
        assert got[0] == merton_solution.q_star[0, 0]
        assert got[1] == merton_solution.q_star[0, -1]

    def test_table_stops_at_terminal_payoff_region(self, solver_policy, merton_solution):
        t = merton_solution.maturity
        stop = solver_policy.should_stop(t, np.array([-0.5, 0.5]))
        np.testing.assert_array_equal(stop, [False, True])


class TestSimulatePath:
    def test_no_noise_path_solves_the_ode(self):
        # q = -1: the gap l0 - q grows at the yield rate
        path = simulate_path(FLAT_MODEL, PolicyTable.fixed(-1.0), 0.0, 0.5, 500, 7)
        exact = 1.5 * math.exp(0.02) - 1.0
        assert abs(path[-1] - exact) < 1e-5
        assert len(path) == 501

    def test_path_frozen_at_the_control(self):
        # L = q kills drift, diffusion and jump displacement alike
        path = simulate_path(MERTON_MODEL, PolicyTable.fixed(0.5), 0.0, 0.5, 100, 7)
        assert np.all(path == 0.5)

    def test_replay_is_identical(self):
        a = simulate_path(MERTON_MODEL, PolicyTable.sign_switch(), 0.0, 0.0, 200, 42)
        b = simulate_path(MERTON_MODEL, PolicyTable.sign_switch(), 0.0, 0.0, 200, 42)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_the_path(self):
        a = simulate_path(MERTON_MODEL, PolicyTable.sign_switch(), 0.0, 0.0, 200, 42)
        b = simulate_path(MERTON_MODEL, PolicyTable.sign_switch(), 0.0, 0.0, 200, 43)
        assert not np.array_equal(a, b)

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            simulate_path(FLAT_MODEL, PolicyTable.fixed(1.0), 0.0, 0.0, 0, 1)

    def test_drift_regression_recovers_the_yield(self):
        # increments over gap: slope estimates -a; the 1/sqrt(dt) noise in
        # the response makes this a wide-band check (3 standard errors)
        xs, ys = [], []
        m, dt = 500, 1.0 / 500
        for i in range(200):
            path = simulate_path(
                MarketModel(rate=0.05, dividend_yield=0.02, volatility=0.2,
                            maturity=1.0),
                PolicyTable.sign_switch(), 0.0, 0.3, m, (991, i))
            q = np.where(path[:-1] > 0.0, -1.0, 1.0)
            xs.append(q - path[:-1])
            ys.append(np.diff(path) / dt)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        se = math.sqrt(resid.var(ddof=2) / ((x - x.mean()) ** 2).sum())
        assert x.size == 100_000
        assert abs(slope - (-0.02)) < 3.0 * se


class TestEstimatePrice:
    def test_no_noise_price(self):
        r = estimate_price(FLAT_MODEL, PolicyTable.fixed(-1.0), 0.0, 0.5, 200, 100, 1)
        assert abs(r["mean"] - ODE_VALUE) < 1e-4
        assert r["std_error"] == 0.0

    def test_immediate_policy_pays_the_payoff(self):
        r = estimate_price(FLAT_MODEL, PolicyTable.immediate(), 0.0, 0.5, 200, 10, 1)
        assert r["mean"] == 0.5 and r["ci95"] == 0.0
        r = estimate_price(FLAT_MODEL, PolicyTable.immediate(), 0.0, -0.5, 200, 10, 1)
        assert r["mean"] == 0.0

    def test_result_keys(self):
        r = estimate_price(FLAT_MODEL, PolicyTable.fixed(1.0), 0.0, 0.0, 100, 10, 9)
        assert set(r) == {"mean", "std_error", "ci95", "n_paths", "n_steps", "seed"}
        assert r["n_paths"] == 100 and r["n_steps"] == 10 and r["seed"] == 9

    def test_rejects_tiny_batches(self):
        with pytest.raises(ValueError):
            estimate_price(FLAT_MODEL, PolicyTable.fixed(1.0), 0.0, 0.0, 99, 10, 1)

    def test_martingale_at_zero_yield(self):
        # a = 0, q = 0: the ratio is a martingale; far in the money the
        # payoff floor never binds, so the estimate is the initial value
        model = MarketModel(rate=0.05, dividend_yield=0.0, volatility=0.2,
                            maturity=1.0)
        r = estimate_price(model, PolicyTable.fixed(0.0), 0.0, 5.0, 50_000, 50, 3)
        assert abs(r["mean"] - 5.0) < 3.0 * r["std_error"]

    def test_martingale_survives_jumps(self):
        model = MarketModel(rate=0.05, dividend_yield=0.0, volatility=0.2,
                            maturity=1.0,
                            jumps=MertonJumps(intensity=0.5, mean=0.0, std=0.1))
        r = estimate_price(model, PolicyTable.fixed(0.0), 0.0, 5.0, 50_000, 50, 3)
        assert abs(r["mean"] - 5.0) < 3.0 * r["std_error"]

    def test_reproducible_and_seed_sensitive(self, solver_policy):
        a = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 2_000, 50, 17)
        b = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 2_000, 50, 17)
        c = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 2_000, 50, 18)
        assert a == b
        assert a["mean"] != c["mean"]

    def test_antithetic_agrees_with_plain(self, solver_policy):
        plain = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 20_000, 200, 21)
        anti = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 20_000, 200, 21,
                              antithetic=True)
        comb = math.hypot(plain["std_error"], anti["std_error"])
        assert abs(plain["mean"] - anti["mean"]) < 3.0 * comb

    def test_solver_playback_reprices_the_grid(self, merton_solution, solver_policy):
        g = merton_solution.grid
        r = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 50_000, 500, 11)
        u0 = merton_solution.u[0][g.zero_index]
        assert abs(u0 - r["mean"]) <= max(2.0 * r["ci95"], 5e-3)

    @pytest.mark.parametrize("policy", [
        PolicyTable.fixed(1.0),
        PolicyTable.fixed(-1.0),
        PolicyTable.sign_switch(),
        PolicyTable.immediate(),
    ], ids=["fixed+1", "fixed-1", "sign_switch", "immediate"])
    def test_every_policy_prices_below_the_optimum(self, merton_solution, policy):
        g = merton_solution.grid
        u0 = merton_solution.u[0][g.zero_index]
        r = estimate_price(MERTON_MODEL, policy, 0.0, 0.0, 20_000, 200, 13)
        assert r["mean"] <= u0 + 2.0 * r["ci95"] + 5e-3

    def test_step_doubling_moves_little(self, solver_policy):
        a = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 50_000, 250, 77)
        b = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0, 50_000, 500, 77)
        comb = math.hypot(a["std_error"], b["std_error"])
        assert abs(a["mean"] - b["mean"]) < comb


class TestLsStop:
    def test_no_noise_matches_the_ode_and_flags_degeneracy(self):
        r = ls_stop_estimate(FLAT_MODEL, PolicyTable.fixed(-1.0), 0.0, 0.5,
                             200, 100, 3, 5)
        assert abs(r["mean"] - ODE_VALUE) < 1e-3
        assert r["degenerate_basis"] is True

    @pytest.mark.parametrize("degree", [1, 7])
    def test_rejects_out_of_range_degree(self, degree):
        with pytest.raises(ValueError):
            ls_stop_estimate(FLAT_MODEL, PolicyTable.fixed(1.0), 0.0, 0.0,
                             200, 10, degree, 1)

    def test_agrees_with_region_stopping(self, solver_policy):
        ls = ls_stop_estimate(MERTON_MODEL, solver_policy, 0.0, 0.0,
                              20_000, 200, 3, 21)
        region = estimate_price(MERTON_MODEL, solver_policy, 0.0, 0.0,
                                20_000, 200, 21)
        tol = max(3.0 * math.hypot(ls["std_error"], region["std_error"]), 1e-2)
        assert abs(ls["mean"] - region["mean"]) < tol
        assert ls["degenerate_basis"] is False

    def test_basis_degree_robustness(self, solver_policy):
        lo = ls_stop_estimate(MERTON_MODEL, solver_policy, 0.0, 0.0,
                              20_000, 200, 2, 31)
        hi = ls_stop_estimate(MERTON_MODEL, solver_policy, 0.0, 0.0,
                              20_000, 200, 4, 31)
        comb = math.hypot(lo["std_error"], hi["std_error"])
        assert abs(lo["mean"] - hi["mean"]) < 2.0 * comb


class TestBatchSummary:
    def test_canonical_json(self):
        r = estimate_price(FLAT_MODEL, PolicyTable.fixed(-1.0), 0.0, 0.5, 200, 50, 1)
        text = batch_summary(r)
        assert "\n" not in text
        parsed = json.loads(text)
        assert parsed == r
        assert list(parsed) == sorted(parsed)
