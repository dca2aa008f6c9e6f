"""Wealth-ratio reduction: algebra plus a two-route simulation check.

The closed identities are asserted directly.  The numeraire change itself is
validated by pricing the same fixed-control contract two ways: once in the
original (price, account) variables under the pricing measure, once in the
reduced ratio variable under the asset-numeraire measure, with independent
random streams.
"""

import math

import numpy as np
import pytest

from passport_pricing.reduction import (
    DRIFT_VARIANTS,
    drift_coefficient,
    jump_displacement,
    normalize_constraint,
    reassemble,
)


class TestJumpDisplacement:
    def test_matches_closed_form(self):
        q, x, z = 0.7, -0.4, 0.25
        assert jump_displacement(q, x, z) == pytest.approx(
            (q - x) * (1.0 - math.exp(-z)), rel=1e-15
        )

    def test_zero_jump_moves_nothing(self):
        assert jump_displacement(1.0, 0.3, 0.0) == 0.0

    def test_lands_on_contracted_offset(self):
        # post-jump state x + displacement equals q + (x - q) e^{-z}
        q, x, z = -1.0, 0.5, -0.3
        landed = x + jump_displacement(q, x, z)
        assert landed == pytest.approx(q + (x - q) * math.exp(-z), rel=1e-14)

    def test_vectorized_over_z(self):
        z = np.array([-0.5, 0.0, 0.5])
        out = jump_displacement(1.0, 0.0, z)
        assert out.shape == (3,)
        assert out[1] == 0.0
        assert out[0] < 0.0 < out[2]

    def test_at_the_control_nothing_moves(self):
        # q = x is a fixed point of the ratio dynamics
        assert np.all(jump_displacement(0.4, 0.4, np.linspace(-1, 1, 9)) == 0.0)


class TestNormalizeConstraint:
    def test_folds_bound_into_spot(self):
        assert normalize_constraint(2.0, 100.0) == 200.0

    @pytest.mark.parametrize("bound,spot", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -5.0)])
    def test_rejects_nonpositive(self, bound, spot):
        with pytest.raises(ValueError):
            normalize_constraint(bound, spot)


class TestReassemble:
    def test_scalar(self):
        assert reassemble(100.0, 0.25) == 25.0
        assert isinstance(reassemble(100.0, 0.25), float)

    def test_array(self):
        out = reassemble(50.0, np.array([0.0, 0.1]))
        np.testing.assert_allclose(out, [0.0, 5.0])

    def test_degree_one_homogeneity(self):
        u = 0.37
        assert reassemble(200.0, u) == pytest.approx(2.0 * reassemble(100.0, u), rel=1e-15)

    def test_rejects_nonpositive_spot(self):
        with pytest.raises(ValueError):
            reassemble(0.0, 0.5)


class TestDriftCoefficient:
    def test_variants(self):
        assert DRIFT_VARIANTS == ("with_a", "paper_literal")
        assert drift_coefficient(0.02, "with_a") == 0.02
        assert drift_coefficient(0.02, "paper_literal") == 1.0

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            drift_coefficient(0.02, "bare")


class TestMeasureChangeConsistency:
    def test_two_routes_agree(self):
        """Fixed-control price agrees between the 2d and reduced dynamics.

        Route A: simulate (S, X) under the pricing measure, discount the
        account payoff at the riskless rate.  Route B: simulate the ratio
        under the asset-numeraire measure, discount at the dividend yield
        and scale by spot.  Diffusion only; the jump side of the change of
        measure is covered by the tilt duality tests in test_market.
        """
        r, a, sig, t_mat = 0.05, 0.02, 0.2, 1.0
        s0, x0, q = 1.0, 0.3, 0.7
        n, m = 100_000, 250
        dt = t_mat / m

        rng = np.random.default_rng(np.random.SeedSequence(20260822))
        spot = np.full(n, s0)
        account = np.full(n, x0)
        for _ in range(m):
            xi = rng.standard_normal(n)
            # exact lognormal increment for the asset, Euler for the account
            spot_next = spot * np.exp((r - a - 0.5 * sig**2) * dt + sig * math.sqrt(dt) * xi)
            account = account + q * (spot_next - spot - r * spot * dt) + r * account * dt
            spot = spot_next
        route_a = np.exp(-r * t_mat) * np.maximum(account, 0.0)

        rng = np.random.default_rng(np.random.SeedSequence(822))
        ratio = np.full(n, x0 / s0)
        for _ in range(m):
            xi = rng.standard_normal(n)
            ratio = ratio + (q - ratio) * (-a * dt + sig * math.sqrt(dt) * xi)
        route_b = reassemble(s0, np.exp(-a * t_mat) * np.maximum(ratio, 0.0))

        gap = abs(route_a.mean() - route_b.mean())
        se = math.hypot(route_a.std(ddof=1) / math.sqrt(n),
                        route_b.std(ddof=1) / math.sqrt(n))
        # measured gap 5.8e-4 at 1.15 combined standard errors; the bound
        # allows 3 SE plus Euler bias headroom
        assert gap < max(3.0 * se, 1.5e-3)
