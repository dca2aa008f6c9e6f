"""Dimension reduction: from (price, account) to the wealth ratio.

A passport option holder trades at most `bound` shares of the asset; the
account value follows dX = q (dS - rate*S dt) + rate*X dt.  Taking the
asset as numeraire collapses the two-dimensional state to the ratio
x = X / S, whose dynamics under the numeraire measure are

    dx = (q - x) (-dividend_yield dt + volatility dW + compensated jumps)

with the jump displacement given by `jump_displacement` below and the jump
law tilted by e^z (see market.tilt).  The option value reassembles as
V(t, S, X) = S * u(t, X / S), and a trading bound C at spot S is the same
problem as bound 1 at spot C * S.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "jump_displacement",
    "normalize_constraint",
    "reassemble",
    "drift_coefficient",
    "DRIFT_VARIANTS",
]

# with_a: ratio drift -(dividend_yield)*(q - x), the form consistent with the
# numeraire change.  paper_literal: bare -(q - x), kept reproducible as a
# diagnostic variant.
DRIFT_VARIANTS = ("with_a", "paper_literal")


def jump_displacement(q, x, z):
    """Move of the wealth ratio x when the price jumps by a factor e^z.

    Holding q shares, the account gains q*S*(e^z - 1) while the numeraire
    itself scales by e^z, so the ratio moves by (q - x)(1 - e^{-z}).
    Equivalently x - q contracts by the factor e^{-z}.
    """
    return (q - x) * -np.expm1(-np.asarray(z, dtype=float))


def normalize_constraint(bound: float, spot: float) -> float:
    """Fold a trading bound C into the spot: (C, S) -> bound-1 problem at C*S."""
    if not bound > 0.0:
        raise ValueError(f"trading bound must be > 0, got {bound}")
    if not spot > 0.0:
        raise ValueError(f"spot must be > 0, got {spot}")
    return bound * spot


def reassemble(spot, u_value):
    """Undo the numeraire change: V = S * u(t, X / S)."""
    spot = np.asarray(spot, dtype=float)
    if np.any(spot <= 0.0):
        raise ValueError("spot must be > 0 to reassemble the price")
    out = spot * np.asarray(u_value, dtype=float)
    return float(out) if out.ndim == 0 else out


def drift_coefficient(dividend_yield: float, variant: str) -> float:
    """Scale of the ratio drift -(scale)*(q - x) under the chosen variant."""
    if variant not in DRIFT_VARIANTS:
        raise ValueError(f"drift_variant must be one of {DRIFT_VARIANTS}, got {variant!r}")
    return dividend_yield if variant == "with_a" else 1.0
