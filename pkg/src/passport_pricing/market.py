"""Market primitives: exponential-Levy price dynamics and jump-size families.

The traded asset follows

    dS/S = (rate - dividend_yield) dt + volatility dW
           + integral of (e^z - 1) (J(dt,dz) - nu(dz) dt)

where J is a Poisson random measure with finite-activity intensity measure
nu(dz) = intensity * f(z) dz.  A jump of log-size z multiplies the price by
e^z.  Everything downstream (the reduced solver, the Monte Carlo oracle)
consumes the tilted law nu_tilde(dz) = e^z nu(dz) produced by `tilt`: the
jump law seen once the asset itself is taken as numeraire.

Only finite-activity families are supported; infinite-activity specs cannot
be expressed with these types and are rejected at validation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.stats import norm

__all__ = [
    "MertonJumps",
    "KouJumps",
    "TabulatedJumps",
    "JumpSpec",
    "TiltedMerton",
    "TiltedKou",
    "TiltedTabulated",
    "TiltedNone",
    "TiltedJumps",
    "MarketModel",
    "ValidationReport",
    "validate_jumps",
    "validate_model",
    "compensator",
    "tilt",
    "sample_jump",
    "model_fingerprint",
]

# Quadrature windows are cut where the density falls below this fraction of
# its peak; the discarded tail mass is far below every tolerance in use.
TAIL_CUT = 1e-14

_GAUSS_RADIUS = math.sqrt(-2.0 * math.log(TAIL_CUT))  # ~8.03 standard deviations
_EXP_RADIUS = -math.log(TAIL_CUT)  # ~32.2 mean jump sizes


# ---------------------------------------------------------------------------
# jump-size families (the base measure nu)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MertonJumps:
    """Gaussian log-jump sizes arriving at a constant Poisson rate.

    nu(dz) = intensity * N(mean, std^2)(dz).  The exponential moment
    E[e^z] = exp(mean + std^2/2) is always finite, so no extra
    integrability condition is needed.
    """

    intensity: float
    mean: float
    std: float

    def density(self, z):
        z = np.asarray(z, dtype=float)
        w = np.exp(-0.5 * ((z - self.mean) / self.std) ** 2)
        return self.intensity * w / (self.std * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class KouJumps:
    """Double-exponential log-jump sizes.

    Up-moves are Exp(up_rate) with probability p_up, down-moves are
    Exp(down_rate) in magnitude.  up_rate > 1 is required so that e^z is
    integrable on the up wing (the usual finite-mean condition).
    """

    intensity: float
    p_up: float
    up_rate: float
    down_rate: float

    def density(self, z):
        z = np.asarray(z, dtype=float)
        up = self.p_up * self.up_rate * np.exp(-self.up_rate * np.clip(z, 0.0, None))
        down = (1.0 - self.p_up) * self.down_rate * np.exp(self.down_rate * np.clip(z, None, 0.0))
        return self.intensity * np.where(z >= 0.0, up, down)


@dataclass(frozen=True)
class TabulatedJumps:
    """Finite atomic jump law: sizes[i] carries weight weights[i] > 0.

    The weights sum to the total jump intensity; no normalization is
    applied on construction.
    """

    sizes: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(z) for z in self.sizes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def intensity(self) -> float:
        return float(sum(self.weights))


JumpSpec = Union[MertonJumps, KouJumps, TabulatedJumps]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """Outcome of model validation: ok, or a list of 'field: condition' strings."""

    ok: bool
    violations: tuple

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise ValueError("invalid model parameters: " + "; ".join(self.violations))


def validate_jumps(jumps: JumpSpec | None) -> list:
    """Collect violations for a jump spec. None (no jumps) is always valid."""
    bad = []
    if jumps is None:
        return bad
    if isinstance(jumps, MertonJumps):
        if not jumps.intensity > 0.0:
            bad.append(f"jumps.intensity: must be > 0, got {jumps.intensity}")
        if not jumps.std > 0.0:
            bad.append(f"jumps.std: must be > 0, got {jumps.std}")
        if not math.isfinite(jumps.mean):
            bad.append(f"jumps.mean: must be finite, got {jumps.mean}")
    elif isinstance(jumps, KouJumps):
        if not jumps.intensity > 0.0:
            bad.append(f"jumps.intensity: must be > 0, got {jumps.intensity}")
        if not 0.0 <= jumps.p_up <= 1.0:
            bad.append(f"jumps.p_up: must lie in [0, 1], got {jumps.p_up}")
        if not jumps.up_rate > 1.0:
            bad.append(
                f"jumps.up_rate: exponential moment divergent unless > 1, "
                f"got {jumps.up_rate}"
            )
        if not jumps.down_rate > 0.0:
            bad.append(f"jumps.down_rate: must be > 0, got {jumps.down_rate}")
    elif isinstance(jumps, TabulatedJumps):
        if len(jumps.sizes) == 0:
            bad.append("jumps.sizes: must contain at least one atom")
        if len(jumps.sizes) != len(jumps.weights):
            bad.append(
                f"jumps.weights: length {len(jumps.weights)} does not match "
                f"{len(jumps.sizes)} sizes"
            )
        if any(not math.isfinite(z) for z in jumps.sizes):
            bad.append("jumps.sizes: all atoms must be finite")
        if any(not w > 0.0 for w in jumps.weights):
            bad.append("jumps.weights: all weights must be > 0")
    else:
        bad.append(f"jumps: unknown family {type(jumps).__name__}")
    return bad


# ---------------------------------------------------------------------------
# market model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketModel:
    """Exponential-Levy market with a continuously paid dividend yield.

    Args:
        rate: risk-free short rate r (any sign).
        dividend_yield: continuous payout rate; must be strictly positive,
            it is also the discount rate of the reduced problem.
        volatility: diffusive volatility of the price, >= 0.
        maturity: option horizon in years, > 0.
        jumps: jump-size family, or None for a pure diffusion.
    """

    rate: float
    dividend_yield: float
    volatility: float
    maturity: float
    jumps: JumpSpec | None = None


def validate_model(model: MarketModel) -> ValidationReport:
    """Report-valued validation; never raises."""
    bad = []
    if not math.isfinite(model.rate):
        bad.append(f"rate: must be finite, got {model.rate}")
    # zero yield is legal (undiscounted ratio, martingale diagnostics)
    if not model.dividend_yield >= 0.0:
        bad.append(f"dividend_yield: must be >= 0, got {model.dividend_yield}")
    if not model.volatility >= 0.0:
        bad.append(f"volatility: must be >= 0, got {model.volatility}")
    if not model.maturity > 0.0:
        bad.append(f"maturity: must be > 0, got {model.maturity}")
    bad.extend(validate_jumps(model.jumps))
    return ValidationReport(ok=not bad, violations=tuple(bad))


# ---------------------------------------------------------------------------
# compensator and tilt
# ---------------------------------------------------------------------------

def compensator(jumps: JumpSpec | None) -> float:
    """Return kappa = integral of (e^z - 1) nu(dz), in closed form per family.

    Rejects invalid specs.  kappa is the drift correction that makes the
    compensated price jump integral a martingale.
    """
    bad = validate_jumps(jumps)
    if bad:
        raise ValueError("invalid jump spec: " + "; ".join(bad))
    if jumps is None:
        return 0.0
    if isinstance(jumps, MertonJumps):
        return jumps.intensity * math.expm1(jumps.mean + 0.5 * jumps.std**2)
    if isinstance(jumps, KouJumps):
        up = jumps.p_up * jumps.up_rate / (jumps.up_rate - 1.0)
        down = (1.0 - jumps.p_up) * jumps.down_rate / (jumps.down_rate + 1.0)
        return jumps.intensity * (up + down - 1.0)
    # Same arithmetic path as tilt() so lambda_tilde = intensity + kappa is
    # exact (not just close) for atomic laws.
    tilted_mass = sum(w * math.exp(z) for z, w in zip(jumps.sizes, jumps.weights))
    return float(tilted_mass) - jumps.intensity


@dataclass(frozen=True)
class TiltedMerton:
    """e^z-tilt of a Merton family: again Gaussian, shifted mean, new mass."""

    mean: float
    std: float
    lambda_tilde: float

    def density(self, z):
        z = np.asarray(z, dtype=float)
        w = np.exp(-0.5 * ((z - self.mean) / self.std) ** 2)
        return self.lambda_tilde * w / (self.std * math.sqrt(2.0 * math.pi))

    def cdf(self, z):
        return norm.cdf(z, loc=self.mean, scale=self.std)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, self.std, size=size)

    def support(self):
        r = _GAUSS_RADIUS * self.std
        return (self.mean - r, self.mean + r)

    def quadrature(self, n_nodes: int):
        lo, hi = self.support()
        return _gauss_legendre_measure(self.density, [(lo, hi)], n_nodes)


@dataclass(frozen=True)
class TiltedKou:
    """e^z-tilt of a Kou family: two exponential wings with tilted rates.

    The up wing keeps rate up_rate (base rate minus one) and carries mass
    up_weight; the down wing has rate down_rate (base rate plus one) and
    mass down_weight.  up_weight + down_weight = lambda_tilde.
    """

    up_weight: float
    up_rate: float
    down_weight: float
    down_rate: float

    @property
    def lambda_tilde(self) -> float:
        return self.up_weight + self.down_weight

    def density(self, z):
        z = np.asarray(z, dtype=float)
        up = self.up_weight * self.up_rate * np.exp(-self.up_rate * np.clip(z, 0.0, None))
        down = self.down_weight * self.down_rate * np.exp(self.down_rate * np.clip(z, None, 0.0))
        return np.where(z >= 0.0, up, down)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        lt = self.lambda_tilde
        below = self.down_weight * np.exp(self.down_rate * np.clip(z, None, 0.0))
        above = self.down_weight + self.up_weight * (-np.expm1(-self.up_rate * np.clip(z, 0.0, None)))
        return np.where(z >= 0.0, above, below) / lt

    def sample(self, rng: np.random.Generator, size=None):
        shape = () if size is None else size
        up = rng.random(shape) < self.up_weight / self.lambda_tilde
        mag_up = rng.exponential(1.0 / self.up_rate, size=shape)
        mag_down = rng.exponential(1.0 / self.down_rate, size=shape)
        out = np.where(up, mag_up, -mag_down)
        return float(out) if size is None else out

    def support(self):
        return (-_EXP_RADIUS / self.down_rate, _EXP_RADIUS / self.up_rate)

    def quadrature(self, n_nodes: int):
        lo, hi = self.support()
        pieces = []
        if self.down_weight > 0.0:
            pieces.append((lo, 0.0))
        if self.up_weight > 0.0:
            pieces.append((0.0, hi))
        return _gauss_legendre_measure(self.density, pieces, n_nodes)


@dataclass(frozen=True)
class TiltedTabulated:
    """e^z-tilt of an atomic law: same atoms, weights scaled by e^z."""

    sizes: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(z) for z in self.sizes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def lambda_tilde(self) -> float:
        return float(sum(self.weights))

    def sample(self, rng: np.random.Generator, size=None):
        p = np.asarray(self.weights) / self.lambda_tilde
        out = rng.choice(np.asarray(self.sizes), size=size, p=p)
        return float(out) if size is None else out

    def quadrature(self, n_nodes: int):
        # Atomic law: the atoms themselves are the exact quadrature rule.
        return np.asarray(self.sizes), np.asarray(self.weights)


@dataclass(frozen=True)
class TiltedNone:
    """Tilt of an absent jump law: zero mass."""

    lambda_tilde: float = 0.0

    def sample(self, rng: np.random.Generator, size=None):
        raise ValueError("cannot sample from an empty jump law")

    def quadrature(self, n_nodes: int):
        return np.array([]), np.array([])


TiltedJumps = Union[TiltedMerton, TiltedKou, TiltedTabulated, TiltedNone]


def _gauss_legendre_measure(density, pieces, n_nodes: int):
    """Gauss-Legendre nodes/weights for a measure given by a density.

    pieces: list of (lo, hi) intervals; nodes are split evenly across them
    (the density may have a kink at interval joints, so each piece gets its
    own rule).  Returned weights integrate the density: sum(w) ~ total mass.
    """
    if not pieces:
        return np.array([]), np.array([])
    per = max(4, n_nodes // len(pieces))
    ref_z, ref_w = np.polynomial.legendre.leggauss(per)
    zs, ws = [], []
    for lo, hi in pieces:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        z = mid + half * ref_z
        zs.append(z)
        ws.append(half * ref_w * density(z))
    return np.concatenate(zs), np.concatenate(ws)


def tilt(jumps: JumpSpec | None) -> TiltedJumps:
    """Push nu forward through e^z: returns the family of nu_tilde(dz) = e^z nu(dz).

    Closed form per family; rejects invalid specs.  The total tilted mass
    lambda_tilde = integral of e^z nu(dz) satisfies lambda_tilde - intensity
    = compensator(jumps).
    """
    bad = validate_jumps(jumps)
    if bad:
        raise ValueError("invalid jump spec: " + "; ".join(bad))
    if jumps is None:
        return TiltedNone()
    if isinstance(jumps, MertonJumps):
        lam = jumps.intensity * math.exp(jumps.mean + 0.5 * jumps.std**2)
        return TiltedMerton(mean=jumps.mean + jumps.std**2, std=jumps.std, lambda_tilde=lam)
    if isinstance(jumps, KouJumps):
        return TiltedKou(
            up_weight=jumps.intensity * jumps.p_up * jumps.up_rate / (jumps.up_rate - 1.0),
            up_rate=jumps.up_rate - 1.0,
            down_weight=jumps.intensity * (1.0 - jumps.p_up) * jumps.down_rate / (jumps.down_rate + 1.0),
            down_rate=jumps.down_rate + 1.0,
        )
    return TiltedTabulated(
        sizes=jumps.sizes,
        weights=tuple(w * math.exp(z) for z, w in zip(jumps.sizes, jumps.weights)),
    )


def sample_jump(tilted: TiltedJumps, rng: np.random.Generator, size=None):
    """Draw jump log-sizes from the normalized tilted law.

    Deterministic given the generator state; raises on an empty law.
    """
    return tilted.sample(rng, size=size)


def model_fingerprint(model: MarketModel) -> str:
    """Short stable hash of the model parameters, for output provenance."""
    payload = {
        "rate": model.rate,
        "dividend_yield": model.dividend_yield,
        "volatility": model.volatility,
        "maturity": model.maturity,
        "jumps": None if model.jumps is None else [type(model.jumps).__name__, vars(model.jumps)],
    }
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:12]
