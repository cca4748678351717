"""Executable noise mechanisms and their analytic baselines.

The compound-Laplace mechanism draws a reciprocal scale from its
second-fold combination, then adds Laplace noise at that scale.  The
staircase baseline is the geometric mixture of uniform bands: band k
(width = sensitivity) carries geometric mass with ratio e^-eps, and
within a band the upper sub-band's density is e^-eps times the lower's.
Its width parameter gamma_s defaults to the expected-|error|-optimal
1 / (1 + e^(eps/2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import LinearCombo

_UNDERFLOW = 1e-300


class InputDomainError(ValueError):
    """The mechanism was applied to an input outside its domain."""


@dataclass(frozen=True)
class Laplace:
    b: float

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("scale b must be > 0")


@dataclass(frozen=True)
class CompoundLaplace:
    """Laplace noise whose reciprocal scale is drawn from ``combo``."""

    combo: LinearCombo

    def __post_init__(self):
        if self.combo.mean() <= 0:
            raise ValueError("the reciprocal-scale combination must have positive mean")


@dataclass(frozen=True)
class Staircase:
    epsilon: float
    sensitivity: float = 1.0
    gamma_s: float | None = None  # None selects the default width

    def __post_init__(self):
        if self.epsilon <= 0 or self.sensitivity <= 0:
            raise ValueError("epsilon and sensitivity must be > 0")
        if self.gamma_s is not None and not (0.0 < self.gamma_s <= 1.0):
            raise ValueError("gamma_s must lie in (0, 1]")

    @property
    def width(self) -> float:
        return self.gamma_s if self.gamma_s is not None else staircase_default_width(self.epsilon)


@dataclass(frozen=True)
class Gaussian:
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class RandomizedResponse:
    """Report the true bit with probability p, the flipped bit otherwise."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")


NoiseMechanism = Laplace | CompoundLaplace | Staircase | Gaussian | RandomizedResponse


def staircase_default_width(epsilon: float) -> float:
    return 1.0 / (1.0 + math.exp(epsilon / 2.0))


def staircase_sample(
    epsilon: float,
    sensitivity: float,
    gamma_s: float | None,
    rng: np.random.Generator,
    size=None,
):
    """Draw symmetric staircase noise.

    Band index k >= 0 is geometric with ratio e^-eps; within band k the
    draw lands in the lower sub-band [k, k + gamma_s) * sensitivity with
    probability gamma_s / (gamma_s + e^-eps (1 - gamma_s)), else in the
    upper sub-band, uniformly either way; the sign is a fair coin.
    """
    g = gamma_s if gamma_s is not None else staircase_default_width(epsilon)
    b = math.exp(-epsilon)
    scalar = size is None
    n = 1 if scalar else size
    k = rng.geometric(1.0 - b, n) - 1
    lower = rng.random(n) < g / (g + b * (1.0 - g))
    u = rng.random(n)
    offset = np.where(lower, g * u, g + (1.0 - g) * u)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    out = sign * (k + offset) * sensitivity
    return float(out[0]) if scalar else out


def sample_noise(mech: NoiseMechanism, rng: np.random.Generator, size=None):
    """Draw additive noise for every mechanism except randomized response."""
    if isinstance(mech, Laplace):
        return rng.laplace(0.0, mech.b, size)
    if isinstance(mech, Gaussian):
        return rng.normal(0.0, mech.sigma, size)
    if isinstance(mech, Staircase):
        return staircase_sample(mech.epsilon, mech.sensitivity, mech.gamma_s, rng, size)
    if isinstance(mech, CompoundLaplace):
        scalar = size is None
        n = 1 if scalar else int(np.prod(size))
        scales = np.asarray(mech.combo.sample(rng, n), float)
        # a reciprocal scale underflowing to zero would mean infinite noise
        for _ in range(100):
            bad = scales < _UNDERFLOW
            if not bad.any():
                break
            scales[bad] = np.asarray(mech.combo.sample(rng, int(bad.sum())), float)
        noise = rng.laplace(0.0, 1.0 / scales)
        if scalar:
            return float(noise[0])
        return noise.reshape(size)
    raise InputDomainError(f"{type(mech).__name__} does not produce additive noise")


def perturb(mech: NoiseMechanism, true_value: float, rng: np.random.Generator) -> float:
    """Release ``true_value`` through the mechanism."""
    if isinstance(mech, RandomizedResponse):
        if true_value not in (0, 1):
            raise InputDomainError(
                f"randomized response needs a bit in {{0, 1}}, got {true_value}"
            )
        keep = rng.random() < mech.p
        return float(true_value if keep else 1 - true_value)
    return float(true_value + sample_noise(mech, rng))


# --- analytic staircase utilities ----------------------------------------


def _staircase_density_peak(epsilon: float, sensitivity: float, g: float) -> float:
    b = math.exp(-epsilon)
    return (1.0 - b) / (2.0 * sensitivity * (g + b * (1.0 - g)))


def staircase_usefulness(
    epsilon: float, sensitivity: float, gamma: float, gamma_s: float | None = None
) -> float:
    """P(|staircase noise| <= gamma)."""
    g = gamma_s if gamma_s is not None else staircase_default_width(epsilon)
    b = math.exp(-epsilon)
    a = _staircase_density_peak(epsilon, sensitivity, g)
    z = gamma / sensitivity
    m = int(z)
    s = z - m
    half = (1.0 - b ** m) / 2.0
    half += a * sensitivity * b ** m * (min(s, g) + b * max(0.0, s - g))
    return 2.0 * half


def _staircase_geometric_sums(b: float):
    s0 = 1.0 / (1.0 - b)
    s1 = b / (1.0 - b) ** 2
    s2 = b * (1.0 + b) / (1.0 - b) ** 3
    return s0, s1, s2


def staircase_l1(epsilon: float, sensitivity: float, gamma_s: float | None = None) -> float:
    """E|staircase noise| in closed form (geometric series)."""
    g = gamma_s if gamma_s is not None else staircase_default_width(epsilon)
    b = math.exp(-epsilon)
    a = _staircase_density_peak(epsilon, 1.0, g)
    s0, s1, s2 = _staircase_geometric_sums(b)
    total = (g * s1 + g * g * s0 / 2.0
             + b * ((1.0 - g) * s1 + (1.0 - g * g) * s0 / 2.0))
    return sensitivity * 2.0 * a * total


def staircase_l2(epsilon: float, sensitivity: float, gamma_s: float | None = None) -> float:
    """sqrt(E[staircase noise^2]) in closed form."""
    g = gamma_s if gamma_s is not None else staircase_default_width(epsilon)
    b = math.exp(-epsilon)
    a = _staircase_density_peak(epsilon, 1.0, g)
    s0, s1, s2 = _staircase_geometric_sums(b)
    total = (g * s2 + g * g * s1 + g ** 3 * s0 / 3.0
             + b * ((1.0 - g) * s2 + (1.0 - g * g) * s1 + (1.0 - g ** 3) * s0 / 3.0))
    return sensitivity * math.sqrt(2.0 * a * total)


def staircase_log_density(mech: Staircase, xs) -> np.ndarray:
    """Log of the staircase noise density, vectorized over ``xs``."""
    g = mech.width
    b = math.exp(-mech.epsilon)
    a = _staircase_density_peak(mech.epsilon, mech.sensitivity, g)
    z = np.abs(np.asarray(xs, float)) / mech.sensitivity
    k = np.floor(z)
    upper = (z - k) >= g
    return math.log(a) - mech.epsilon * (k + upper)


def laplace_usefulness(epsilon: float, sensitivity: float, gamma: float) -> float:
    return 1.0 - math.exp(-gamma * epsilon / sensitivity)


def gaussian_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Smallest sigma with (eps, delta)-DP: (dq/2eps)(K + sqrt(K^2 + 2eps)),
    where K is the upper-tail normal quantile at delta."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    k = float(special.ndtri(1.0 - delta))
    return sensitivity / (2.0 * epsilon) * (k + math.sqrt(k * k + 2.0 * epsilon))
