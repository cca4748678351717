"""Closed-form MGF algebra for non-negative noise-scale distributions.

Every distribution here models the *reciprocal* of a Laplace scale
parameter, so supports are restricted to [0, inf).  Each family exposes
its moment generating function M(t) = E[e^{tX}], the first derivative
M'(t) = E[X e^{tX}], the mean, and a sampler driven by a caller-owned
``numpy.random.Generator``.  All values are immutable after construction
and every operation is pure.

``mgf``/``mgf_deriv`` accept scalars or numpy arrays and return the same
shape; scalar inputs come back as plain floats.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields

import numpy as np
from scipy import special


class DomainError(ValueError):
    """The MGF (or its derivative) was probed outside its existence domain."""


_SQRT_HALF_PI = math.sqrt(math.pi / 2)


def _ret(x, scalar: bool):
    return float(x) if scalar else x


def _log_gauss_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) computed stably for extreme arguments."""
    lo_b, hi_b = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    shape = lo_b.shape
    lo_b = np.atleast_1d(lo_b)
    hi_b = np.atleast_1d(hi_b)
    out = np.empty(lo_b.shape)
    # Work in whichever tail keeps both CDF values away from 1.
    left = hi_b <= 0.0
    right = lo_b >= 0.0
    mid = ~(left | right)
    def _diff(log_hi, log_lo):
        # log(e^log_hi - e^log_lo); nan ratios (-inf minus -inf) mean zero mass
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.minimum(log_lo - log_hi, 0.0)
            ratio = np.where(np.isnan(ratio), -np.inf, ratio)
            return log_hi + np.log1p(-np.exp(ratio))

    if np.any(left):
        out[left] = _diff(special.log_ndtr(hi_b[left]), special.log_ndtr(lo_b[left]))
    if np.any(right):
        out[right] = _diff(special.log_ndtr(-lo_b[right]), special.log_ndtr(-hi_b[right]))
    if np.any(mid):
        out[mid] = np.log(special.ndtr(hi_b[mid]) - special.ndtr(lo_b[mid]))
    return out.reshape(shape)


def _norm_logpdf(x):
    return -0.5 * np.asarray(x, dtype=float) ** 2 - 0.5 * math.log(2 * math.pi)


def _expm1_over(x):
    """expm1(x)/x with the removable singularity at zero."""
    x = np.asarray(x, float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, 1.0, np.expm1(safe) / safe)


def _expm1_over_deriv(x):
    """d/dx [expm1(x)/x]; series near zero avoids cancellation."""
    x = np.asarray(x, float)
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    with np.errstate(invalid="ignore"):
        exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0
    return np.where(small, series, exact)


@dataclass(frozen=True)
class MgfDist(ABC):
    """A second-fold distribution with non-negative support and a known MGF."""

    @abstractmethod
    def mgf(self, t):
        """E[e^{tX}]; exactly 1 at t = 0."""

    @abstractmethod
    def mgf_deriv(self, t):
        """E[X e^{tX}]; equals the mean at t = 0."""

    @abstractmethod
    def mean(self) -> float:
        """E[X] in closed form."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size=None):
        """Draw from the distribution using the supplied generator."""

    def mgf_domain_sup(self) -> float:
        """Exclusive upper bound of t for which the MGF exists."""
        return math.inf

    def support_min(self) -> float:
        """Infimum of the support (0 unless the family is bounded away)."""
        return 0.0

    def tail_power(self) -> float:
        """Asymptotic decay exponent of M(-x): M(-x) ~ x^{-p} as x -> inf.

        ``inf`` means exponential decay (support bounded away from zero).
        Used to decide convergence of improper integrals of the MGF.
        """
        return math.inf

    def _check_domain(self, t):
        sup = self.mgf_domain_sup()
        if np.any(np.asarray(t) >= sup):
            raise DomainError(
                f"{type(self).__name__}: MGF does not exist at t >= {sup}"
            )

    @property
    def family(self) -> str:
        return _FAMILY_NAMES[type(self)]

    def params(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Degenerate(MgfDist):
    """Point mass at ``value`` > 0; reduces the mechanism to plain Laplace."""

    value: float

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ValueError(f"degenerate value must be finite and > 0, got {self.value}")

    def mgf(self, t):
        scalar = np.isscalar(t)
        return _ret(np.exp(np.asarray(t, float) * self.value), scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        return _ret(self.value * np.exp(np.asarray(t, float) * self.value), scalar)

    def mean(self) -> float:
        return self.value

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def support_min(self) -> float:
        return self.value


@dataclass(frozen=True)
class Bernoulli(MgfDist):
    """Two-point distribution: ``x0`` with probability p, ``x1`` otherwise."""

    p: float
    x0: float
    x1: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not (self.x0 > 0 and self.x1 > 0):
            raise ValueError("both outcomes must be > 0")

    def mgf(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        out = self.p * np.exp(t * self.x0) + (1 - self.p) * np.exp(t * self.x1)
        return _ret(out, scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        out = self.p * self.x0 * np.exp(t * self.x0) + (1 - self.p) * self.x1 * np.exp(t * self.x1)
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.p * self.x0 + (1 - self.p) * self.x1

    def sample(self, rng, size=None):
        u = rng.random(size)
        return np.where(u < self.p, self.x0, self.x1) if size is not None else (
            self.x0 if u < self.p else self.x1
        )

    def support_min(self) -> float:
        if self.p == 0.0:
            return self.x1
        if self.p == 1.0:
            return self.x0
        return min(self.x0, self.x1)


@dataclass(frozen=True)
class Gamma(MgfDist):
    """Gamma(shape k, scale theta); MGF (1 - theta*t)^(-k) for t < 1/theta."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("shape and scale must be > 0")

    def mgf_domain_sup(self) -> float:
        return 1.0 / self.scale

    def mgf(self, t):
        self._check_domain(t)
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        return _ret((1.0 - self.scale * t) ** (-self.shape), scalar)

    def mgf_deriv(self, t):
        self._check_domain(t)
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        out = self.shape * self.scale * (1.0 - self.scale * t) ** (-self.shape - 1.0)
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.shape * self.scale

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    def tail_power(self) -> float:
        return self.shape


@dataclass(frozen=True)
class Uniform(MgfDist):
    """Continuous uniform on [lo, hi] with 0 <= lo < hi.

    The MGF (e^{t hi} - e^{t lo}) / (t (hi - lo)) is evaluated in the
    cancellation-free form e^{t lo} * expm1(t w)/(t w), w = hi - lo,
    which also handles the removable singularity at t = 0.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi < math.inf):
            raise ValueError(f"need 0 <= lo < hi < inf, got [{self.lo}, {self.hi}]")

    def mgf(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        w = self.hi - self.lo
        out = np.exp(t * self.lo) * _expm1_over(t * w)
        return _ret(out, scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        w = self.hi - self.lo
        out = np.exp(t * self.lo) * (
            self.lo * _expm1_over(t * w) + w * _expm1_over_deriv(t * w)
        )
        return _ret(out, scalar)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def support_min(self) -> float:
        return self.lo

    def tail_power(self) -> float:
        return math.inf if self.lo > 0 else 1.0


@dataclass(frozen=True)
class TruncGaussian(MgfDist):
    """Gaussian(mu, sigma) truncated to [lo, hi]; hi may be math.inf."""

    mu: float
    sigma: float
    lo: float
    hi: float = math.inf

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not (0.0 <= self.lo < self.hi):
            raise ValueError(f"need 0 <= lo < hi, got [{self.lo}, {self.hi}]")

    # beyond these values of alpha - sigma*t the direct expressions cancel
    # catastrophically and asymptotics toward the lower truncation point
    # take over (the tilted mean loses precision much earlier than log M)
    _DEEP = 1e5
    _DEEP_MEAN = 1e3

    def _alpha_beta(self):
        alpha = (self.lo - self.mu) / self.sigma
        beta = math.inf if math.isinf(self.hi) else (self.hi - self.mu) / self.sigma
        return alpha, beta

    def _log_mgf(self, t: np.ndarray) -> np.ndarray:
        alpha, beta = self._alpha_beta()
        lo_t = alpha - self.sigma * t
        hi_t = beta - self.sigma * t
        log_den = float(_log_gauss_mass(alpha, beta))
        with np.errstate(all="ignore"):
            direct = (self.mu * t + 0.5 * (self.sigma * t) ** 2
                      + _log_gauss_mass(lo_t, hi_t) - log_den)
            deep = (t * self.lo - 0.5 * alpha * alpha
                    - np.log(np.maximum(lo_t, 1.0))
                    - 0.5 * math.log(2 * math.pi) - log_den)
        return np.where(lo_t > self._DEEP, deep, direct)

    def mgf(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        return _ret(np.exp(self._log_mgf(t)), scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        alpha, beta = self._alpha_beta()
        lo_t = alpha - self.sigma * t
        hi_t = beta - self.sigma * t
        with np.errstate(all="ignore"):
            log_mass = _log_gauss_mass(lo_t, hi_t)
            # hazard-style ratios stay bounded where the raw pdf/mass underflow
            r_lo = np.exp(_norm_logpdf(lo_t) - log_mass)
            r_hi = np.where(np.isinf(hi_t), 0.0, np.exp(_norm_logpdf(hi_t) - log_mass))
            direct = self.mu + self.sigma ** 2 * t + self.sigma * (r_lo - r_hi)
            deep = self.lo + self.sigma / np.maximum(lo_t, 1.0)
        tilted_mean = np.where(lo_t > self._DEEP_MEAN, deep, direct)
        out = np.exp(self._log_mgf(t)) * tilted_mean
        return _ret(out, scalar)

    def mean(self) -> float:
        return float(self.mgf_deriv(0.0))

    def sample(self, rng, size=None):
        alpha, beta = self._alpha_beta()
        p_lo = special.ndtr(alpha)
        p_hi = 1.0 if math.isinf(beta) else special.ndtr(beta)
        u = rng.uniform(p_lo, p_hi, size)
        x = self.mu + self.sigma * special.ndtri(u)
        hi = self.hi if not math.isinf(self.hi) else np.inf
        return np.clip(x, self.lo, hi) if size is not None else float(
            min(max(x, self.lo), hi)
        )

    def support_min(self) -> float:
        return self.lo

    def tail_power(self) -> float:
        return math.inf if self.lo > 0 else 1.0


@dataclass(frozen=True)
class NoncentralChiSquare(MgfDist):
    """Noncentral chi-square with ``dof`` degrees and noncentrality ``nonc``."""

    dof: float
    nonc: float

    def __post_init__(self):
        if self.dof <= 0:
            raise ValueError("dof must be > 0")
        if self.nonc < 0:
            raise ValueError("nonc must be >= 0")

    def mgf_domain_sup(self) -> float:
        return 0.5

    def mgf(self, t):
        self._check_domain(t)
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        out = np.exp(self.nonc * t / (1.0 - 2.0 * t)) * (1.0 - 2.0 * t) ** (-self.dof / 2.0)
        return _ret(out, scalar)

    def mgf_deriv(self, t):
        self._check_domain(t)
        scalar = np.isscalar(t)
        t = np.asarray(t, float)
        out = self.mgf(t) * (self.dof / (1.0 - 2.0 * t) + self.nonc / (1.0 - 2.0 * t) ** 2)
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.dof + self.nonc

    def sample(self, rng, size=None):
        if self.nonc == 0.0:
            return rng.chisquare(self.dof, size)
        return rng.noncentral_chisquare(self.dof, self.nonc, size)

    def tail_power(self) -> float:
        return self.dof / 2.0


@dataclass(frozen=True)
class Rayleigh(MgfDist):
    """Rayleigh with scale sigma; density (x/sigma^2) exp(-x^2 / 2 sigma^2).

    The textbook MGF term sqrt(pi/2) e^{s^2/2} (erf(s/sqrt2) + 1), s =
    sigma t, is evaluated as sqrt(2 pi) exp(s^2/2 + log Phi(s)) to stay
    finite and cancellation-free for very negative s.
    """

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    _DEEP = -300.0       # mgf switches to the Mills-ratio series here
    _DEEP_MEAN = -30.0   # the derivative cancels earlier and switches sooner

    @staticmethod
    def _tail_term(s):
        # sqrt(pi/2) * e^{s^2/2} * (erf(s/sqrt2) + 1) = sqrt(2pi) e^{s^2/2} Phi(s)
        with np.errstate(all="ignore"):
            return math.sqrt(2 * math.pi) * np.exp(0.5 * s * s + special.log_ndtr(s))

    def mgf(self, t):
        scalar = np.isscalar(t)
        s = self.sigma * np.asarray(t, float)
        with np.errstate(all="ignore"):
            u = 1.0 / (s * s)
            # 1 + s * tail_term expanded with the Mills series at s -> -inf
            deep = u * (1.0 - u * (3.0 - u * (15.0 - 105.0 * u)))
            direct = 1.0 + s * self._tail_term(s)
        out = np.where(s < self._DEEP, deep, direct)
        return _ret(out, scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        s = self.sigma * np.asarray(t, float)
        with np.errstate(all="ignore"):
            u = 1.0 / (s * s)
            deep = self.sigma * u * (2.0 - u * (12.0 - 90.0 * u)) / np.abs(s)
            direct = self.sigma * (self._tail_term(s) * (1.0 + s * s) + s)
        out = np.where(s < self._DEEP_MEAN, deep, direct)
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.sigma * _SQRT_HALF_PI

    def sample(self, rng, size=None):
        return rng.rayleigh(self.sigma, size)

    def tail_power(self) -> float:
        return 2.0


_FAMILY_NAMES: dict[type, str] = {
    Degenerate: "degenerate",
    Bernoulli: "bernoulli",
    Gamma: "gamma",
    Uniform: "uniform",
    TruncGaussian: "trunc_gaussian",
    NoncentralChiSquare: "noncentral_chisq",
    Rayleigh: "rayleigh",
}

FAMILIES: dict[str, type] = {name: cls for cls, name in _FAMILY_NAMES.items()}


@dataclass(frozen=True)
class LinearCombo:
    """Non-negative linear combination sum_i a_i * X_i of independent terms.

    Represents the reciprocal Laplace scale 1/b.  The combined MGF is the
    product of the member MGFs at the scaled arguments, and the derivative
    follows the product rule.
    """

    terms: tuple[tuple[float, MgfDist], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a linear combination needs at least one term")
        coeffs = [a for a, _ in self.terms]
        if any(a < 0 or not math.isfinite(a) for a in coeffs):
            raise ValueError("coefficients must be finite and >= 0")
        if not any(a > 0 for a in coeffs):
            raise ValueError("at least one coefficient must be > 0")
        object.__setattr__(self, "terms", tuple((float(a), d) for a, d in self.terms))

    def active_terms(self) -> tuple[tuple[float, MgfDist], ...]:
        return tuple((a, d) for a, d in self.terms if a > 0)

    def mgf(self, t):
        scalar = np.isscalar(t)
        t_arr = np.asarray(t, float)
        out = np.ones_like(t_arr, dtype=float)
        for a, d in self.active_terms():
            out = out * d.mgf(a * t_arr)
        return _ret(out, scalar)

    def mgf_deriv(self, t):
        scalar = np.isscalar(t)
        t_arr = np.asarray(t, float)
        active = self.active_terms()
        vals = [d.mgf(a * t_arr) for a, d in active]
        out = np.zeros_like(t_arr, dtype=float)
        for j, (a, d) in enumerate(active):
            part = a * d.mgf_deriv(a * t_arr)
            for i, v in enumerate(vals):
                if i != j:
                    part = part * v
            out = out + part
        return _ret(out, scalar)

    def mean(self) -> float:
        return sum(a * d.mean() for a, d in self.active_terms())

    def sample(self, rng, size=None):
        if size is None:
            return sum(a * d.sample(rng) for a, d in self.active_terms())
        out = np.zeros(size)
        for a, d in self.active_terms():
            out = out + a * np.asarray(d.sample(rng, size))
        return out

    def mgf_domain_sup(self) -> float:
        sups = [d.mgf_domain_sup() / a for a, d in self.active_terms()]
        return min(sups) if sups else math.inf

    def support_min(self) -> float:
        return sum(a * d.support_min() for a, d in self.active_terms())

    def tail_power(self) -> float:
        if self.support_min() > 0:
            return math.inf
        return sum(d.tail_power() for _, d in self.active_terms())


def singleton(dist: MgfDist, coeff: float = 1.0) -> LinearCombo:
    """Wrap one distribution as a single-term combination."""
    return LinearCombo(((coeff, dist),))


# --- plain-text serialization -------------------------------------------
#
# One term per line:  "<coeff> <family> key=value key=value ..."
# A bare distribution serializes as a combo with coefficient 1.
# "inf" is accepted for unbounded parameters (TruncGaussian hi).


def format_dist(dist: MgfDist) -> str:
    parts = [dist.family]
    parts += [f"{k}={v!r}" for k, v in dist.params().items()]
    return " ".join(parts)


def parse_dist(text: str) -> MgfDist:
    tokens = text.split()
    if not tokens:
        raise ValueError("empty distribution spec")
    family = tokens[0].lower()
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; known: {sorted(FAMILIES)}")
    kwargs = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ValueError(f"malformed parameter {tok!r} (expected key=value)")
        key, val = tok.split("=", 1)
        kwargs[key] = float(val)
    return FAMILIES[family](**kwargs)


def format_combo(combo: LinearCombo) -> str:
    return "\n".join(f"{a!r} {format_dist(d)}" for a, d in combo.terms)


def parse_combo(text: str) -> LinearCombo:
    terms = []
    for raw in text.replace(";", "\n").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        coeff_tok, _, rest = line.partition(" ")
        terms.append((float(coeff_tok), parse_dist(rest)))
    return LinearCombo(tuple(terms))
