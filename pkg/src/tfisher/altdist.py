"""TFisher under a Gaussian-mixture alternative.

Input statistics follow ``X_i ~ eps N(mu, 1) + (1 - eps) N(0, 1)`` and the
p-values are ``P_i = Phi_bar(X_i)`` (or ``2 Phi_bar(|X_i|)`` when two-sided).
Their CDF ``D`` on [0, 1] drives everything: the per-term moments of
``Y = -2 log(P / tau2) 1{P <= tau1}`` are integrals against ``D'``, and the
sum ``W`` is approximated by a skew-normal law matched to three moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .errors import DomainError, FitError
from .nulldist import _check_n, critical_value
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec, integrate
from .statistic import TFisherParams

# largest |skewness| a skew-normal law can reach
SN_MAX_SKEWNESS = 0.5 * (4.0 - math.pi) * (2.0 / (math.pi - 2.0)) ** 1.5


@dataclass(frozen=True)
class SignalModel:
    """Mixture fraction ``epsilon``, signal mean ``mu`` and group size ``n``."""

    epsilon: float
    mu: float
    n: int = 1
    two_sided: bool = False

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")
        if not (self.mu >= 0.0 and math.isfinite(self.mu)):
            raise DomainError(f"mu must be finite and non-negative, got {self.mu!r}")
        object.__setattr__(self, "n", _check_n(self.n))


@dataclass(frozen=True)
class DistortionFunction:
    """CDF ``d`` of an alternative p-value, its density, and ``d_prime - 1``.

    ``d_prime_excess`` is kept separately so that weak signals do not lose
    their digits to cancellation against the identity.
    """

    d: Callable
    d_prime: Callable
    d_prime_excess: Optional[Callable] = None

    def excess(self, x):
        if self.d_prime_excess is not None:
            return self.d_prime_excess(x)
        return self.d_prime(x) - 1.0


@dataclass(frozen=True)
class SkewNormalParams:
    """Location ``xi``, scale ``omega`` and shape ``alpha``.

    ``fallback`` marks a two-moment normal fit used because the requested
    skewness is beyond the skew-normal range.
    """

    xi: float
    omega: float
    alpha: float
    fallback: bool = False

    def __post_init__(self):
        if not self.omega > 0.0:
            raise DomainError(f"omega must be positive, got {self.omega!r}")

    def moments(self):
        """Mean, variance and third central moment."""
        delta = self.alpha / math.sqrt(1.0 + self.alpha ** 2)
        b = self.omega * delta * math.sqrt(2.0 / math.pi)
        return (self.xi + b, self.omega ** 2 - b * b, 0.5 * (4.0 - math.pi) * b ** 3)

    def sf(self, w):
        return stats.skewnorm.sf(w, self.alpha, loc=self.xi, scale=self.omega)


def identity_distortion() -> DistortionFunction:
    """``D(x) = x``: p-values under H0."""
    return DistortionFunction(
        d=lambda x: np.asarray(x, dtype=float),
        d_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        d_prime_excess=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def gaussian_mixture_distortion(model: SignalModel) -> DistortionFunction:
    """Closed-form ``D`` and ``D'`` for the Gaussian mixture alternative.

    One-sided: ``D(x) = (1 - eps) x + eps Phi_bar(Phi_bar^{-1}(x) - mu)`` and
    ``D'(x) - 1 = eps (exp(mu z - mu^2 / 2) - 1)`` with ``z = Phi_bar^{-1}(x)``.
    """
    eps, mu = model.epsilon, model.mu
    half_mu2 = 0.5 * mu * mu

    if model.two_sided:
        def d(x):
            x = np.asarray(x, dtype=float)
            z = -special.ndtri(0.5 * x)
            return (1.0 - eps) * x + eps * (special.ndtr(mu - z) + special.ndtr(-z - mu))

        def excess(x):
            z = -special.ndtri(0.5 * np.asarray(x, dtype=float))
            return eps * 0.5 * (np.expm1(mu * z - half_mu2) + np.expm1(-mu * z - half_mu2))
    else:
        def d(x):
            x = np.asarray(x, dtype=float)
            return (1.0 - eps) * x + eps * special.ndtr(mu + special.ndtri(x))

        def excess(x):
            z = -special.ndtri(np.asarray(x, dtype=float))
            return eps * np.expm1(mu * z - half_mu2)

    def d_prime(x):
        return 1.0 + excess(x)

    return DistortionFunction(d=d, d_prime=d_prime, d_prime_excess=excess)


def delta(d: DistortionFunction, x):
    """``D(x) - x``; zero at both endpoints."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("x must lie in [0, 1]")
    out = np.asarray(d.d(x), dtype=float) - x
    out = np.where((x == 0.0) | (x == 1.0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def _null_raw_moments(params: TFisherParams):
    # tau1 * E[(2 (T - c))^k], T ~ Exp(1), c = log(tau1 / tau2)
    c = params.log_ratio
    t1 = params.tau1
    return (
        t1 * 2.0 * (1.0 - c),
        t1 * 4.0 * (2.0 - 2.0 * c + c * c),
        t1 * 8.0 * (6.0 - 6.0 * c + 3.0 * c * c - c ** 3),
    )


def alt_moments(d: DistortionFunction, params: TFisherParams,
                spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """First three raw moments of ``Y = -2 log(P / tau2) 1{P <= tau1}`` under ``D``.

    Computed as ``int_0^tau1 (-2 log(v / tau2))^k D'(v) dv``: the identity
    part of ``D'`` in closed form plus a quadrature of ``D' - 1``.
    """
    log_tau2 = math.log(params.tau2)
    base = _null_raw_moments(params)
    out = []
    for k, b in zip((1, 2, 3), base):
        def f(v, k=k):
            return (-2.0 * (np.log(v) - log_tau2)) ** k * d.excess(v)
        out.append(b + integrate(f, 0.0, params.tau1, spec, log_endpoint=True))
    return tuple(out)


def sn_fit(mean: float, variance: float, third_central: float) -> SkewNormalParams:
    """Skew-normal law with the given first three moments (closed form).

    When the standardized skewness exceeds the skew-normal range the fit
    degrades to a normal law with matching mean and variance, marked by
    ``fallback=True``.
    """
    if not (variance > 0.0 and math.isfinite(variance)):
        raise FitError(f"variance must be positive and finite, got {variance!r}")
    if not (math.isfinite(mean) and math.isfinite(third_central)):
        raise FitError("moments must be finite")
    r = math.copysign(abs(2.0 * third_central / (4.0 - math.pi)) ** (1.0 / 3.0), third_central)
    denom = 2.0 * variance + (2.0 - math.pi) * r * r
    if denom <= 0.0:
        return SkewNormalParams(mean, math.sqrt(variance), 0.0, fallback=True)
    alpha = math.copysign(math.sqrt(math.pi * r * r / denom), third_central)
    return SkewNormalParams(mean - r, math.sqrt(variance + r * r), alpha)


def alt_distribution(model: SignalModel, params: TFisherParams,
                     spec: QuadratureSpec = DEFAULT_QUADRATURE) -> SkewNormalParams:
    """Skew-normal approximation of ``W`` over ``model.n`` p-values."""
    m1, m2, m3 = alt_moments(gaussian_mixture_distortion(model), params, spec)
    var1 = m2 - m1 * m1
    third1 = m3 - 3.0 * m1 * m2 + 2.0 * m1 ** 3
    n = model.n
    return sn_fit(n * m1, n * var1, n * third1)


def alt_survival(w, model: SignalModel, params: TFisherParams):
    """Approximate ``P_H1(W >= w)`` from the fitted skew-normal law."""
    out = alt_distribution(model, params).sf(w)
    return float(out) if np.ndim(out) == 0 else out


def power(model: SignalModel, params: TFisherParams, alpha: float = 0.05) -> float:
    """Power of the level-``alpha`` TFisher test under ``model``."""
    w_crit = critical_value(alpha, model.n, params)
    return float(alt_distribution(model, params).sf(w_crit))
