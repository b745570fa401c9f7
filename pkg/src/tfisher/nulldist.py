"""Exact null distribution of the TFisher statistic.

Under H0 the number of passing p-values is ``N ~ Binomial(n, tau1)`` and,
given ``N = k``, ``W + 2k log(tau1/tau2)`` is chi-square with ``2k`` degrees
of freedom. Hence

    P(W >= w) = (1 - tau1)^n 1{w <= 0}
                + sum_k Binom(k; n, tau1) * Q(k, max(w/2 + k log(tau1/tau2), 0))

with ``Q(k, y) = P(Poisson(y) <= k - 1)`` the chi-square(2k) survival at
``2y``. Every term is formed in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ._jit import njit, select
from .errors import DomainError, InfeasibleLevelError
from .numerics import _log_binom, _log_poisson_cdf, _log_poisson_pmf
from .statistic import TFisherParams, as_pvalues, statistic


@dataclass(frozen=True)
class NullMoments:
    """Per-term H0 mean and variance of ``-log(P/tau2) 1{P <= tau1}``."""

    e0: float
    v0: float


# ---------------------------------------------------------------------------
# kernels: continuous part sum_{k>=1} Binom(k) Q(k, .) for each w
# ---------------------------------------------------------------------------


@njit
def _log_binom_pmf_nb(n, tau1):
    out = np.empty(n + 1)
    if tau1 >= 1.0:
        out[:] = -np.inf
        out[n] = 0.0
        return out
    log_t = math.log(tau1)
    log_1mt = math.log1p(-tau1)
    for k in range(n + 1):
        out[k] = _log_binom(n, k) + k * log_t + (n - k) * log_1mt
    return out


@njit
def _continuous_survival_nb(w, n, tau1, log_ratio):
    lpmf = _log_binom_pmf_nb(n, tau1)
    logs = np.empty(n)
    out = np.empty(w.size)
    for i in range(w.size):
        half = 0.5 * w[i]
        if log_ratio == 0.0:
            # common argument: cumulate the Poisson terms once
            y = half if half > 0.0 else 0.0
            if y == 0.0:
                for k in range(1, n + 1):
                    logs[k - 1] = lpmf[k]
            else:
                acc = -np.inf
                for k in range(1, n + 1):
                    lp = _log_poisson_pmf(k - 1, y)
                    if acc == -np.inf:
                        acc = lp
                    elif lp > acc:
                        acc = lp + math.log1p(math.exp(acc - lp))
                    else:
                        acc = acc + math.log1p(math.exp(lp - acc))
                    logs[k - 1] = lpmf[k] + acc
        else:
            for k in range(1, n + 1):
                if lpmf[k] == -np.inf:
                    logs[k - 1] = -np.inf
                    continue
                y = half + k * log_ratio
                if y < 0.0:
                    y = 0.0
                logs[k - 1] = lpmf[k] + _log_poisson_cdf(k - 1, y)
        top = -np.inf
        for k in range(n):
            if logs[k] > top:
                top = logs[k]
        if top == -np.inf:
            out[i] = 0.0
            continue
        # Neumaier-compensated sum of exp(logs - top)
        s = 0.0
        comp = 0.0
        for k in range(n):
            if logs[k] == -np.inf:
                continue
            t = math.exp(logs[k] - top)
            tot = s + t
            if abs(s) >= abs(t):
                comp += (s - tot) + t
            else:
                comp += (t - tot) + s
            s = tot
        out[i] = math.exp(top) * (s + comp)
    return out


def _continuous_survival_np(w, n, tau1, log_ratio):
    k = np.arange(1, n + 1)
    if tau1 >= 1.0:
        lpmf = np.where(k == n, 0.0, -np.inf)
    else:
        lpmf = stats.binom.logpmf(k, n, tau1)
    out = np.empty(w.size)
    for i, wi in enumerate(w):
        y = np.maximum(0.5 * wi + k * log_ratio, 0.0)
        with np.errstate(divide="ignore"):
            if log_ratio == 0.0:
                if y[0] == 0.0:
                    logq = np.zeros(n)
                else:
                    logq = np.logaddexp.accumulate(stats.poisson.logpmf(k - 1, y[0]))
            else:
                logq = np.log(special.gammaincc(k, y))
        logs = lpmf + logq
        top = logs.max()
        if top == -np.inf:
            out[i] = 0.0
            continue
        out[i] = math.exp(top) * math.fsum(np.exp(logs[np.isfinite(logs)] - top))
    return out


_continuous_survival = select(_continuous_survival_nb, _continuous_survival_np)


def _check_n(n):
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    return int(n)


def _point_mass(n, tau1):
    return (1.0 - tau1) ** n


def _survival_array(w, n, params):
    cont = _continuous_survival(w, n, params.tau1, params.log_ratio)
    mass = np.where(w <= 0.0, _point_mass(n, params.tau1), 0.0)
    out = np.minimum(cont + mass, 1.0)
    if params.tau2 >= params.tau1:
        # every passing term is positive, so W >= 0 surely
        out[w <= 0.0] = 1.0
    return out


def null_survival(w, n: int, params: TFisherParams):
    """``P_H0(W >= w)`` for the TFisher statistic over ``n`` p-values.

    Accepts a scalar or an array of ``w``. Equals 1 for ``w <= 0`` whenever
    ``tau2 >= tau1``; for ``tau2 < tau1`` passing terms can be negative and
    the survival below zero is computed from the same formula.
    """
    n = _check_n(n)
    arr = np.asarray(w, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("w must not be NaN")
    out = _survival_array(np.atleast_1d(arr).ravel(), n, params)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def survival_above_zero(n: int, params: TFisherParams) -> float:
    """``P_H0(W > 0)``: the largest level attainable by a non-randomized test."""
    n = _check_n(n)
    return float(_continuous_survival(np.zeros(1), n, params.tau1, params.log_ratio)[0])


def null_pvalue(p, params: TFisherParams) -> float:
    """Exact p-value of the TFisher statistic of ``p``."""
    arr = as_pvalues(p)
    return null_survival(statistic(arr, params), arr.size, params)


def critical_value(alpha: float, n: int, params: TFisherParams, tol: float = 1e-10) -> float:
    """Smallest ``w`` with ``P_H0(W >= w) <= alpha``, by bisection.

    Raises :class:`InfeasibleLevelError` when ``alpha`` falls in the gap left
    by the point mass of ``W`` at zero.
    """
    n = _check_n(n)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")

    def surv(x):
        return float(_survival_array(np.array([x]), n, params)[0])

    above_zero = survival_above_zero(n, params)
    if alpha >= above_zero:
        at_zero = above_zero + _point_mass(n, params.tau1)
        if params.tau2 >= params.tau1 or alpha < at_zero:
            raise InfeasibleLevelError(
                f"level {alpha:g} is not attainable: P(W > 0) = {above_zero:.6g} for "
                f"n={n}, tau1={params.tau1:g}, tau2={params.tau2:g}"
            )
        # W can be negative; the answer lies below zero
        lo, hi = 2.0 * n * -params.log_ratio, 0.0
        lo -= 1.0
    else:
        lo, hi = 0.0, 1.0
        while surv(hi) > alpha:
            lo, hi = hi, 2.0 * hi
    # invariant: surv(lo) > alpha >= surv(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if surv(mid) > alpha:
            lo = mid
        else:
            hi = mid
    return hi


def null_moments(params: TFisherParams) -> NullMoments:
    """Closed-form per-term H0 mean and variance."""
    t1 = params.tau1
    shift = 1.0 - math.log(t1) + math.log(params.tau2)
    return NullMoments(e0=t1 * shift, v0=t1 * (1.0 + (1.0 - t1) * shift * shift))
