"""Asymptotic efficiency of TFisher under the Gaussian mixture alternative.

Per-term quantities for ``Y = -log(P / tau2) 1{P <= tau1}``:

* ``E0``, ``V0``: null mean and variance (closed form);
* ``Delta = E1 - E0``: mean shift under H1;
* ``V1``: variance under H1.

From these, Bahadur efficiency ``c = Delta^2 / V0``, the asymptotic power
rate ``b = Delta / sqrt(V1)`` and the asymptotic power efficiency
``a = z_alpha sqrt(V0 / V1) - sqrt(n) Delta / sqrt(V1)`` (smaller is
better). All H1 integrals are taken against ``D' - 1``, which is ``eps``
times a function of ``mu`` alone; ``Delta`` is therefore exactly linear in
``eps``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from ._jit import njit, select
from .altdist import DistortionFunction, SignalModel, delta, gaussian_mixture_distortion
from .errors import BracketError, DomainError
from .numerics import QuadratureSpec, RootBracket, find_root, integrate
from .statistic import TFisherParams

_TIGHT = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-12, max_subdivisions=2000)


class Kind(str, Enum):
    BE = "BE"
    APR = "APR"
    APE = "APE"

    @property
    def minimize(self) -> bool:
        return self is Kind.APE


@dataclass(frozen=True)
class EfficiencyConfig:
    """Sample size and level entering the APE."""

    n: int = 50
    alpha: float = 0.05

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def z_alpha(self) -> float:
        return float(-special.ndtri(self.alpha))

    @property
    def c_n(self) -> float:
        return math.sqrt(self.n) / self.z_alpha


@dataclass(frozen=True)
class GridSpec:
    """Lattice ``tau1 in {s1, 2 s1, ..., tau1_max}``, ``tau2 in {s2, ..., tau2_max}``."""

    tau1_step: float = 0.001
    tau2_step: float = 0.001
    tau1_max: float = 1.0
    tau2_max: float = 10.0

    def __post_init__(self):
        if not (self.tau1_step > 0 and self.tau2_step > 0):
            raise DomainError("grid steps must be positive")
        if not (0 < self.tau1_max <= 1.0 and self.tau2_max > 0):
            raise DomainError("tau1_max must lie in (0, 1] and tau2_max must be positive")

    def tau1(self) -> np.ndarray:
        k = int(round(self.tau1_max / self.tau1_step))
        return np.round(self.tau1_step * np.arange(1, k + 1), 12)

    def tau2(self) -> np.ndarray:
        k = int(round(self.tau2_max / self.tau2_step))
        return np.round(self.tau2_step * np.arange(1, k + 1), 12)


@dataclass(frozen=True)
class EfficiencySurface:
    """Efficiency values on a ``(tau1, tau2)`` lattice.

    ``maximizer`` indexes the extremal matrix entry (the largest BE/APR or
    the smallest APE); ``refined`` is the result of a coordinate-descent
    pass at one tenth of the grid steps starting there.
    """

    kind: Kind
    tau1: np.ndarray
    tau2: np.ndarray
    values: np.ndarray
    maximizer: tuple
    max_value: float
    refined: tuple = field(default=None)
    refined_value: float = field(default=float("nan"))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau1", "tau2", "value"])
            for i, t1 in enumerate(self.tau1):
                for j, t2 in enumerate(self.tau2):
                    writer.writerow([repr(float(t1)), repr(float(t2)), repr(float(self.values[i, j]))])


# ---------------------------------------------------------------------------
# unit-epsilon integrals
# ---------------------------------------------------------------------------


def _unit_excess(mu):
    """``(D'(u) - 1) / eps`` for the one-sided Gaussian mixture."""
    half_mu2 = 0.5 * mu * mu

    def h(u):
        return np.expm1(-mu * special.ndtri(u) - half_mu2)

    return h


def _unit_delta(mu, tau):
    """``(D(tau) - tau) / eps``."""
    return float(special.ndtr(mu + special.ndtri(tau)) - tau)


def _unit_integrals(mu, lo, hi, spec=_TIGHT):
    """``int_lo^hi -log(u) h(u) du`` and ``int_lo^hi log(u)^2 h(u) du``."""
    h = _unit_excess(mu)
    log_end = lo == 0.0
    a = integrate(lambda u: -np.log(u) * h(u), lo, hi, spec, log_endpoint=log_end)
    b = integrate(lambda u: np.log(u) ** 2 * h(u), lo, hi, spec, log_endpoint=log_end)
    return a, b


@dataclass(frozen=True)
class _PerTerm:
    delta: float
    v0: float
    v1: float


def _per_term(model: SignalModel, params: TFisherParams) -> _PerTerm:
    eps, mu = model.epsilon, model.mu
    t1 = params.tau1
    log_t2 = math.log(params.tau2)
    a_unit, b_unit = _unit_integrals(mu, 0.0, t1)
    d_unit = _unit_delta(mu, t1)
    out = _combine(t1, log_t2, eps, a_unit, b_unit, d_unit)
    return _PerTerm(*out)


@njit
def _combine(t1, log_t2, eps, a_unit, b_unit, d_unit):
    log_t1 = math.log(t1)
    shift = 1.0 - log_t1 + log_t2
    v0 = t1 * (1.0 + (1.0 - t1) * shift * shift)
    dlt = eps * (a_unit + log_t2 * d_unit)
    d_t1 = t1 + eps * d_unit
    i1 = -eps * a_unit + t1 * log_t1 - t1
    i2 = eps * b_unit + t1 * (log_t1 * log_t1 - 2.0 * log_t1 + 2.0)
    v1 = i2 - i1 * i1 + 2.0 * log_t2 * i1 * (d_t1 - 1.0) + log_t2 * log_t2 * d_t1 * (1.0 - d_t1)
    return dlt, v0, v1


def be(model: SignalModel, params: TFisherParams) -> float:
    """Bahadur efficiency ``Delta^2 / V0``."""
    q = _per_term(model, params)
    return q.delta ** 2 / q.v0


def apr(model: SignalModel, params: TFisherParams) -> float:
    """Asymptotic power rate ``Delta / sqrt(V1)``."""
    q = _per_term(model, params)
    return q.delta / math.sqrt(q.v1)


def ape(model: SignalModel, params: TFisherParams, config: EfficiencyConfig = EfficiencyConfig()) -> float:
    """Asymptotic power efficiency; smaller means more power."""
    q = _per_term(model, params)
    return (config.z_alpha * math.sqrt(q.v0 / q.v1)
            - math.sqrt(config.n) * q.delta / math.sqrt(q.v1))


_EVALUATORS = {Kind.BE: lambda m, p, c: be(m, p),
               Kind.APR: lambda m, p, c: apr(m, p),
               Kind.APE: lambda m, p, c: ape(m, p, c)}


# ---------------------------------------------------------------------------
# surface kernel
# ---------------------------------------------------------------------------


@njit
def _surface_nb(tau1, a_unit, b_unit, d_unit, log_tau2, eps, kind, z_alpha, sqrt_n):
    m1, m2 = tau1.size, log_tau2.size
    out = np.empty((m1, m2))
    for i in range(m1):
        for j in range(m2):
            dlt, v0, v1 = _combine(tau1[i], log_tau2[j], eps, a_unit[i], b_unit[i], d_unit[i])
            if kind == 0:
                out[i, j] = dlt * dlt / v0
            elif v1 <= 0.0:
                out[i, j] = np.nan
            elif kind == 1:
                out[i, j] = dlt / math.sqrt(v1)
            else:
                out[i, j] = z_alpha * math.sqrt(v0 / v1) - sqrt_n * dlt / math.sqrt(v1)
    return out


def _surface_np(tau1, a_unit, b_unit, d_unit, log_tau2, eps, kind, z_alpha, sqrt_n):
    t1 = tau1[:, None]
    lt2 = log_tau2[None, :]
    log_t1 = np.log(t1)
    shift = 1.0 - log_t1 + lt2
    v0 = t1 * (1.0 + (1.0 - t1) * shift * shift)
    dlt = eps * (a_unit[:, None] + lt2 * d_unit[:, None])
    if kind == 0:
        return dlt * dlt / v0
    d_t1 = t1 + eps * d_unit[:, None]
    i1 = -eps * a_unit[:, None] + t1 * log_t1 - t1
    i2 = eps * b_unit[:, None] + t1 * (log_t1 * log_t1 - 2.0 * log_t1 + 2.0)
    v1 = i2 - i1 * i1 + 2.0 * lt2 * i1 * (d_t1 - 1.0) + lt2 * lt2 * d_t1 * (1.0 - d_t1)
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.where(v1 > 0.0, np.sqrt(np.where(v1 > 0.0, v1, 1.0)), np.nan)
        if kind == 1:
            return dlt / root
        return z_alpha * np.sqrt(v0) / root - sqrt_n * dlt / root


_surface = select(_surface_nb, _surface_np)

_KIND_CODE = {Kind.BE: 0, Kind.APR: 1, Kind.APE: 2}


def _cumulative_unit_integrals(mu, tau1):
    """``A``, ``B`` at every grid ``tau1``, integrating segment by segment."""
    a = np.empty(tau1.size)
    b = np.empty(tau1.size)
    acc_a = acc_b = 0.0
    lo = 0.0
    for i, hi in enumerate(tau1):
        da, db = _unit_integrals(mu, lo, float(hi))
        acc_a += da
        acc_b += db
        a[i], b[i] = acc_a, acc_b
        lo = float(hi)
    return a, b


def surface(kind, model: SignalModel, config: EfficiencyConfig = EfficiencyConfig(),
            grid: GridSpec = GridSpec()):
    """``(tau1, tau2, values)`` of one efficiency measure over the lattice."""
    kind = Kind(kind)
    tau1, tau2 = grid.tau1(), grid.tau2()
    a_unit, b_unit = _cumulative_unit_integrals(model.mu, tau1)
    d_unit = special.ndtr(model.mu + special.ndtri(tau1)) - tau1
    values = _surface(tau1, a_unit, b_unit, d_unit, np.log(tau2), float(model.epsilon),
                      _KIND_CODE[kind], config.z_alpha, math.sqrt(config.n))
    return tau1, tau2, values


def _extremum(values, minimize):
    filled = np.where(np.isnan(values), np.inf if minimize else -np.inf, values)
    flat = np.argmin(filled) if minimize else np.argmax(filled)
    return np.unravel_index(flat, values.shape)


def optimize(kind, model: SignalModel, config: EfficiencyConfig = EfficiencyConfig(),
             grid: GridSpec = GridSpec(), refine: bool = True) -> EfficiencySurface:
    """Grid search for the most efficient ``(tau1, tau2)``.

    Exhaustive over ``grid``; ties go to the lexicographically smallest
    ``(tau1, tau2)``. With ``refine`` a coordinate descent at one tenth of
    the grid steps starts from the grid extremum.
    """
    kind = Kind(kind)
    tau1, tau2, values = surface(kind, model, config, grid)
    i, j = _extremum(values, kind.minimize)
    best = (float(tau1[i]), float(tau2[j]))
    best_value = float(values[i, j])
    refined, refined_value = best, best_value
    if refine:
        refined, refined_value = _refine(kind, model, config, grid, best, best_value)
    return EfficiencySurface(kind, tau1, tau2, values, best, best_value, refined, refined_value)


def _refine(kind, model, config, grid, start, start_value):
    evaluate = _EVALUATORS[kind]
    sign = 1.0 if kind.minimize else -1.0
    steps = (grid.tau1_step / 10.0, grid.tau2_step / 10.0)
    limits = ((steps[0], grid.tau1_max), (steps[1], grid.tau2_max))
    point, value = list(start), sign * start_value
    improved = True
    while improved:
        improved = False
        for axis in (0, 1):
            for direction in (-1.0, 1.0):
                while True:
                    trial = list(point)
                    trial[axis] = round(point[axis] + direction * steps[axis], 12)
                    lo, hi = limits[axis]
                    if not (lo <= trial[axis] <= hi):
                        break
                    v = evaluate(model, TFisherParams(*trial), config)
                    if not (math.isfinite(v) and sign * v < value):
                        break
                    point, value, improved = trial, sign * v, True
    return tuple(point), sign * value


# ---------------------------------------------------------------------------
# boundary functions
# ---------------------------------------------------------------------------


def g_tilde(k: int, mu: float, spec: QuadratureSpec = _TIGHT) -> float:
    """``int_0^1 log(u)^k (exp(mu Phi^{-1}(1 - u) - mu^2 / 2) - 1) du``."""
    if k not in (1, 2):
        raise DomainError(f"k must be 1 or 2, got {k!r}")
    if not (mu > 0.0 and math.isfinite(mu)):
        raise DomainError(f"mu must be positive, got {mu!r}")
    h = _unit_excess(mu)
    return integrate(lambda u: np.log(u) ** k * h(u), 0.0, 1.0, spec, log_endpoint=True)


def _cutoff_function(mu):
    return 1.0 + g_tilde(1, mu)


def mu_lower_bound() -> float:
    """Smallest ``mu`` above which soft thresholding has a BE local maximum.

    Root of ``1 + g1(mu)`` on [0.5, 1.5].
    """
    return find_root(_cutoff_function, RootBracket(0.5, 1.5), tol=1e-10)


def boundary_b(mu: float) -> float:
    """``h_b(mu)``: the APR boundary ``(1 + g1) / (g1^2 - g1 - g2)``."""
    if mu <= mu_lower_bound():
        raise DomainError(f"h_b is undefined for mu <= {mu_lower_bound():.5f}")
    g1, g2 = g_tilde(1, mu), g_tilde(2, mu)
    return (1.0 + g1) / (g1 * g1 - g1 - g2)


def _ha_parts(mu, config):
    g1, g2 = g_tilde(1, mu), g_tilde(2, mu)
    s = 1.0 - config.c_n
    num = s * (1.0 + g1) + 2.0 * g1 + g2
    den = s * (g1 * g1 - g1 - g2) + 2.0 * g1 + g2
    return num, den


def boundary_a(mu: float, config: EfficiencyConfig = EfficiencyConfig()) -> float:
    """``h_a(mu)``: the APE boundary at sample size ``config.n``."""
    if not (mu > 0.0 and math.isfinite(mu)):
        raise DomainError(f"mu must be positive, got {mu!r}")
    num, den = _ha_parts(mu, config)
    if den <= 0.0:
        raise DomainError(f"h_a denominator is not positive at mu={mu}")
    if num <= 0.0:
        raise DomainError(f"mu={mu} is not above the h_a lower bound")
    return num / den


def mu_prime_lower_bound(config: EfficiencyConfig = EfficiencyConfig(),
                         bracket: RootBracket = RootBracket(0.05, 3.0)) -> float:
    """Zero of the ``h_a`` numerator in ``mu``."""
    return find_root(lambda m: _ha_parts(m, config)[0], bracket, tol=1e-10)


# ---------------------------------------------------------------------------
# stationary point and its local-maximum check
# ---------------------------------------------------------------------------


def _stationary_function(d: DistortionFunction, tau: float) -> float:
    inner = integrate(lambda u: np.log(u) * d.excess(u), 0.0, tau, _TIGHT, log_endpoint=True)
    return inner - delta(d, tau) * (math.log(tau) - (2.0 - tau) / (1.0 - tau))


def be_stationary_tau(d: DistortionFunction, lo: float = 1e-8, hi: float = 1.0 - 1e-6,
                      n_scan: int = 400) -> float:
    """Soft-thresholding ``tau*`` where both partials of the BE vanish.

    The first sign change of the defining function on a log-spaced scan of
    ``[lo, hi]`` is refined to 1e-12.
    """
    taus = np.geomspace(lo, hi, n_scan)
    prev_t, prev_f = None, None
    for t in taus:
        f = _stationary_function(d, float(t))
        if prev_f is not None and (f == 0.0 or np.sign(f) != np.sign(prev_f)):
            return find_root(lambda x: _stationary_function(d, x),
                             RootBracket(prev_t, float(t)), tol=1e-12)
        prev_t, prev_f = float(t), f
    raise BracketError("the stationary-point equation has no sign change on the scan")


def local_max_condition(d: DistortionFunction, tau_star: float) -> bool:
    """Sufficient second-order check at a soft-thresholding stationary point.

    True iff ``delta(tau) > (2 - tau) delta'(tau)``. For ``delta' > 0`` this is
    ``delta / delta' > 2 - tau``; for ``delta' <= 0`` it holds automatically,
    which for the Gaussian mixture is the region ``tau > Phi_bar(mu / 2)``.

    The check is not necessary: for strong signals (``mu`` above about 1.15)
    it returns False at points that are local maxima. The Hessian of the BE
    at ``tau1 = tau2 = tau`` is negative definite exactly when
    ``delta (3 - 6 tau + 2 tau^2) > tau (2 - tau) (1 - tau) delta'``.
    """
    if not (0.0 < tau_star < 1.0):
        raise DomainError(f"tau_star must lie in (0, 1), got {tau_star!r}")
    dv = delta(d, tau_star)
    dp = float(d.excess(np.array(tau_star)))
    return bool(dv > (2.0 - tau_star) * dp)
