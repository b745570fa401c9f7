"""Omnibus TFisher test (oTFisher) over a grid of parameter pairs.

``W_o = min_j G_j(W_j)`` with ``G_j`` the exact null survival of the j-th
statistic. Its p-value is approximated through the joint normal limit of
``(W_1, ..., W_m)``:

    P(W_o > w_o) ~= P(W'_j < G_j^{-1}(w_o) for all j),  W' ~ MVN(mu, Sigma)

and the rectangle probability is computed with Genz's separation of
variables and a randomized lattice rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from ._jit import njit, select
from .errors import DomainError, InfeasibleLevelError, ModelError
from .nulldist import _check_n, critical_value, null_survival
from .numerics import _ndtr, _ndtri_fast
from .statistic import TFisherParams, as_pvalues, statistic

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
           73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151)


@dataclass(frozen=True)
class TauGrid:
    """Ordered, duplicate-free list of parameter pairs."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        if not pairs:
            raise DomainError("a grid needs at least one parameter pair")
        if not all(isinstance(p, TFisherParams) for p in pairs):
            raise DomainError("grid entries must be TFisherParams")
        if len(set(pairs)) != len(pairs):
            raise DomainError("grid entries must be distinct")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def soft(cls, taus: Iterable[float]) -> "TauGrid":
        return cls(tuple(TFisherParams.soft(t) for t in taus))

    @classmethod
    def hard(cls, taus: Iterable[float]) -> "TauGrid":
        return cls(tuple(TFisherParams.hard(t) for t in taus))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, j):
        return self.pairs[j]


DEFAULT_GRID = TauGrid.soft((0.01, 0.05, 0.5, 1.0))


@dataclass(frozen=True)
class OmnibusNullModel:
    """Mean and covariance of the joint normal limit of the grid statistics."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.covariance, dtype=float)
        m = mean.size
        if cov.shape != (m, m):
            raise DomainError(f"covariance must be {m}x{m}, got {cov.shape}")
        if not np.all(np.diag(cov) > 0.0):
            raise ModelError("covariance diagonal must be positive")
        cov = 0.5 * (cov + cov.T)
        smallest = np.linalg.eigvalsh(cov)[0]
        if smallest < -1e-10 * np.trace(cov):
            raise ModelError(f"covariance is not positive semi-definite (eigenvalue {smallest:.3g})")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def repaired(self) -> "OmnibusNullModel":
        """Copy with ``1e-10 * trace / m`` added to the diagonal."""
        cov = np.array(self.covariance)
        cov[np.diag_indices_from(cov)] += 1e-10 * np.trace(cov) / self.dim
        return OmnibusNullModel(self.mean, cov)


@dataclass(frozen=True)
class MVNResult:
    """Rectangle probability with its randomized-QMC standard error."""

    value: float
    error: float
    n_points: int = field(default=0)

    def __float__(self):
        return self.value


def omnibus_statistic(p, grid: TauGrid = DEFAULT_GRID):
    """``(w_o, j)``: the smallest exact p-value over the grid and its first index."""
    arr = as_pvalues(p)
    pvals = [null_survival(statistic(arr, params), arr.size, params) for params in grid]
    j = int(np.argmin(pvals))
    return float(pvals[j]), j


def omnibus_null_model(n: int, grid: TauGrid = DEFAULT_GRID) -> OmnibusNullModel:
    """Joint normal limit of ``(W_1, ..., W_m)`` under H0."""
    n = _check_n(n)
    t1 = np.array([p.tau1 for p in grid])
    t2 = np.array([p.tau2 for p in grid])
    mean = 2.0 * n * t1 * (1.0 + np.log(t2 / t1))
    t1jk = np.minimum.outer(t1, t1)
    cross = t1jk * (1.0 + np.log(t2[:, None] / t1jk)) * (1.0 + np.log(t2[None, :] / t1jk))
    single = t1 * (1.0 + np.log(t2 / t1))
    cov = 4.0 * n * t1jk + 4.0 * n * (cross - np.outer(single, single))
    return OmnibusNullModel(mean, cov)


# ---------------------------------------------------------------------------
# Genz separation of variables
# ---------------------------------------------------------------------------


def _reorder_cholesky(cov, b):
    """Cholesky factor with Genz-Bretz ordering (tightest expected bound first).

    Returns ``(L, b_perm, perm)``. Columns with a vanishing conditional
    variance get a zero pivot and are treated as deterministic.
    """
    m = b.size
    cov = np.array(cov, dtype=float)
    b = np.array(b, dtype=float)
    perm = np.arange(m)
    L = np.zeros((m, m))
    y = np.zeros(m)
    eps = 1e-12 * max(np.max(np.diag(cov)), 1e-300)
    for i in range(m):
        best, best_prob = i, np.inf
        for j in range(i, m):
            var = cov[j, j] - L[j, :i] @ L[j, :i]
            shift = L[j, :i] @ y[:i]
            if var > eps:
                prob = special.ndtr((b[j] - shift) / math.sqrt(var))
            else:
                prob = 1.0 if b[j] - shift >= 0.0 else 0.0
            if prob < best_prob:
                best, best_prob = j, prob
        if best != i:
            for arr in (b, perm):
                arr[[i, best]] = arr[[best, i]]
            cov[[i, best], :] = cov[[best, i], :]
            cov[:, [i, best]] = cov[:, [best, i]]
            L[[i, best], :] = L[[best, i], :]
        var = cov[i, i] - L[i, :i] @ L[i, :i]
        if var > eps:
            piv = math.sqrt(var)
            L[i, i] = piv
            for j in range(i + 1, m):
                L[j, i] = (cov[j, i] - L[j, :i] @ L[i, :i]) / piv
            bt = (b[i] - L[i, :i] @ y[:i]) / piv
            prob = special.ndtr(bt)
            y[i] = -math.exp(-0.5 * bt * bt) / math.sqrt(2 * math.pi) / max(prob, 1e-300)
        else:
            y[i] = 0.0
    return L, b, perm


@njit
def _genz_sum_nb(L, b, z, shift, n_points):
    m = b.size
    total = 0.0
    y = np.zeros(m)
    for k in range(1, n_points + 1):
        # antithetic pair from the tent-periodized lattice point
        for anti in range(2):
            prod = 1.0
            for i in range(m):
                s = 0.0
                for j in range(i):
                    s += L[i, j] * y[j]
                piv = L[i, i]
                if piv > 0.0:
                    e = _ndtr((b[i] - s) / piv)
                else:
                    e = 1.0 if b[i] - s >= 0.0 else 0.0
                prod *= e
                if prod == 0.0:
                    break
                if i < m - 1:
                    if piv > 0.0:
                        x = k * z[i] + shift[i]
                        x = x - math.floor(x)
                        u = abs(2.0 * x - 1.0)
                        if anti == 1:
                            u = 1.0 - u
                        q = u * e
                        if q < 1e-300:
                            q = 1e-300
                        elif q > 1.0 - 1e-16:
                            q = 1.0 - 1e-16
                        y[i] = _ndtri_fast(q)
                    else:
                        y[i] = 0.0
            total += prod
    return total / (2.0 * n_points)


def _genz_sum_np(L, b, z, shift, n_points):
    m = b.size
    k = np.arange(1, n_points + 1, dtype=float)[:, None]
    x = k * z[None, :] + shift[None, :]
    u = np.abs(2.0 * (x - np.floor(x)) - 1.0)
    u = np.concatenate([u, 1.0 - u])  # antithetic
    y = np.zeros((u.shape[0], m))
    prod = np.ones(u.shape[0])
    for i in range(m):
        s = y[:, :i] @ L[i, :i]
        if L[i, i] > 0.0:
            e = special.ndtr((b[i] - s) / L[i, i])
        else:
            e = (b[i] - s >= 0.0).astype(float)
        prod *= e
        if i < m - 1 and L[i, i] > 0.0:
            y[:, i] = special.ndtri(np.clip(u[:, i] * e, 1e-300, 1.0 - 1e-16))
    return float(prod.sum() / (2.0 * n_points))


_genz_sum = select(_genz_sum_nb, _genz_sum_np)


def mvn_rectangle(model: OmnibusNullModel, upper: Sequence[float], *, seed: int = 0,
                  tol: float = 1e-4, n_shifts: int = 10, max_points: int = 1 << 18) -> MVNResult:
    """``P(W' < upper)`` for ``W' ~ MVN(model.mean, model.covariance)``.

    Randomized Richtmyer lattice on the Genz-transformed integrand; the
    lattice size doubles until the standard error over ``n_shifts`` random
    shifts is at most ``tol``. Deterministic for a given ``seed``.
    """
    upper = np.asarray(upper, dtype=float).ravel()
    m = model.dim
    if upper.size != m:
        raise DomainError(f"upper has length {upper.size}, model has dimension {m}")
    if np.any(np.isnan(upper)):
        raise DomainError("upper bounds must not be NaN")
    b = upper - model.mean
    if np.any(b == -np.inf):
        return MVNResult(0.0, 0.0, 0)
    finite = np.isfinite(b)
    if not finite.all():
        # +inf bounds are unconstrained; marginalize them out
        if not finite.any():
            return MVNResult(1.0, 0.0, 0)
        sub = OmnibusNullModel(model.mean[finite], model.covariance[np.ix_(finite, finite)])
        return mvn_rectangle(sub, upper[finite], seed=seed, tol=tol, n_shifts=n_shifts,
                             max_points=max_points)
    if m == 1:
        return MVNResult(float(special.ndtr(b[0] / math.sqrt(model.covariance[0, 0]))), 0.0, 0)
    if m > len(_PRIMES) + 1:
        raise DomainError(f"dimension {m} exceeds the supported maximum {len(_PRIMES) + 1}")
    L, b_perm, _ = _reorder_cholesky(model.covariance, b)
    z = np.sqrt(np.array(_PRIMES[: m - 1], dtype=float))
    z -= np.floor(z)
    rng = np.random.default_rng(seed)
    n_points = 512
    while True:
        shifts = rng.random((n_shifts, m - 1))
        est = np.array([_genz_sum(L, b_perm, z, shifts[s], n_points) for s in range(n_shifts)])
        value = float(est.mean())
        error = float(est.std(ddof=1) / math.sqrt(n_shifts))
        if error <= tol or 2 * n_points > max_points:
            return MVNResult(min(max(value, 0.0), 1.0), error, n_points * n_shifts * 2)
        n_points *= 2


def _grid_bounds(w_o, n, grid):
    bounds = []
    for params in grid:
        try:
            bounds.append(critical_value(w_o, n, params))
        except InfeasibleLevelError:
            # w_o above the attainable level: threshold at the point mass
            bounds.append(0.0)
    return np.array(bounds)


def omnibus_pvalue_at(w_o: float, n: int, grid: TauGrid = DEFAULT_GRID, *, seed: int = 0,
                      tol: float = 1e-4, method: str = "mvn") -> MVNResult:
    """Approximate ``P_H0(W_o <= w_o)`` for an observed omnibus value ``w_o``.

    Parameters
    ----------
    w_o : float
        Observed omnibus statistic (the smallest grid p-value).
    n : int
        Number of combined p-values.
    grid : TauGrid
        Parameter pairs of the omnibus.
    seed, tol : int, float
        Seed and standard-error target of the lattice integrator.
    method : {"mvn", "copula"}
        ``"mvn"`` integrates the joint normal limit of the statistics up to
        the exact per-test critical values. ``"copula"`` keeps the exact
        marginals and borrows only the correlation matrix, integrating a
        standard normal vector up to ``Phi^{-1}(1 - w_o)``; it is
        conservative for small ``n``.
    """
    n = _check_n(n)
    if method not in ("mvn", "copula"):
        raise DomainError(f"unknown method {method!r}")
    if not (0.0 <= w_o <= 1.0):
        raise DomainError(f"w_o must lie in [0, 1], got {w_o!r}")
    if w_o >= 1.0:
        return MVNResult(1.0, 0.0, 0)
    if w_o <= 0.0:
        return MVNResult(0.0, 0.0, 0)
    if len(grid) == 1:
        # a single test is its own omnibus; its p-value is exact
        return MVNResult(float(w_o), 0.0, 0)
    model = omnibus_null_model(n, grid).repaired()
    if method == "copula":
        sd = np.sqrt(np.diag(model.covariance))
        corr = OmnibusNullModel(np.zeros(model.dim), model.covariance / np.outer(sd, sd))
        upper = np.full(model.dim, -special.ndtri(w_o))
        rect = mvn_rectangle(corr, upper, seed=seed, tol=tol)
    else:
        rect = mvn_rectangle(model, _grid_bounds(w_o, n, grid), seed=seed, tol=tol)
    return MVNResult(min(max(1.0 - rect.value, 0.0), 1.0), rect.error, rect.n_points)


def omnibus_pvalue(p, grid: TauGrid = DEFAULT_GRID, *, seed: int = 0, tol: float = 1e-4,
                   method: str = "mvn") -> float:
    """oTFisher p-value of ``p`` over ``grid``; see :func:`omnibus_pvalue_at`."""
    arr = as_pvalues(p)
    w_o, _ = omnibus_statistic(arr, grid)
    return omnibus_pvalue_at(w_o, arr.size, grid, seed=seed, tol=tol, method=method).value
