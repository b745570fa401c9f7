"""The TFisher statistic family.

``W = sum_i -2 log(p_i / tau2) * 1{p_i <= tau1}``

``tau1 = tau2 = 1`` is Fisher's combination, ``tau2 = 1`` is the truncated
product method (hard thresholding) and ``tau1 = tau2`` is soft thresholding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import njit, select
from .errors import DomainError


@dataclass(frozen=True)
class TFisherParams:
    """Truncation ``tau1`` in (0, 1] and weighting ``tau2`` in (0, inf)."""

    tau1: float
    tau2: float

    def __post_init__(self):
        t1, t2 = float(self.tau1), float(self.tau2)
        if not (0.0 < t1 <= 1.0):
            raise DomainError(f"tau1 must lie in (0, 1], got {self.tau1!r}")
        if not (t2 > 0.0 and math.isfinite(t2)):
            raise DomainError(f"tau2 must be positive and finite, got {self.tau2!r}")
        object.__setattr__(self, "tau1", t1)
        object.__setattr__(self, "tau2", t2)

    @classmethod
    def soft(cls, tau: float) -> "TFisherParams":
        return cls(tau, tau)

    @classmethod
    def hard(cls, tau: float) -> "TFisherParams":
        """Truncated product method (TPM)."""
        return cls(tau, 1.0)

    @classmethod
    def fisher(cls) -> "TFisherParams":
        return cls(1.0, 1.0)

    @property
    def log_ratio(self) -> float:
        """``log(tau1 / tau2)``; the shift applied to each passing term."""
        return math.log(self.tau1 / self.tau2)


def as_pvalues(p) -> np.ndarray:
    """Validate a p-value vector: non-empty, every entry in (0, 1]."""
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("at least one p-value is required")
    if np.any(np.isnan(arr)):
        raise DomainError("p-values must not be NaN")
    if np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise DomainError("p-values must lie in (0, 1]")
    return arr


def statistic(p, params: TFisherParams) -> float:
    """TFisher statistic of one p-value vector.

    The sum is correctly rounded (``math.fsum``), so the result does not
    depend on the order of ``p``. Returns 0 when no p-value passes the
    truncation.
    """
    arr = as_pvalues(p)
    passing = arr[arr <= params.tau1]
    if passing.size == 0:
        return 0.0
    return math.fsum(-2.0 * np.log(passing / params.tau2))


def soft_statistic(p, tau: float) -> float:
    """Soft-thresholding statistic ``sum (-2 log p_i + 2 log tau)_+``."""
    return statistic(p, TFisherParams(tau, tau))


# ---------------------------------------------------------------------------
# batch kernel: one statistic per row of a replicate matrix
# ---------------------------------------------------------------------------


@njit
def _statistic_rows_nb(pmat, tau1, tau2):
    n_rows, n_cols = pmat.shape
    out = np.zeros(n_rows)
    log_tau2 = math.log(tau2)
    for r in range(n_rows):
        acc = 0.0
        for c in range(n_cols):
            p = pmat[r, c]
            if p <= tau1:
                acc += -2.0 * (math.log(p) - log_tau2)
        out[r] = acc
    return out


def _statistic_rows_np(pmat, tau1, tau2):
    terms = -2.0 * (np.log(pmat) - math.log(tau2))
    return np.where(pmat <= tau1, terms, 0.0).sum(axis=1)


_statistic_rows = select(_statistic_rows_nb, _statistic_rows_np)


def statistic_rows(pmat, params: TFisherParams) -> np.ndarray:
    """TFisher statistic of every row of an ``(R, n)`` p-value matrix.

    No validation and plain (not correctly rounded) summation; this is the
    Monte-Carlo path.
    """
    pmat = np.ascontiguousarray(pmat, dtype=float)
    return _statistic_rows(pmat, params.tau1, params.tau2)
