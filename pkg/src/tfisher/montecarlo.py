"""Seedable Monte-Carlo harness.

Every replicate block draws from its own Philox stream keyed by
``(seed, stream, block)``; block size is fixed, so results do not depend on
how blocks are spread across worker threads. Blocks are reduced in index
order.

Besides checking the analytical routes, the harness provides comparators
that only have Monte-Carlo p-values: the rank truncation product (RTP), its
adaptive version ARTP, and the adaptive TPM (ATPM).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .altdist import SignalModel
from .errors import DomainError, InfeasibleLevelError
from .nulldist import critical_value, null_survival
from .numerics import RootBracket, find_root
from .omnibus import TauGrid, omnibus_pvalue_at
from .statistic import TFisherParams, as_pvalues, statistic_rows

BLOCK_SIZE = 4096

# stream identifiers
_MAIN, _REFERENCE, _INNER = 0, 1, 2


@dataclass(frozen=True)
class RTP:
    """Rank truncation product: ``-2`` times the sum of the ``k`` smallest log p-values."""

    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"rank must be a positive integer, got {self.k!r}")


@dataclass(frozen=True)
class ARTP:
    """Adaptive RTP over a rank set, calibrated by two simulation layers."""

    ranks: tuple
    inner: int = 1000

    def __post_init__(self):
        ranks = tuple(sorted({int(k) for k in self.ranks}))
        if not ranks or ranks[0] < 1:
            raise DomainError("ARTP needs a non-empty set of positive ranks")
        if self.inner < 1:
            raise DomainError("inner replicate count must be positive")
        object.__setattr__(self, "ranks", ranks)

    @classmethod
    def default(cls, n: int, inner: int = 1000) -> "ARTP":
        """Ranks ``{1, 0.05 n, 0.5 n, n}`` rounded and made distinct."""
        return cls(tuple(max(1, int(round(f * n))) for f in (0.0, 0.05, 0.5, 1.0)), inner)


@dataclass(frozen=True)
class ATPM:
    """Adaptive TPM: the smallest exact TPM p-value over ``taus``."""

    taus: tuple = (0.01, 0.05, 0.5, 1.0)

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise DomainError("ATPM needs at least one truncation point")
        object.__setattr__(self, "taus", taus)


Method = Union[TFisherParams, TauGrid, RTP, ARTP, ATPM]


def default_workers() -> int:
    raw = os.environ.get("TFISHER_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise DomainError(f"TFISHER_WORKERS must be an integer, got {raw!r}") from None
    return max(1, workers)


@dataclass(frozen=True)
class SimulationPlan:
    """What to simulate and how much.

    ``model.epsilon == 0`` is the null model. ``reference`` is the number of
    null replicates used to calibrate Monte-Carlo-only methods.
    """

    model: SignalModel
    method: Method
    replicates: int = 10_000
    seed: int = 0
    reference: int = 10_000
    workers: Optional[int] = None

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise DomainError("replicates must be a positive integer")
        if self.reference < 1:
            raise DomainError("reference must be a positive integer")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DomainError("seed must be a 64-bit unsigned integer")
        if isinstance(self.method, RTP) and self.method.k > self.model.n:
            raise DomainError(f"rank {self.method.k} exceeds n={self.model.n}")
        if isinstance(self.method, ARTP) and self.method.ranks[-1] > self.model.n:
            raise DomainError(f"rank {self.method.ranks[-1]} exceeds n={self.model.n}")

    @classmethod
    def null(cls, n: int, method: Method, **kwargs) -> "SimulationPlan":
        return cls(SignalModel(0.0, 0.0, n), method, **kwargs)

    @property
    def is_null(self) -> bool:
        return self.model.epsilon == 0.0 or self.model.mu == 0.0

    @property
    def n(self) -> int:
        return self.model.n


@dataclass(frozen=True)
class SurvivalEstimate:
    w: np.ndarray
    survival: np.ndarray
    se: np.ndarray


@dataclass(frozen=True)
class PowerEstimate:
    method: str
    params: str
    n: int
    epsilon: float
    mu: float
    alpha: float
    power: float
    se: float

    def row(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# drawing
# ---------------------------------------------------------------------------


def _generator(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def draw_pvalues(model: SignalModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """``(size, n)`` matrix of p-values under ``model``."""
    n = model.n
    x = rng.standard_normal((size, n))
    if model.epsilon > 0.0 and model.mu != 0.0:
        x += model.mu * (rng.random((size, n)) < model.epsilon)
    if model.two_sided:
        p = 2.0 * special.ndtr(-np.abs(x))
    else:
        p = special.ndtr(-x)
    return np.clip(p, np.finfo(float).tiny, 1.0)


def _map_blocks(fn, model, seed, stream, total, workers):
    """Apply ``fn`` to every block's p-values; concatenate in block order."""
    sizes = [BLOCK_SIZE] * (total // BLOCK_SIZE)
    if total % BLOCK_SIZE:
        sizes.append(total % BLOCK_SIZE)

    def run(b):
        return fn(draw_pvalues(model, sizes[b], _generator(seed, stream, b)))

    workers = workers or default_workers()
    if workers == 1 or len(sizes) == 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def rtp_statistic(p, k: int) -> float:
    """``-2`` times the sum of the logs of the ``k`` smallest p-values."""
    arr = as_pvalues(p)
    if int(k) != k or not (1 <= k <= arr.size):
        raise DomainError(f"k must lie in [1, {arr.size}], got {k!r}")
    smallest = np.partition(arr, k - 1)[:k]
    return math.fsum(-2.0 * np.log(smallest))


def _rtp_rows(pmat, ranks):
    """RTP statistics for each rank in ``ranks`` (ascending); shape ``(R, len(ranks))``."""
    kmax = ranks[-1]
    if kmax < pmat.shape[1]:
        part = np.partition(pmat, kmax - 1, axis=1)[:, :kmax]
    else:
        part = pmat
    part = np.sort(part, axis=1)
    cum = np.cumsum(-2.0 * np.log(part), axis=1)
    return cum[:, np.asarray(ranks) - 1]


def _mc_pvalue_upper(reference_sorted, observed):
    """``(1 + #{ref >= obs}) / (1 + R)`` for a sorted reference sample."""
    r = reference_sorted.size
    above = r - np.searchsorted(reference_sorted, observed, side="left")
    return (1.0 + above) / (1.0 + r)


def _mc_pvalue_lower(reference_sorted, observed):
    """``(1 + #{ref <= obs}) / (1 + R)`` for a sorted reference sample."""
    r = reference_sorted.size
    below = np.searchsorted(reference_sorted, observed, side="right")
    return (1.0 + below) / (1.0 + r)


def _null_model(plan):
    return SignalModel(0.0, 0.0, plan.n, plan.model.two_sided)


def _atpm_minp(pmat, method):
    n = pmat.shape[1]
    out = np.full(pmat.shape[0], np.inf)
    for tau in method.taus:
        params = TFisherParams.hard(tau)
        out = np.minimum(out, null_survival(statistic_rows(pmat, params), n, params))
    return out


def _artp_inner_reference(plan):
    method = plan.method
    ref = _map_blocks(lambda p: _rtp_rows(p, method.ranks), _null_model(plan), plan.seed,
                      _INNER, method.inner, plan.workers)
    return [np.sort(ref[:, j]) for j in range(len(method.ranks))]


def _artp_minp(pmat, ranks, inner_sorted):
    stats_ = _rtp_rows(pmat, ranks)
    pv = np.column_stack([_mc_pvalue_upper(inner_sorted[j], stats_[:, j])
                          for j in range(len(ranks))])
    return pv.min(axis=1)


def _omnibus_threshold(alpha, n, grid):
    """``t*`` with ``omnibus_pvalue_at(t*) = alpha``; rejection is ``W_o <= t*``."""
    def f(t):
        return omnibus_pvalue_at(t, n, grid).value - alpha

    lo = alpha / (10.0 * len(grid))
    while f(lo) > 0.0:
        lo /= 10.0
        if lo < 1e-300:
            raise InfeasibleLevelError(f"no omnibus threshold reaches level {alpha:g}")
    return find_root(f, RootBracket(lo, 1.0), tol=1e-12)


def _omnibus_wo(pmat, grid):
    n = pmat.shape[1]
    out = np.full(pmat.shape[0], np.inf)
    for params in grid:
        out = np.minimum(out, null_survival(statistic_rows(pmat, params), n, params))
    return out


def _rejection_rule(plan: SimulationPlan, alpha: float):
    """Function mapping a p-value block to booleans: does the level-alpha test reject."""
    method, n = plan.method, plan.n
    if isinstance(method, TFisherParams):
        crit = critical_value(alpha, n, method)
        return lambda p: statistic_rows(p, method) >= crit
    if isinstance(method, TauGrid):
        t_star = _omnibus_threshold(alpha, n, method)
        return lambda p: _omnibus_wo(p, method) <= t_star
    null = _null_model(plan)
    if isinstance(method, RTP):
        ref = np.sort(_map_blocks(lambda p: _rtp_rows(p, (method.k,))[:, 0], null, plan.seed,
                                  _REFERENCE, plan.reference, plan.workers))
        return lambda p: _mc_pvalue_upper(ref, _rtp_rows(p, (method.k,))[:, 0]) <= alpha
    if isinstance(method, ATPM):
        ref = np.sort(_map_blocks(lambda p: _atpm_minp(p, method), null, plan.seed,
                                  _REFERENCE, plan.reference, plan.workers))
        return lambda p: _mc_pvalue_lower(ref, _atpm_minp(p, method)) <= alpha
    if isinstance(method, ARTP):
        inner = _artp_inner_reference(plan)
        ref = np.sort(_map_blocks(lambda p: _artp_minp(p, method.ranks, inner), null,
                                  plan.seed, _REFERENCE, plan.reference, plan.workers))
        return lambda p: _mc_pvalue_lower(ref, _artp_minp(p, method.ranks, inner)) <= alpha
    raise DomainError(f"unsupported method {method!r}")


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def simulate_statistics(plan: SimulationPlan) -> np.ndarray:
    """Raw replicate statistics for TFisher or RTP plans."""
    method = plan.method
    if isinstance(method, TFisherParams):
        fn = lambda p: statistic_rows(p, method)  # noqa: E731
    elif isinstance(method, RTP):
        fn = lambda p: _rtp_rows(p, (method.k,))[:, 0]  # noqa: E731
    else:
        raise DomainError("raw statistics are available for TFisher and RTP plans only")
    return _map_blocks(fn, plan.model, plan.seed, _MAIN, plan.replicates, plan.workers)


def simulate_null_survival(plan: SimulationPlan, w_grid: Sequence[float]) -> SurvivalEstimate:
    """Empirical ``P_H0(W >= w)`` with binomial standard errors."""
    if not plan.is_null:
        raise DomainError("simulate_null_survival needs a null plan")
    w = np.asarray(w_grid, dtype=float).ravel()
    stats_ = np.sort(simulate_statistics(plan))
    surv = (stats_.size - np.searchsorted(stats_, w, side="left")) / stats_.size
    se = np.sqrt(surv * (1.0 - surv) / stats_.size)
    return SurvivalEstimate(w, surv, se)


def describe_method(method: Method):
    """``(name, parameter string)`` used in result tables."""
    if isinstance(method, TFisherParams):
        return "TFisher", f"tau1={method.tau1:g};tau2={method.tau2:g}"
    if isinstance(method, TauGrid):
        return "oTFisher", ";".join(f"({p.tau1:g},{p.tau2:g})" for p in method)
    if isinstance(method, RTP):
        return "RTP", f"k={method.k}"
    if isinstance(method, ARTP):
        return "ARTP", "k=" + ",".join(str(k) for k in method.ranks)
    if isinstance(method, ATPM):
        return "ATPM", "tau=" + ",".join(f"{t:g}" for t in method.taus)
    raise DomainError(f"unsupported method {method!r}")


def simulate_power(plan: SimulationPlan, alpha: float = 0.05) -> PowerEstimate:
    """Fraction of replicates whose level-``alpha`` test rejects.

    For TFisher this is the fraction with exact p-value at most ``alpha``
    (the statistic reaches the exact critical value); for oTFisher the
    rejection region is ``W_o <= t*`` where the approximate omnibus p-value
    at ``t*`` equals ``alpha``. RTP, ATPM and ARTP p-values are calibrated
    against ``plan.reference`` null replicates.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    rule = _rejection_rule(plan, alpha)
    hits = _map_blocks(rule, plan.model, plan.seed, _MAIN, plan.replicates, plan.workers)
    pw = float(hits.mean())
    name, params = describe_method(plan.method)
    return PowerEstimate(name, params, plan.n, plan.model.epsilon, plan.model.mu, alpha, pw,
                         math.sqrt(pw * (1.0 - pw) / hits.size))


def rtp_pvalue(p, k: int, *, reference: int = 10_000, seed: int = 0) -> float:
    """Monte-Carlo p-value of the RTP statistic."""
    arr = as_pvalues(p)
    plan = SimulationPlan.null(arr.size, RTP(k), reference=reference, seed=seed)
    ref = np.sort(_map_blocks(lambda q: _rtp_rows(q, (k,))[:, 0], plan.model, seed, _REFERENCE,
                              reference, plan.workers))
    return float(_mc_pvalue_upper(ref, np.array([rtp_statistic(arr, k)]))[0])


def artp_pvalue(p, ranks: Sequence[int], plan: Optional[SimulationPlan] = None, *,
                inner: int = 1000, reference: int = 10_000, seed: int = 0) -> float:
    """ARTP p-value of ``p``.

    Per-rank p-values come from ``inner`` null RTP replicates; the minimum
    over ranks is calibrated against ``reference`` null replicates of that
    minimum. A ``plan`` overrides the keyword budget and seed.
    """
    arr = as_pvalues(p)
    if plan is None:
        plan = SimulationPlan.null(arr.size, ARTP(tuple(ranks), inner), reference=reference,
                                   seed=seed)
    method = plan.method
    if not isinstance(method, ARTP):
        raise DomainError("artp_pvalue needs an ARTP plan")
    if method.ranks[-1] > arr.size:
        raise DomainError(f"rank {method.ranks[-1]} exceeds n={arr.size}")
    inner_ref = _artp_inner_reference(plan)
    ref = np.sort(_map_blocks(lambda q: _artp_minp(q, method.ranks, inner_ref), _null_model(plan),
                              plan.seed, _REFERENCE, plan.reference, plan.workers))
    observed = _artp_minp(arr[None, :], method.ranks, inner_ref)
    return float(_mc_pvalue_lower(ref, observed)[0])


def atpm_pvalue(p, taus: Sequence[float] = ATPM().taus, *, reference: int = 10_000,
                seed: int = 0) -> float:
    """ATPM p-value of ``p`` calibrated against ``reference`` null replicates."""
    arr = as_pvalues(p)
    method = ATPM(tuple(taus))
    null = SignalModel(0.0, 0.0, arr.size)
    ref = np.sort(_map_blocks(lambda q: _atpm_minp(q, method), null, seed, _REFERENCE, reference,
                              None))
    return float(_mc_pvalue_lower(ref, _atpm_minp(arr[None, :], method))[0])


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

TABLE_COLUMNS = ("method", "params", "n", "epsilon", "mu", "alpha", "power", "se")


def write_power_table(rows: Sequence[PowerEstimate], fh, fmt: str = "csv") -> None:
    """Write power estimates as CSV or JSON."""
    if fmt == "csv":
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
    elif fmt == "json":
        json.dump([r.row() for r in rows], fh, indent=2)
        fh.write("\n")
    else:
        raise DomainError(f"unknown table format {fmt!r}")


def power_table_string(rows: Sequence[PowerEstimate], fmt: str = "csv") -> str:
    buf = io.StringIO()
    write_power_table(rows, buf, fmt)
    return buf.getvalue()
