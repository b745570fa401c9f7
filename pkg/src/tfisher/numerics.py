"""Special functions, quadrature and root finding.

The scalar helpers prefixed with an underscore (``_ndtr``, ``_ndtri``,
``_log_binom``, ``_log_poisson_cdf``) are written so numba can compile them;
the compiled kernels elsewhere in the package call them directly.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from ._jit import njit, select
from .errors import BracketError, ConvergenceError, DomainError

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)

# exp(-t) underflows to zero past this point
T_UNDERFLOW = 745.0

# rational approximation for the normal quantile (Acklam)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


# ---------------------------------------------------------------------------
# scalar kernels
# ---------------------------------------------------------------------------


@njit
def _ndtr(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit
def _acklam_lower(p):
    # rational start, relative error below 1.2e-9 for p in (0, 0.5]
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    return x


@njit
def _ndtri_fast(p):
    """Standard normal quantile to ~1e-9 relative, for Monte-Carlo integrands."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p > 0.5:
        return -_acklam_lower(1.0 - p)
    return _acklam_lower(p)


@njit
def _ndtri_lower(p):
    # p in (0, 0.5]
    x = _acklam_lower(p)
    if x > -37.0:
        # Acklam's start is good to ~1e-9; one Halley step reaches full precision
        for _ in range(1):
            e = _ndtr(x) - p
            u = e * SQRT2PI * math.exp(0.5 * x * x)
            x = x - u / (1.0 + 0.5 * x * u)
    else:
        # deep tail: Newton on log Phi with the asymptotic Mills ratio
        log_p = math.log(p)
        for _ in range(3):
            r = 1.0 / (x * x)
            series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)))
            log_cdf = -0.5 * x * x - LOG_SQRT2PI - math.log(-x) + math.log(series)
            x = x - (log_cdf - log_p) * series / (-x)
    return x


@njit
def _ndtri(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p > 0.5:
        return -_ndtri_lower(1.0 - p)
    return _ndtri_lower(p)


@njit
def _ndtri_array_nb(p):
    out = np.empty(p.size)
    flat = p.ravel()
    for i in range(flat.size):
        out[i] = _ndtri(flat[i])
    return out.reshape(p.shape)


def _ndtri_array_np(p):
    p = np.asarray(p, dtype=float)
    upper = p > 0.5
    q = np.where(upper, 1.0 - p, p)
    x = np.empty_like(q)
    tail = q < _P_LOW
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.sqrt(-2.0 * np.log(q[tail]))
        x[tail] = np.polyval(_C, s) / np.polyval(_D + (1.0,), s)
        r = q[~tail] - 0.5
        rr = r * r
        x[~tail] = np.polyval(_A, rr) * r / np.polyval(_B + (1.0,), rr)
        refine = x > -37.0
        for _ in range(1):
            xr = x[refine]
            e = 0.5 * special.erfc(-xr / SQRT2) - q[refine]
            u = e * SQRT2PI * np.exp(0.5 * xr * xr)
            x[refine] = xr - u / (1.0 + 0.5 * xr * u)
        deep = ~refine
        log_q = np.log(q[deep])
        for _ in range(3):
            xd = x[deep]
            r = 1.0 / (xd * xd)
            series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)))
            log_cdf = -0.5 * xd * xd - LOG_SQRT2PI - np.log(-xd) + np.log(series)
            x[deep] = xd - (log_cdf - log_q) * series / (-xd)
    x = np.where(upper, -x, x)
    x = np.where(p <= 0.0, -np.inf, x)
    return np.where(p >= 1.0, np.inf, x)


_ndtri_array = select(_ndtri_array_nb, _ndtri_array_np)


@njit
def _log_binom(n, k):
    if n <= 30:
        c = 1.0
        kk = min(k, n - k)
        for i in range(kk):
            c = c * (n - i) / (i + 1)
        return math.log(round(c))
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


_SFE = np.array([
    0.0, 0.0810614667953272582196702, 0.0413406959554092940938221,
    0.02767792568499833914878929, 0.02079067210376509311152277,
    0.01664469118982119216319487, 0.01387612882307074799874573,
    0.01189670994589177009505572, 0.010411265261972096497478567,
    0.009255462182712732917728637, 0.008330563433362871256469318,
    0.007573675487951840794972024, 0.006942840107209529865664152,
    0.006408994188004207068439631, 0.005951370112758847735624416,
    0.005554733551962801371038690,
])


@njit
def _stirlerr(n):
    # log(n!) - log(sqrt(2 pi n) (n/e)^n) for integer n >= 0
    if n <= 15:
        return _SFE[n]
    nn = float(n) * float(n)
    return (1.0 / 12 - (1.0 / 360 - (1.0 / 1260 - (1.0 / 1680 - 1.0 / (1188 * nn)) / nn) / nn) / nn) / n


@njit
def _bd0(x, m):
    # x log(x/m) + m - x without cancellation
    if abs(x - m) < 0.1 * (x + m):
        v = (x - m) / (x + m)
        s = (x - m) * v
        ej = 2.0 * x * v
        v2 = v * v
        for j in range(1, 1000):
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
        return s
    return x * math.log(x / m) + m - x


@njit
def _log_poisson_pmf(j, y):
    if j == 0:
        return -y
    return -_stirlerr(j) - _bd0(float(j), y) - 0.5 * math.log(2.0 * math.pi * j)


@njit
def _log_poisson_cdf(kmax, y):
    """log P(Poisson(y) <= kmax), summed outward from the largest term."""
    if kmax < 0:
        return -np.inf
    if y <= 0.0:
        return 0.0
    m = min(kmax, int(math.floor(y)))
    log_top = _log_poisson_pmf(m, y)
    s = 1.0
    t = 1.0
    j = m
    while j > 0:
        t *= j / y
        s += t
        if t < 1e-17 * s:
            break
        j -= 1
    t = 1.0
    j = m
    while j < kmax:
        j += 1
        t *= y / j
        s += t
        if t < 1e-17 * s:
            break
    return log_top + math.log(s)


# ---------------------------------------------------------------------------
# public special functions
# ---------------------------------------------------------------------------


def _as_float(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def std_normal_cdf(x):
    """Standard normal CDF, accurate in both tails (erfc based)."""
    arr, scalar = _as_float(x)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = 0.5 * special.erfc(-arr / SQRT2)
    return float(out) if scalar else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    arr, scalar = _as_float(p)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_quantile requires p in (0, 1)")
    out = _ndtri_array(np.atleast_1d(arr))
    return float(out[0]) if scalar else out.reshape(arr.shape)


def chisq_survival(x, df: int):
    """Chi-square survival ``P(X >= x)``; equal to 1 for ``x <= 0``."""
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df!r}")
    arr, scalar = _as_float(x)
    out = np.where(arr <= 0.0, 1.0, special.gammaincc(0.5 * df, 0.5 * np.maximum(arr, 0.0)))
    return float(out) if scalar else out


def log_binom_coeff(n: int, k: int) -> float:
    """Natural log of the binomial coefficient ``C(n, k)``."""
    if n < 0 or k < 0:
        raise DomainError("n and k must be non-negative")
    if k > n:
        raise DomainError(f"k={k} exceeds n={n}")
    return float(_log_binom(int(n), int(k)))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 500

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be at least 1")


DEFAULT_QUADRATURE = QuadratureSpec()

# 7-point Gauss / 15-point Kronrod on [-1, 1]
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_WEIGHTS_K = np.concatenate([_WK[:-1], _WK[::-1]])
_WEIGHTS_G = np.zeros(15)
_WEIGHTS_G[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gauss_kronrod(g, a, b):
    half = 0.5 * (b - a)
    vals = g(0.5 * (a + b) + half * _NODES)
    k = half * np.dot(_WEIGHTS_K, vals)
    gq = half * np.dot(_WEIGHTS_G, vals)
    return k, abs(k - gq)


def _adaptive(g, breakpoints, spec: QuadratureSpec):
    heap = []
    total = 0.0
    total_err = 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        val, err = _gauss_kronrod(g, a, b)
        heapq.heappush(heap, (-err, a, b, val))
        total += val
        total_err += err
    pieces = len(heap)
    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if pieces >= spec.max_subdivisions:
            raise ConvergenceError(
                f"quadrature did not reach tolerance in {spec.max_subdivisions} subdivisions",
                best_estimate=total,
                error_estimate=total_err,
            )
        neg_err, a, b, val = heapq.heappop(heap)
        mid = 0.5 * (a + b)
        if not (a < mid < b):
            # interval can no longer be split in floating point
            raise ConvergenceError(
                "quadrature interval collapsed", best_estimate=total, error_estimate=total_err
            )
        v1, e1 = _gauss_kronrod(g, a, mid)
        v2, e2 = _gauss_kronrod(g, mid, b)
        heapq.heappush(heap, (-e1, a, mid, v1))
        heapq.heappush(heap, (-e2, mid, b, v2))
        total += v1 + v2 - val
        total_err += e1 + e2 + neg_err
        pieces += 1
    # re-add from scratch to shed accumulated rounding
    return math.fsum(item[3] for item in heap)


_T_BREAKS = np.array([0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, T_UNDERFLOW])


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    log_endpoint: bool = False,
) -> float:
    """Adaptive Gauss-Kronrod integral of ``f`` over ``[lo, hi]``.

    ``f`` is called with a 1-d array of abscissae and must return an array
    of the same shape.

    With ``log_endpoint=True`` the lower endpoint may carry an integrable
    singularity of logarithmic type: the integral is rewritten through
    ``x = lo + (hi - lo) * exp(-t)`` over ``t`` in ``[0, 745]``, which turns
    every ``log(x - lo)`` power into a polynomial in ``t`` times ``exp(-t)``.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise DomainError("integration limits must be finite")
    if hi == lo:
        return 0.0
    if hi < lo:
        return -integrate(f, hi, lo, spec, log_endpoint)

    def plain(x):
        return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)

    if not log_endpoint:
        return _adaptive(plain, np.array([lo, hi]), spec)

    width = hi - lo

    def mapped(t):
        jac = width * np.exp(-t)
        x = lo + jac
        out = np.zeros_like(t)
        live = x > lo
        if np.any(live):
            out[live] = plain(x[live]) * jac[live]
        return out

    return _adaptive(mapped, _T_BREAKS, spec)


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


def find_root(f: Callable[[float], float], bracket: RootBracket, tol: float = 1e-12,
              max_iter: int = 500) -> float:
    """Root of ``f`` inside ``bracket`` by safeguarded secant steps.

    A secant step is taken whenever it lands inside the current bracket and
    the previous step shrank the bracket by at least half; otherwise the
    bracket is bisected. The bracket therefore at least halves every two
    iterations.
    """
    a, b = float(bracket.lo), float(bracket.hi)
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise BracketError(f"no sign change on [{a}, {b}]: f={fa:.3g}, {fb:.3g}")
    bisect = False
    for _ in range(max_iter):
        width = b - a
        x = b - fb * (b - a) / (fb - fa)
        if bisect or not (a < x < b):
            x = 0.5 * (a + b)
        fx = f(x)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(fa):
            a, fa = x, fx
        else:
            b, fb = x, fx
        bisect = (b - a) > 0.5 * width
        if b - a <= tol:
            break
    else:
        raise ConvergenceError("root finder exhausted its iterations", best_estimate=0.5 * (a + b))
    x = b - fb * (b - a) / (fb - fa)
    return x if a <= x <= b else 0.5 * (a + b)
