"""Grouped (gene-level) association testing with TFisher.

For a binary phenotype ``Y``, covariates ``Z`` (with intercept) and the
genotype matrix ``G`` of one gene, the marginal score statistics are

    U = G'(Y - Y0),   Sigma = G'WG - G'WZ (Z'WZ)^{-1} Z'WG,

with ``Y0`` the fitted probabilities of the covariate-only logistic model
and ``W = diag(Y0 (1 - Y0))``. ``X = Sigma^{-1/2} U`` is approximately
standard normal under H0 and its two-sided p-values feed TFisher or
oTFisher.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import DomainError, FitError, ModelError, ParseError
from .nulldist import null_pvalue
from .omnibus import TauGrid, omnibus_pvalue, omnibus_statistic
from .statistic import TFisherParams, statistic

EIGEN_FLOOR = 1e-8


@dataclass(frozen=True)
class GroupTestInput:
    """Phenotype (length N), genotypes (N x n) and covariates (N x c, with intercept)."""

    phenotype: np.ndarray
    genotype: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.phenotype, dtype=float).ravel()
        g = np.asarray(self.genotype, dtype=float)
        z = np.asarray(self.covariates, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if z.ndim == 1:
            z = z[:, None]
        n_obs = y.size
        if g.shape[0] != n_obs or z.shape[0] != n_obs:
            raise DomainError(f"row counts differ: phenotype {n_obs}, genotype {g.shape[0]}, "
                              f"covariates {z.shape[0]}")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DomainError("phenotype must be coded 0/1")
        for name, arr in (("genotype", g), ("covariates", z)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains missing or non-finite values")
        if n_obs <= z.shape[1]:
            raise DomainError(f"need more observations ({n_obs}) than covariates ({z.shape[1]})")
        if not np.any(np.ptp(z, axis=0) == 0.0):
            raise DomainError("covariates must include an intercept column")
        constant = np.flatnonzero(np.ptp(g, axis=0) == 0.0)
        if constant.size:
            raise DomainError(f"genotype columns {constant.tolist()} are constant")
        object.__setattr__(self, "phenotype", y)
        object.__setattr__(self, "genotype", g)
        object.__setattr__(self, "covariates", z)


@dataclass(frozen=True)
class NullFit:
    coef: np.ndarray
    fitted: np.ndarray
    iterations: int


@dataclass(frozen=True)
class ScoreResult:
    """Scores, their covariance, decorrelated statistics and input p-values.

    ``rank`` is the number of decorrelated components kept; it is below the
    number of SNVs when ``sigma_hat`` is numerically singular.
    """

    u: np.ndarray
    sigma_hat: np.ndarray
    x_decorrelated: np.ndarray
    input_pvalues: np.ndarray
    rank: int


@dataclass(frozen=True)
class GeneResult:
    gene: str
    n_snv: int
    statistic: float
    p_value: float


def with_intercept(z: Optional[np.ndarray], n_obs: int) -> np.ndarray:
    """Prepend a column of ones unless a constant column is already present."""
    ones = np.ones((n_obs, 1))
    if z is None or np.size(z) == 0:
        return ones
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if np.any(np.ptp(z, axis=0) == 0.0):
        return z
    return np.hstack([ones, z])


def fit_null_logistic(phenotype, covariates, tol: float = 1e-8, max_iter: int = 100) -> NullFit:
    """Logistic regression of ``phenotype`` on ``covariates`` by IRLS.

    Newton steps with step halving on the log-likelihood; converged when the
    max-norm of the score ``Z'(y - p)`` is at most ``tol``.
    """
    y = np.asarray(phenotype, dtype=float).ravel()
    z = np.asarray(covariates, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if np.linalg.matrix_rank(z) < z.shape[1]:
        raise FitError("covariate matrix is rank deficient")
    if y.sum() == 0 or y.sum() == y.size:
        raise FitError("phenotype has a single class; the fit is separated")

    def loglik(eta):
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    coef = np.zeros(z.shape[1])
    eta = z @ coef
    ll = loglik(eta)
    for it in range(1, max_iter + 1):
        p = special.expit(eta)
        grad = z.T @ (y - p)
        if np.max(np.abs(grad)) <= tol:
            return NullFit(coef, p, it - 1)
        w = p * (1.0 - p)
        if np.min(w) < 1e-14:
            raise FitError("fitted probabilities reached 0 or 1; the outcome is separated")
        step = np.linalg.solve(z.T @ (w[:, None] * z), grad)
        scale = 1.0
        while True:
            trial = coef + scale * step
            trial_eta = z @ trial
            trial_ll = loglik(trial_eta)
            if trial_ll >= ll - 1e-12 * abs(ll) or scale < 1e-10:
                break
            scale *= 0.5
        coef, eta, ll = trial, trial_eta, trial_ll
        if np.max(np.abs(coef)) > 50.0:
            raise FitError("coefficients diverge; the outcome is separated")
    p = special.expit(eta)
    if np.max(np.abs(z.T @ (y - p))) <= tol:
        return NullFit(coef, p, max_iter)
    raise FitError(f"IRLS did not converge in {max_iter} iterations")


def decorrelate(u: np.ndarray, sigma: np.ndarray):
    """``(X, rank)`` with ``X = Sigma^{-1/2} u``.

    Eigen-components below ``EIGEN_FLOOR * lambda_max`` are dropped; in that
    case ``X = Lambda_r^{-1/2} V_r' u`` has ``rank`` entries.
    """
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    top = vals[-1]
    if not top > 0.0:
        raise ModelError("score covariance is zero")
    keep = vals > EIGEN_FLOOR * top
    rank = int(keep.sum())
    proj = (vecs[:, keep].T @ u) / np.sqrt(vals[keep])
    if rank == u.size:
        return vecs @ proj, rank
    return proj, rank


def score_statistics(data: GroupTestInput, fit: Optional[NullFit] = None,
                     two_sided: bool = True) -> ScoreResult:
    """Marginal score statistics of every SNV and their decorrelated p-values."""
    if fit is None:
        fit = fit_null_logistic(data.phenotype, data.covariates)
    y0 = fit.fitted
    g, z = data.genotype, data.covariates
    u = g.T @ (data.phenotype - y0)
    sw = np.sqrt(y0 * (1.0 - y0))
    gw, zw = sw[:, None] * g, sw[:, None] * z
    q, _ = np.linalg.qr(zw)
    resid = gw - q @ (q.T @ gw)
    sigma = resid.T @ resid
    x, rank = decorrelate(u, sigma)
    if two_sided:
        pv = 2.0 * special.ndtr(-np.abs(x))
    else:
        pv = special.ndtr(-x)
    pv = np.clip(pv, np.finfo(float).tiny, 1.0)
    return ScoreResult(u, sigma, x, pv, rank)


Method = Union[TFisherParams, TauGrid]


def gene_test(data: GroupTestInput, method: Method, fit: Optional[NullFit] = None,
              two_sided: bool = True, seed: int = 0):
    """``(statistic, p_value, n_used)`` of one gene.

    ``statistic`` is the TFisher statistic, or the omnibus ``W_o`` for a grid.
    """
    scores = score_statistics(data, fit, two_sided)
    pv = scores.input_pvalues
    if isinstance(method, TauGrid):
        w_o, _ = omnibus_statistic(pv, method)
        return w_o, omnibus_pvalue(pv, method, seed=seed), pv.size
    if isinstance(method, TFisherParams):
        return statistic(pv, method), null_pvalue(pv, method), pv.size
    raise DomainError(f"unsupported method {method!r}")


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------

_MISSING = {"", "na", "nan", "."}


def _delimiter(path: Path, first_line: str) -> str:
    if path.suffix.lower() in (".tsv", ".tab") or "\t" in first_line:
        return "\t"
    return ","


def _content_lines(path: Path):
    with open(path, newline="") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if line.strip() and not line.lstrip().startswith("#"):
                yield number, line


def _parse_float(token, path, line):
    if token.strip().lower() in _MISSING:
        raise ParseError("missing value", path, line)
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", path, line) from None


def read_table(path) -> tuple:
    """``(header, matrix)`` from a CSV/TSV file with a header row."""
    path = Path(path)
    lines = list(_content_lines(path))
    if not lines:
        raise ParseError("file is empty", path)
    delim = _delimiter(path, lines[0][1])
    header = [h.strip() for h in next(csv.reader([lines[0][1]], delimiter=delim))]
    rows = []
    for number, line in lines[1:]:
        fields = next(csv.reader([line], delimiter=delim))
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(fields)}", path, number)
        rows.append([_parse_float(f, path, number) for f in fields])
    if not rows:
        raise ParseError("no data rows", path)
    return header, np.array(rows, dtype=float)


def read_phenotype(path) -> np.ndarray:
    """One 0/1 value per line; a non-numeric first line is taken as a header."""
    path = Path(path)
    values = []
    for i, (number, line) in enumerate(_content_lines(path)):
        token = line.strip().split(",")[0].split("\t")[0]
        if i == 0:
            try:
                float(token)
            except ValueError:
                continue
        v = _parse_float(token, path, number)
        if v not in (0.0, 1.0):
            raise ParseError(f"phenotype must be 0 or 1, got {token!r}", path, number)
        values.append(v)
    if not values:
        raise ParseError("file is empty", path)
    return np.array(values)


@dataclass(frozen=True)
class PipelineResult:
    genes: list
    dropped: dict


def run_association(phenotype_path, genotype_paths: Sequence, method: Method,
                    covariates_path=None, two_sided: bool = True, workers: int = 1,
                    seed: int = 0) -> PipelineResult:
    """Gene-level p-values for every genotype file.

    Constant (monomorphic) SNV columns are dropped and counted in
    ``dropped``; a gene left without SNVs gets a p-value of NaN.
    """
    y = read_phenotype(phenotype_path)
    z = None
    if covariates_path is not None:
        _, z = read_table(covariates_path)
        if z.shape[0] != y.size:
            raise ParseError(f"{z.shape[0]} covariate rows for {y.size} phenotypes", covariates_path)
    z = with_intercept(z, y.size)
    fit = fit_null_logistic(y, z)

    def one(path):
        path = Path(path)
        _, g = read_table(path)
        if g.shape[0] != y.size:
            raise ParseError(f"{g.shape[0]} genotype rows for {y.size} phenotypes", path)
        live = np.ptp(g, axis=0) > 0.0
        n_drop = int((~live).sum())
        if not live.any():
            return GeneResult(path.stem, 0, float("nan"), float("nan")), n_drop
        data = GroupTestInput(y, g[:, live], z)
        stat, pval, n_used = gene_test(data, method, fit, two_sided, seed)
        return GeneResult(path.stem, n_used, float(stat), float(pval)), n_drop

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, genotype_paths))
    else:
        results = [one(p) for p in genotype_paths]
    genes = [r for r, _ in results]
    dropped = {r.gene: d for r, d in results if d}
    return PipelineResult(genes, dropped)


def write_gene_table(genes: Sequence[GeneResult], fh) -> None:
    fh.write("gene\tn_snv\tstatistic\tp_value\n")
    for g in genes:
        fh.write(f"{g.gene}\t{g.n_snv}\t{g.statistic:.6g}\t{g.p_value:.6g}\n")


def qq_points(pvalues) -> np.ndarray:
    """Rows ``(expected, observed)`` of sorted p-values against uniform quantiles."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    p = p[np.isfinite(p)]
    m = p.size
    expected = (np.arange(1, m + 1) - 0.5) / m
    return np.column_stack([expected, p])


def write_qq(pvalues, fh) -> None:
    fh.write("expected\tobserved\tneg_log10_expected\tneg_log10_observed\n")
    for e, o in qq_points(pvalues):
        fh.write(f"{e:.6g}\t{o:.6g}\t{-math.log10(e):.6g}\t{-math.log10(o):.6g}\n")
