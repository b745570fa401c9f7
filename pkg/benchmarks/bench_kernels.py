"""Compare the numba and numpy implementations of every hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once to compile, then ``repeat`` times per implementation;
the best wall time is reported along with the largest relative difference
between the two outputs.
"""
import argparse
import time

import numpy as np

from tfisher import _jit
from tfisher.efficiency import _cumulative_unit_integrals, _surface_nb, _surface_np
from tfisher.nulldist import _continuous_survival_nb, _continuous_survival_np
from tfisher.numerics import _ndtri_array_nb, _ndtri_array_np
from tfisher.omnibus import _genz_sum_nb, _genz_sum_np, _reorder_cholesky, omnibus_null_model, TauGrid
from tfisher.statistic import _statistic_rows_nb, _statistic_rows_np


def _cases():
    rng = np.random.default_rng(0)

    pmat = rng.uniform(size=(20_000, 100))
    yield "statistic_rows 20000x100", _statistic_rows_nb, _statistic_rows_np, (pmat, 0.05, 0.05)

    w = np.linspace(0.0, 80.0, 200)
    yield ("null survival n=500 soft", _continuous_survival_nb, _continuous_survival_np,
           (w, 500, 0.05, 0.0))
    yield ("null survival n=500 TPM", _continuous_survival_nb, _continuous_survival_np,
           (w, 500, 0.05, float(np.log(0.05))))

    p = rng.uniform(1e-300, 1.0, size=200_000)
    yield "ndtri 200000", _ndtri_array_nb, _ndtri_array_np, (p,)

    grid = TauGrid.soft(np.round(np.arange(1, 11) * 0.1, 2))
    model = omnibus_null_model(50, grid)
    upper = model.mean + 2.0 * np.sqrt(np.diag(model.covariance))
    L, b, _ = _reorder_cholesky(model.covariance, upper - model.mean)
    z = np.sqrt([2.0, 3, 5, 7, 11, 13, 17, 19, 23]) % 1.0
    shift = rng.random(9)
    yield "genz lattice m=10, 8192 pts", _genz_sum_nb, _genz_sum_np, (L, b, z, shift, 8192)

    tau1 = np.round(np.arange(1, 1001) * 0.001, 12)
    tau2 = np.round(np.arange(1, 2001) * 0.005, 12)
    a, bb = _cumulative_unit_integrals(1.5, tau1)
    d = np.linspace(0.0, 0.1, tau1.size)
    yield ("efficiency surface 1000x2000 APE", _surface_nb, _surface_np,
           (tau1, a, bb, d, np.log(tau2), 0.1, 2, 1.6448536269514722, np.sqrt(50.0)))


def _best(fn, args, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _jit.USE_NUMBA:
        print("numba disabled: the numba column runs the same code as plain Python")
    print(f"{'kernel':<36}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, nb_fn, np_fn, fargs in _cases():
        nb_fn(*fargs)  # compile
        t_nb, out_nb = _best(nb_fn, fargs, args.repeat)
        t_np, out_np = _best(np_fn, fargs, args.repeat)
        a, b = np.asarray(out_nb, dtype=float), np.asarray(out_np, dtype=float)
        scale = np.maximum(np.abs(b), 1e-300)
        diff = np.nanmax(np.abs(a - b) / scale) if a.size else 0.0
        print(f"{name:<36}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
