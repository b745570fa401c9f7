"""Exit criteria 1-10.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary, then asserts it.
"""
import itertools
import math

import numpy as np
import pytest
from scipy import stats

from tfisher import (EfficiencyConfig, GridSpec, SignalModel, TauGrid, TFisherParams,
                     boundary_a, boundary_b, mu_lower_bound, null_survival, optimize, power)
from tfisher.assoc import qq_points, run_association
from tfisher.montecarlo import (ARTP, ATPM, SimulationPlan, simulate_power,
                                simulate_statistics)

pytestmark = pytest.mark.acceptance

# grid points one step apart differ by slightly more than the step in binary
GRID_SLACK = 1e-9


def test_criterion_1_exact_null(criterion):
    n, reps = 20, 100_000
    worst = 0.0
    for params in (TFisherParams(0.05, 0.05), TFisherParams(0.25, 0.75)):
        w = np.sort(simulate_statistics(SimulationPlan.null(n, params, replicates=reps, seed=1)))
        for tail in (0.2, 0.1, 0.05, 0.01):
            t = w[int((1 - tail) * reps)]
            emp = (reps - np.searchsorted(w, t, side="left")) / reps
            exact = null_survival(t, n, params)
            se = math.sqrt(exact * (1 - exact) / reps)
            worst = max(worst, abs(emp - exact) / se)
    ok = criterion("1", worst <= 3.0, f"max |exact - empirical| = {worst:.2f} SE (limit 3)")
    assert ok


def test_criterion_2_fisher_reduction(criterion):
    w = np.linspace(0.0, 200.0, 50)
    worst = 0.0
    for n in (1, 3, 10, 50):
        got = null_survival(w, n, TFisherParams(1.0, 1.0))
        worst = max(worst, float(np.max(np.abs(got - stats.chi2.sf(w, 2 * n)))))
    ok = criterion("2", worst <= 1e-10, f"max abs error {worst:.2e} (limit 1e-10)")
    assert ok


@pytest.mark.parametrize("mu,tau1,tau2,value", [(0.5, 0.9, 1.28, 0.071), (1.0, 0.39, 0.39, 0.394),
                                                (1.5, 0.05, 0.05, 1.674)])
def test_criterion_3_be_surfaces(criterion, mu, tau1, tau2, value):
    surf = optimize("BE", SignalModel(0.5, mu), EfficiencyConfig(), GridSpec(0.01, 0.01, 1.0, 10.0),
                    refine=False)
    t1, t2 = surf.maximizer
    ok = (abs(t1 - tau1) <= 0.01 + GRID_SLACK and abs(t2 - tau2) <= 0.01 + GRID_SLACK
          and abs(surf.max_value - value) <= 0.002)
    criterion("3", ok, f"mu={mu}: ({t1:.2f}, {t2:.2f}) BE {surf.max_value:.4f} vs "
                       f"({tau1}, {tau2}) {value}")
    assert ok


def test_criterion_4_mu_lower_bound(criterion):
    mu = mu_lower_bound()
    ok = criterion("4", abs(mu - 0.84865) <= 5e-4, f"mu_lower_bound = {mu:.7f} (0.84865 +- 5e-4)")
    assert ok


@pytest.mark.parametrize("mu", [1.0, 1.5])
def test_criterion_5_epsilon_invariance(criterion, mu):
    maxima = [optimize("BE", SignalModel(eps, mu), EfficiencyConfig(),
                       GridSpec(0.01, 0.01, 1.0, 10.0), refine=False).maximizer
              for eps in (0.1, 0.5, 0.9)]
    spread = max(max(abs(a[i] - b[i]) for i in (0, 1)) for a, b in itertools.combinations(maxima, 2))
    ok = spread <= 0.01 + GRID_SLACK
    criterion("5", ok, f"mu={mu}: maximizers {[(round(a, 2), round(b, 2)) for a, b in maxima]}")
    assert ok


def test_criterion_6_sn_power(criterion):
    failures, cells = [], 0
    for n, eps, mu in itertools.product((30, 100), (0.05, 0.2), (1.0, 2.0)):
        model = SignalModel(eps, mu, n)
        for t1, t2 in ((0.1, 0.5), (0.05, 0.05), (0.05, 0.25)):
            params = TFisherParams(t1, t2)
            calc = power(model, params, 0.05)
            sim = simulate_power(SimulationPlan(model, params, replicates=10_000, seed=7), 0.05)
            cells += 1
            if abs(calc - sim.power) > max(0.02, 3 * sim.se):
                failures.append(f"(n={n}, eps={eps}, mu={mu}, tau=({t1},{t2})) "
                                f"{calc:.4f} vs {sim.power:.4f}")
    ok = not failures
    criterion("6", ok, f"{cells - len(failures)}/{cells} cells within max(0.02, 3 SE)"
                       + (": failing " + ", ".join(failures) if failures else ""))
    assert ok


@pytest.mark.parametrize("n", [50, 1000])
def test_criterion_7_omnibus_calibration(criterion, n):
    grid = TauGrid.soft(np.round(np.arange(1, 11) / 10, 1))
    reps = 10_000
    bad, parts = [], []
    for level in (0.01, 0.05, 0.1):
        emp = simulate_power(SimulationPlan.null(n, grid, replicates=reps, seed=3), level).power
        se = math.sqrt(level * (1 - level) / reps)
        conservative = emp <= level or emp - level <= 2 * se
        parts.append(f"{level:g}->{emp:.4f}")
        if not (abs(emp - level) <= 0.01 and conservative):
            bad.append(level)
    ok = not bad
    criterion("7", ok, f"n={n}: nominal->empirical {', '.join(parts)}"
                       + (f" (fails at {bad})" if bad else ""))
    assert ok


def _pw(model, method):
    return simulate_power(SimulationPlan(model, method, replicates=10_000, seed=1), 0.05)


def test_criterion_8_power_orderings(criterion):
    soft, hard, fisher = TFisherParams.soft(0.05), TFisherParams.hard(0.05), TFisherParams.fisher()
    sparse, dense = SignalModel(0.02, 3.0, 100), SignalModel(0.5, 1.0, 100)

    a_soft, a_hard = _pw(sparse, soft).power, _pw(sparse, hard).power
    ok_a = criterion("8", a_soft > a_hard, f"(a) soft {a_soft:.4f} > TPM {a_hard:.4f}")

    b_fisher, b_soft = _pw(dense, fisher).power, _pw(dense, soft).power
    ok_b = criterion("8", b_fisher > b_soft, f"(b) Fisher {b_fisher:.4f} > soft {b_soft:.4f}")

    margins = []
    for model in (sparse, dense, SignalModel(0.1, 2.0, 100)):
        surf = optimize("APE", model, EfficiencyConfig(n=model.n), GridSpec(0.01, 0.01))
        best = TFisherParams(*(surf.refined or surf.maximizer))
        opt = _pw(model, best).power
        margins.append(min(opt - _pw(model, m).power for m in (soft, hard, fisher)))
    ok_c = criterion("8", min(margins) >= -0.005,
                     f"(c) optimal-APE margin min {min(margins):.4f} (>= -0.005)")

    notes, ok_d = [], True
    for model in (sparse, dense):
        o = _pw(model, TauGrid.soft((0.01, 0.05, 0.5, 1.0)))
        for other in (_pw(model, ARTP.default(model.n)), _pw(model, ATPM())):
            tol = 3 * math.hypot(o.se, other.se)
            ok_d &= o.power >= other.power - tol
            notes.append(f"{other.method} {other.power:.4f}")
        notes.append(f"oTFisher {o.power:.4f}")
    criterion("8", ok_d, "(d) " + ", ".join(notes))
    assert ok_a and ok_b and ok_c and ok_d


MUS = np.linspace(1.0, 3.0, 41)


def test_criterion_9a_boundary_convergence(criterion):
    gap = max(abs(boundary_a(mu, EfficiencyConfig(n=10 ** 6)) - boundary_b(mu)) for mu in MUS)
    ok = criterion("9a", gap <= 1e-3, f"max |h_a(n=1e6) - h_b| on [1,3] = {gap:.5f} (limit 1e-3)")
    assert ok


def test_criterion_9b_boundary_order(criterion):
    diff = min(boundary_a(mu, EfficiencyConfig(n=50)) - boundary_a(mu, EfficiencyConfig(n=5000))
               for mu in MUS)
    ok = criterion("9b", diff >= 0.0, f"min h_a(50) - h_a(5000) on [1,3] = {diff:.5f} (>= 0)")
    assert ok


def test_criterion_10_association_calibration(criterion, tmp_path):
    rng = np.random.default_rng(10)
    n_obs, n_snv, genes = 600, 8, 500
    z = rng.standard_normal((n_obs, 2))
    y = (rng.random(n_obs) < 1 / (1 + np.exp(-(-0.3 + z @ [0.4, -0.2])))).astype(int)
    (tmp_path / "y.txt").write_text("\n".join(map(str, y)) + "\n")
    (tmp_path / "z.csv").write_text("z1,z2\n" + "\n".join(f"{a:.17g},{b:.17g}" for a, b in z) + "\n")
    paths = []
    header = ",".join(f"snv{j}" for j in range(n_snv))
    for i in range(genes):
        maf = rng.uniform(0.05, 0.4, n_snv)
        g = rng.binomial(2, maf, size=(n_obs, n_snv))
        path = tmp_path / f"gene{i:03d}.csv"
        path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in g) + "\n")
        paths.append(path)
    se = math.sqrt(0.05 * 0.95 / genes)
    soft = run_association(tmp_path / "y.txt", paths, TFisherParams.soft(0.05), tmp_path / "z.csv",
                           workers=4)
    fisher = run_association(tmp_path / "y.txt", paths, TFisherParams.fisher(),
                             tmp_path / "z.csv", workers=4)
    p_soft = np.array([g.p_value for g in soft.genes])
    p_fisher = np.array([g.p_value for g in fisher.genes])
    r_soft, r_fisher = np.mean(p_soft <= 0.05), np.mean(p_fisher <= 0.05)
    qq = qq_points(p_soft)
    flat = int(np.sum(qq[:, 1] == 1.0))
    ok = r_soft <= 0.05 + 3 * se and abs(r_fisher - 0.05) <= 3 * se and flat > 0
    criterion("10", ok, f"rejection soft {r_soft:.3f} (<= {0.05 + 3 * se:.3f}), Fisher "
                        f"{r_fisher:.3f} (0.05 +- {3 * se:.3f}); {flat} soft genes at p=1")
    assert ok
