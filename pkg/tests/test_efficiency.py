import csv
import importlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from tfisher._jit import HAVE_NUMBA
from tfisher.altdist import SignalModel, delta, gaussian_mixture_distortion, power
from tfisher.efficiency import (EfficiencyConfig, GridSpec, Kind, ape, apr, be, be_stationary_tau,
                                boundary_a, boundary_b, g_tilde, local_max_condition,
                                mu_lower_bound, mu_prime_lower_bound, optimize, surface)
from tfisher.errors import DomainError
from tfisher.nulldist import null_moments
from tfisher.statistic import TFisherParams

eff = importlib.import_module("tfisher.efficiency")

# Frozen from an independent route: scipy.quad over z = Phi_bar^-1(u) with log_ndtr.
G_TILDE = {1.0: (-1.2317510428476552, 5.7972808197460655),
           2.0: (-3.2207481052381315, 21.980430401588325),
           3.0: (-6.069849371926184, 59.299521673264096)}
H_B = {1.0: 0.07602584631001456, 2.0: 0.2648014850362311, 3.0: 0.30938993399504083}
H_A = {1.0: (0.30607442586562195, 0.09948073638204978, 0.07768771431887914),
       2.0: (0.5292195363395621, 0.2958726552472182, 0.26703899721531205),
       3.0: (0.6311623692213315, 0.35368845809262833, 0.3126490813940386)}


def _be_hessian(model, tau):
    h = 1e-3 * tau

    def f(a, b):
        return be(model, TFisherParams(a, b))

    c = f(tau, tau)
    f11 = (f(tau + h, tau) - 2 * c + f(tau - h, tau)) / h ** 2
    f22 = (f(tau, tau + h) - 2 * c + f(tau, tau - h)) / h ** 2
    f12 = (f(tau + h, tau + h) - f(tau + h, tau - h) - f(tau - h, tau + h)
           + f(tau - h, tau - h)) / (4 * h * h)
    return np.array([[f11, f12], [f12, f22]])


class TestConfig:
    def test_constants(self):
        cfg = EfficiencyConfig(50, 0.05)
        assert cfg.z_alpha == pytest.approx(stats.norm.isf(0.05), rel=1e-15)
        assert cfg.c_n == pytest.approx(math.sqrt(50) / stats.norm.isf(0.05), rel=1e-15)

    @pytest.mark.parametrize("n,alpha", [(0, 0.05), (2.5, 0.05), (10, 0.0), (10, 1.0)])
    def test_domain(self, n, alpha):
        with pytest.raises(DomainError):
            EfficiencyConfig(n, alpha)

    def test_grid_lattice(self):
        g = GridSpec(0.01, 0.02, 1.0, 0.1)
        assert g.tau1()[0] == 0.01 and g.tau1()[-1] == 1.0 and g.tau1().size == 100
        assert g.tau2().tolist() == [0.02, 0.04, 0.06, 0.08, 0.1]

    def test_grid_domain(self):
        with pytest.raises(DomainError):
            GridSpec(tau1_step=0.0)
        with pytest.raises(DomainError):
            GridSpec(tau1_max=1.5)


class TestMeasures:
    def test_against_z_space_oracle(self):
        model = SignalModel(0.1, 2.0, 50)
        params = TFisherParams.soft(0.05)
        assert be(model, params) == pytest.approx(0.253418005128303, rel=1e-11)
        assert apr(model, params) == pytest.approx(0.18128673916239657, rel=1e-11)
        assert ape(model, params, EfficiencyConfig(50)) == pytest.approx(-0.6895460534609945,
                                                                          rel=1e-11)

    @pytest.mark.parametrize("eps,mu,t1,t2,be_ref,apr_ref", [
        (0.5, 1.0, 0.38, 0.38, 0.3945277534402944, 0.36770148758796556),
        (0.5, 0.5, 0.9, 1.28, 0.07066679983646759, 0.22419567517406028),
        (0.5, 1.5, 0.05, 0.05, 1.6737956472221507, 0.34741623127254095),
        (0.3, 1.2, 0.2, 0.7, 0.2149392346890415, 0.299508460770524),
    ])
    def test_reference_cells(self, eps, mu, t1, t2, be_ref, apr_ref):
        model, params = SignalModel(eps, mu), TFisherParams(t1, t2)
        assert be(model, params) == pytest.approx(be_ref, rel=1e-11)
        assert apr(model, params) == pytest.approx(apr_ref, rel=1e-11)

    def test_ape_without_signal_is_z_alpha(self):
        cfg = EfficiencyConfig(50, 0.05)
        assert ape(SignalModel(0.0, 2.0), TFisherParams(0.3, 0.6), cfg) == pytest.approx(
            cfg.z_alpha, rel=1e-14)

    @given(st.floats(min_value=1e-4, max_value=1.0), st.floats(min_value=0.1, max_value=4.0),
           st.floats(min_value=0.01, max_value=1.0), st.floats(min_value=0.01, max_value=5.0))
    def test_delta_is_linear_in_eps(self, eps, mu, t1, t2):
        params = TFisherParams(t1, t2)
        ref = eff._per_term(SignalModel(1.0, mu), params).delta
        got = eff._per_term(SignalModel(eps, mu), params).delta / eps
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-14)

    def test_v0_matches_null_variance(self):
        params = TFisherParams(0.2, 0.9)
        assert eff._per_term(SignalModel(0.3, 1.0), params).v0 == pytest.approx(
            null_moments(params).v0, rel=1e-14)

    def test_v1_reduces_to_v0_under_null(self):
        q = eff._per_term(SignalModel(0.0, 1.0), TFisherParams(0.4, 0.3))
        assert q.v1 == pytest.approx(q.v0, rel=1e-12)


class TestSurface:
    GRID = GridSpec(0.01, 0.01, 1.0, 2.0)

    @pytest.mark.parametrize("kind", list(Kind))
    def test_matches_pointwise(self, kind):
        model = SignalModel(0.2, 1.3)
        cfg = EfficiencyConfig(80)
        t1, t2, vals = surface(kind, model, cfg, self.GRID)
        evaluate = eff._EVALUATORS[kind]
        for i, j in [(0, 0), (4, 4), (37, 120), (99, 199), (60, 10)]:
            ref = evaluate(model, TFisherParams(t1[i], t2[j]), cfg)
            assert vals[i, j] == pytest.approx(ref, rel=1e-9)

    @pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
    def test_kernels_agree(self):
        model = SignalModel(0.1, 2.0)
        t1 = self.GRID.tau1()
        a_unit, b_unit = eff._cumulative_unit_integrals(model.mu, t1)
        d_unit = stats.norm.cdf(model.mu + stats.norm.ppf(t1)) - t1
        args = (t1, a_unit, b_unit, d_unit, np.log(self.GRID.tau2()), 0.1)
        for code in (0, 1, 2):
            a = eff._surface_nb(*args, code, 1.6448536269514722, math.sqrt(50))
            b = eff._surface_np(*args, code, 1.6448536269514722, math.sqrt(50))
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_ape_is_minimized(self):
        res = optimize(Kind.APE, SignalModel(0.1, 2.0), EfficiencyConfig(50), self.GRID)
        assert res.max_value == np.nanmin(res.values)
        assert res.refined_value <= res.max_value

    def test_be_is_maximized_and_refined(self):
        res = optimize(Kind.BE, SignalModel(0.5, 1.0), grid=self.GRID)
        assert res.max_value == np.nanmax(res.values)
        assert res.refined_value >= res.max_value
        assert abs(res.refined[0] - res.maximizer[0]) <= 0.01 + 1e-12

    def test_no_refine(self):
        res = optimize(Kind.APR, SignalModel(0.3, 1.5), grid=self.GRID, refine=False)
        assert res.refined == res.maximizer

    def test_csv(self, tmp_path):
        res = optimize(Kind.BE, SignalModel(0.5, 1.0), grid=GridSpec(0.25, 0.5, 1.0, 1.0))
        path = tmp_path / "s.csv"
        res.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["tau1", "tau2", "value"]
        assert len(rows) == 1 + 4 * 2
        assert float(rows[1][2]) == res.values[0, 0]

    def test_epsilon_invariance_of_be_argmax(self):
        grid = GridSpec(0.01, 0.01, 1.0, 2.0)
        for mu in (1.0, 1.5):
            arg = {optimize(Kind.BE, SignalModel(e, mu), grid=grid, refine=False).maximizer
                   for e in (0.1, 0.5, 0.9)}
            assert len(arg) == 1

    def test_optimal_ape_power_dominates(self):
        # at (n=50, eps=0.1, mu=2) the APE minimizer is at least as powerful as the classics
        model = SignalModel(0.1, 2.0, 50)
        res = optimize(Kind.APE, model, EfficiencyConfig(50), self.GRID)
        best = power(model, TFisherParams(*res.refined))
        for t1, t2 in [(0.05, 0.05), (0.05, 1.0), (1.0, 1.0)]:
            assert best - power(model, TFisherParams(t1, t2)) >= -0.005


class TestBoundaries:
    @pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
    def test_g_tilde(self, mu):
        assert g_tilde(1, mu) == pytest.approx(G_TILDE[mu][0], rel=1e-11)
        assert g_tilde(2, mu) == pytest.approx(G_TILDE[mu][1], rel=1e-11)

    def test_g_tilde_riemann_oracle(self):
        # midpoint rule in t = -log(u) on a fine grid
        mu = 1.7
        t = (np.arange(400_000) + 0.5) * 1e-4
        u = np.exp(-t)
        h = np.expm1(mu * stats.norm.isf(u) - 0.5 * mu * mu)
        for k in (1, 2):
            ref = np.sum((-t) ** k * h * u) * 1e-4
            assert g_tilde(k, mu) == pytest.approx(ref, rel=1e-7)

    def test_mu_lower_bound(self):
        assert mu_lower_bound() == pytest.approx(0.8486265701782761, abs=1e-9)
        assert 1.0 + g_tilde(1, mu_lower_bound()) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
    def test_h_b(self, mu):
        assert boundary_b(mu) == pytest.approx(H_B[mu], rel=1e-11)

    @pytest.mark.parametrize("mu", [1.0, 2.0, 3.0])
    def test_h_a(self, mu):
        for n, ref in zip((50, 5000, 10 ** 6), H_A[mu]):
            assert boundary_a(mu, EfficiencyConfig(n)) == pytest.approx(ref, rel=1e-11)

    def test_h_a_approaches_h_b_at_rate_one_over_c_n(self):
        # the gap shrinks like 1 / c_n: scaling n by 100 divides it by ~10
        for mu in (1.0, 2.0, 3.0):
            gaps = [boundary_a(mu, EfficiencyConfig(n)) - boundary_b(mu) for n in (10 ** 4, 10 ** 6)]
            assert gaps[0] > gaps[1] > 0
            assert gaps[0] / gaps[1] == pytest.approx(10.0, rel=0.05)

    def test_h_b_domain(self):
        with pytest.raises(DomainError):
            boundary_b(0.8)

    def test_h_a_domain(self):
        with pytest.raises(DomainError):
            boundary_a(0.3, EfficiencyConfig(50))
        with pytest.raises(DomainError):
            boundary_a(-1.0)

    def test_g_tilde_domain(self):
        with pytest.raises(DomainError):
            g_tilde(3, 1.0)
        with pytest.raises(DomainError):
            g_tilde(1, 0.0)

    @pytest.mark.parametrize("n,ref", [(50, 0.5712907339459546), (5000, 0.8117115593581833),
                                       (10 ** 6, 0.8458999052736645)])
    def test_mu_prime(self, n, ref):
        assert mu_prime_lower_bound(EfficiencyConfig(n)) == pytest.approx(ref, abs=1e-9)


class TestStationary:
    @pytest.mark.parametrize("mu,ref", [(1.0, 0.37503), (1.5, 0.048461)])
    def test_location(self, mu, ref):
        tau = be_stationary_tau(gaussian_mixture_distortion(SignalModel(0.5, mu)))
        assert tau == pytest.approx(ref, rel=1e-4)

    @staticmethod
    def _gradient(model, tau, h):
        def f(a, b):
            return be(model, TFisherParams(a, b))

        return ((f(tau + h, tau) - f(tau - h, tau)) / (2 * h),
                (f(tau, tau + h) - f(tau, tau - h)) / (2 * h))

    @pytest.mark.parametrize("mu", [1.0, 1.5])
    def test_gradient_vanishes(self, mu):
        model = SignalModel(0.5, mu)
        tau = be_stationary_tau(gaussian_mixture_distortion(model))
        g1, g2 = self._gradient(model, tau, 1e-4 * tau)
        assert abs(g1) <= 1e-5 and abs(g2) <= 1e-5

    @pytest.mark.parametrize("mu", [2.0, 2.5, 3.0])
    def test_relative_gradient_vanishes_for_strong_signals(self, mu):
        # tau* is tiny here and the curvature huge; compare on the log-tau scale
        model = SignalModel(0.5, mu)
        tau = be_stationary_tau(gaussian_mixture_distortion(model))
        g1, g2 = self._gradient(model, tau, 1e-4 * tau)
        scale = be(model, TFisherParams(tau, tau)) / tau
        assert abs(g1) / scale <= 1e-6 and abs(g2) / scale <= 1e-6

    @pytest.mark.parametrize("eps", [0.1, 0.5, 0.9])
    def test_location_independent_of_eps(self, eps):
        ref = be_stationary_tau(gaussian_mixture_distortion(SignalModel(0.5, 1.5)))
        got = be_stationary_tau(gaussian_mixture_distortion(SignalModel(eps, 1.5)))
        assert got == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("mu", [0.9, 1.0, 1.2, 1.5, 2.0, 2.5, 3.0])
    def test_is_local_max(self, mu):
        model = SignalModel(0.5, mu)
        d = gaussian_mixture_distortion(model)
        tau = be_stationary_tau(d)
        hess = _be_hessian(model, tau)
        assert np.all(np.linalg.eigvalsh(hess) < 0)
        # closed-form Hessian criterion at tau1 = tau2 = tau
        dv = float(delta(d, tau))
        dp = float(d.excess(np.array(tau)))
        assert dv * (3 - 6 * tau + 2 * tau * tau) > tau * (2 - tau) * (1 - tau) * dp

    def test_condition_certifies_weak_signal_max(self):
        d = gaussian_mixture_distortion(SignalModel(0.5, 1.0))
        tau = be_stationary_tau(d)
        assert tau > stats.norm.sf(0.5)
        assert local_max_condition(d, tau)

    def test_condition_is_sufficient_only(self):
        # at mu = 1.5 the stationary point is a maximum that the check does not certify
        model = SignalModel(0.5, 1.5)
        d = gaussian_mixture_distortion(model)
        tau = be_stationary_tau(d)
        assert not local_max_condition(d, tau)
        assert np.all(np.linalg.eigvalsh(_be_hessian(model, tau)) < 0)

    def test_condition_fails_near_zero(self):
        d = gaussian_mixture_distortion(SignalModel(0.5, 0.5))
        assert not local_max_condition(d, 1e-6)

    def test_local_max_condition_shortcut(self):
        # delta' <= 0 beyond Phi_bar(mu / 2), where the condition holds automatically
        mu = 2.0
        d = gaussian_mixture_distortion(SignalModel(0.3, mu))
        assert local_max_condition(d, stats.norm.sf(mu / 2) + 0.05)

    def test_local_max_condition_domain(self):
        with pytest.raises(DomainError):
            local_max_condition(gaussian_mixture_distortion(SignalModel(0.3, 1.0)), 1.0)
