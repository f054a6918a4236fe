import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdpriv.divergence import DomainError, gaussian_power_divergence, hellinger_sq_gaussians, laplace_power_divergence_bound
from hdpriv.privacy import (
    ConversionError,
    HdpLedger,
    PrivacyBudget,
    calibrate_gaussian_hdp,
    calibrate_gaussian_pdp,
    calibrate_laplace_hdp_exact_1d,
    calibrate_laplace_pdp,
    compose_hdp,
    compose_hdp_k,
    compose_hdp_k_closed,
    compose_hdp_parallel,
    compose_pdp,
    group_privacy_hdp,
    hdp_to_approx_dp,
    hdp_to_gdp,
    laplace_hdp_of_scale,
    pdp_to_approx_dp,
    pdp_to_rdp,
    pdp_to_zcdp,
    solve_per_step_epsilon,
    solve_per_step_epsilon_pdp,
    std_normal_quantile,
)


class TestBudget:
    def test_hdp_encoding_doubles_once(self):
        b = PrivacyBudget.hdp(0.7)
        assert (b.lam, b.epsilon) == (-0.5, 1.4)
        assert b.is_hdp and b.hdp_epsilon == 0.7

    def test_admissibility_window(self):
        PrivacyBudget(-0.5, 3.9)
        with pytest.raises(DomainError):
            PrivacyBudget(-0.5, 4.5)
        with pytest.raises(DomainError):
            PrivacyBudget.hdp(2.5)
        with pytest.raises(ConversionError):
            PrivacyBudget(1.0, 0.1).hdp_epsilon


class TestGaussianCalibration:
    def test_hdp_examples(self):
        assert calibrate_gaussian_hdp(1.0, 1.0).variance == pytest.approx(0.18033688011112042, abs=1e-14)
        assert calibrate_gaussian_hdp(2.0, 1.0).variance == pytest.approx(0.7213475204444817, abs=1e-14)
        assert calibrate_gaussian_hdp(1.0, 2.0).scale == 0.0

    def test_pdp_examples(self):
        assert calibrate_gaussian_pdp(1.0, PrivacyBudget(-0.5, 2.0)).variance == pytest.approx(1 / (8 * math.log(2)))
        assert calibrate_gaussian_pdp(1.0, PrivacyBudget(0.0, 0.5)).variance == pytest.approx(1.0)
        assert calibrate_gaussian_pdp(0.0, PrivacyBudget(1.0, 0.3)).scale == 0.0

    def test_hdp_matches_pdp_encoding(self):
        for eps in (0.1, 0.6, 1.0, 1.7):
            a = calibrate_gaussian_hdp(1.3, eps).scale
            b = calibrate_gaussian_pdp(1.3, PrivacyBudget.hdp(eps)).scale
            assert a == pytest.approx(b, rel=1e-14)

    def test_hellinger_oracle(self):
        for delta in (1.0, 2.0):
            spec = calibrate_gaussian_hdp(delta, 1.0)
            assert hellinger_sq_gaussians(delta, spec.scale) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("eps", [0.0, -0.1, 2.1])
    def test_hdp_domain(self, eps):
        with pytest.raises(DomainError):
            calibrate_gaussian_hdp(1.0, eps)

    @given(st.floats(0.01, 10), st.floats(0.01, 3.0), st.sampled_from([-3.0, -2.0, -0.5, -0.2, 0.0, 0.5, 1.0, 2.0]))
    def test_calibration_hits_target(self, delta, eps, lam):
        t = lam * (lam + 1)
        if t < 0 and eps >= -1 / t:
            return
        spec = calibrate_gaussian_pdp(delta, PrivacyBudget(lam, eps))
        assert gaussian_power_divergence(delta, spec.scale, lam) == pytest.approx(eps, rel=1e-9, abs=1e-12)


class TestLaplaceCalibration:
    def test_examples(self):
        assert calibrate_laplace_pdp(1.0, PrivacyBudget(0.0, 1.0)).scale == 1.0
        b = calibrate_laplace_pdp(1.0, PrivacyBudget(-0.5, 2.0)).scale
        assert b == pytest.approx(0.7213475204444817, abs=1e-14)
        assert b == pytest.approx(1.0 / (2 * math.log(1 / (1 - 0.5))), abs=1e-14)
        assert calibrate_laplace_pdp(0.0, PrivacyBudget(1.0, 1.0)).scale == 0.0

    @pytest.mark.parametrize("lam", [-3.0, -2.0, -0.5, -0.3, 0.0, 0.5, 2.0])
    @pytest.mark.parametrize("eps", [0.05, 0.5, 1.2])
    def test_bound_within_budget(self, lam, eps):
        budget = PrivacyBudget(lam, eps)
        spec = calibrate_laplace_pdp(0.8, budget)
        assert laplace_power_divergence_bound(0.8, spec.scale, lam) <= eps * (1 + 1e-10)

    def test_exact_1d_example(self):
        # frozen bisection solve checked by forward evaluation
        spec = calibrate_laplace_hdp_exact_1d(1.0, 1.0)
        assert spec.scale == pytest.approx(0.297912173688876, abs=1e-10)
        assert spec.scale < 0.7213475204444817

    def test_exact_1d_inverts_unit_scale(self):
        # squared Hellinger of unit-shifted Laplace(., 1) laws, half of 0.3608160417241999
        spec = calibrate_laplace_hdp_exact_1d(1.0, 0.3608160417241999 / 2)
        assert spec.scale == pytest.approx(1.0, abs=1e-9)

    def test_exact_1d_small_eps_needs_large_scale(self):
        assert calibrate_laplace_hdp_exact_1d(1.0, 1e-6).scale > 100

    @pytest.mark.parametrize("eps", [0.0, 2.0, 2.5])
    def test_exact_1d_domain(self, eps):
        with pytest.raises(DomainError):
            calibrate_laplace_hdp_exact_1d(1.0, eps)

    @given(st.floats(0.05, 5), st.floats(0.01, 1.95))
    def test_exact_beats_bound(self, delta, eps):
        exact = calibrate_laplace_hdp_exact_1d(delta, eps).scale
        bound = calibrate_laplace_pdp(delta, PrivacyBudget.hdp(eps)).scale
        assert exact < bound
        assert laplace_hdp_of_scale(delta, exact) == pytest.approx(eps, abs=1e-10)


class TestComposition:
    def test_pdp_examples(self):
        assert compose_pdp(0.1, 0.1, 1.0) == pytest.approx(0.22)
        assert compose_pdp(0.3, 0.0, -2.0) == 0.3
        assert compose_pdp(0.1, 0.1, -0.5) == pytest.approx(0.1975)

    def test_hdp_examples(self):
        assert compose_hdp(0.1, 0.1) == pytest.approx(0.195)
        assert compose_hdp(0.4, 0.0) == 0.4
        assert compose_hdp(2.0, 0.7) == 2.0
        with pytest.raises(DomainError):
            compose_hdp(2.1, 0.1)

    @given(st.floats(0, 2), st.floats(0, 2))
    def test_hdp_product_form(self, a, b):
        val = compose_hdp(a, b)
        assert val == pytest.approx(2 - (2 - a) * (2 - b) / 2, abs=1e-12)
        assert 0 <= val <= 2 + 1e-12

    def test_parallel_is_max(self):
        assert compose_hdp_parallel(0.3, 0.8) == 0.8
        assert compose_hdp_parallel(0.5, 0.5) == 0.5

    def test_k_fold_examples(self):
        assert compose_hdp_k(0.1, 1) == 0.1
        assert compose_hdp_k(0.1, 2) == pytest.approx(0.195)
        # 50-fold recursion, frozen from exact rational arithmetic
        assert compose_hdp_k(0.012, 50) == pytest.approx(0.519701784730783, abs=1e-12)

    @given(st.floats(0, 2), st.integers(1, 300))
    def test_closed_form_matches_recursion(self, x, k):
        assert compose_hdp_k_closed(x, k) == pytest.approx(compose_hdp_k(x, k), abs=1e-12)

    @given(st.floats(0, 2), st.integers(1, 100))
    def test_k_fold_monotone_and_bounded(self, x, k):
        assert compose_hdp_k(x, k) <= compose_hdp_k(x, k + 1) + 1e-15
        assert compose_hdp_k(x, k) <= 2.0 + 1e-12

    def test_per_step_examples(self):
        assert solve_per_step_epsilon(0.6, 1) == 0.6
        assert solve_per_step_epsilon(0.6, 50) == pytest.approx(0.014216231736139617, abs=1e-12)
        assert solve_per_step_epsilon(0.6, 50) == pytest.approx(2 * (1 - 0.7 ** (1 / 50)), abs=1e-12)
        e = solve_per_step_epsilon(0.2, 50)
        assert 0.004 < e <= 0.00421

    @pytest.mark.parametrize("eps", [0.05, 0.2, 0.6, 1.0, 1.5, 1.99])
    @pytest.mark.parametrize("K", [2, 5, 50, 200])
    def test_round_trip(self, eps, K):
        e = solve_per_step_epsilon(eps, K)
        assert abs(compose_hdp_k(e, K) - eps) <= 1e-12
        assert e >= eps / K

    @pytest.mark.parametrize("lam", [-2.0, -0.1, 0.5, 1.0])
    def test_pdp_round_trip(self, lam):
        e = solve_per_step_epsilon_pdp(0.6, 20, lam)
        h = e
        for _ in range(19):
            h = compose_pdp(h, e, lam)
        assert h == pytest.approx(0.6, abs=1e-10)

    def test_ledger(self):
        led = HdpLedger()
        for _ in range(50):
            led.charge(solve_per_step_epsilon(0.6, 50))
        assert led.steps == 50
        assert led.spent == pytest.approx(0.6, abs=1e-10)
        snap = led.copy()
        led.charge(0.1)
        assert snap.steps == 50


class TestConversions:
    def test_group(self):
        assert group_privacy_hdp(0.1, 1) == 0.1
        assert group_privacy_hdp(0.1, 3) == pytest.approx(0.9)
        assert group_privacy_hdp(0.5, 4) == 2.0

    def test_approx_dp(self):
        assert hdp_to_approx_dp(0.0) == (0.0, 0.0)
        assert hdp_to_approx_dp(0.04) == pytest.approx((0.0, 0.2))
        assert hdp_to_approx_dp(1.0) == (0.0, 1.0)

    def test_gdp(self):
        assert hdp_to_gdp(0.0) == 0.0
        assert hdp_to_gdp(0.04) == pytest.approx(0.5066942062715994, abs=1e-12)
        assert hdp_to_gdp(0.25) == pytest.approx(1.3489795003921634, abs=1e-12)
        assert hdp_to_gdp(1.0) is None and hdp_to_gdp(1.5) is None

    @given(st.floats(0, 0.98), st.floats(0, 0.98))
    def test_gdp_increasing(self, a, b):
        lo, hi = sorted((a, b))
        assert hdp_to_gdp(lo) <= hdp_to_gdp(hi)

    def test_quantile(self):
        assert abs(std_normal_quantile(0.975) - 1.959964) < 1e-6
        assert std_normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
        # error-function identity: Phi(z) = (1 + erf(z / sqrt 2)) / 2
        for p in (0.01, 0.3, 0.6, 0.999):
            z = std_normal_quantile(p)
            assert 0.5 * (1 + math.erf(z / math.sqrt(2))) == pytest.approx(p, abs=1e-12)

    def test_rdp(self):
        assert pdp_to_rdp(PrivacyBudget(1.0, 0.1)) == pytest.approx((2.0, 0.1823215567939546))
        assert pdp_to_rdp(PrivacyBudget(1.0, 0.0)) == (2.0, 0.0)
        assert pdp_to_rdp(PrivacyBudget(2.0, 0.05)) == pytest.approx((3.0, 0.13118213223374553))
        assert pdp_to_rdp(PrivacyBudget(2.0, 0.05), loose=True) == pytest.approx((3.0, 0.15))
        with pytest.raises(ConversionError):
            pdp_to_rdp(PrivacyBudget(-0.5, 0.5))

    def test_zcdp(self):
        assert pdp_to_zcdp(PrivacyBudget(1.0, 0.3)) == 0.3
        with pytest.raises(ConversionError):
            pdp_to_zcdp(PrivacyBudget(-2.0, 0.3))

    def test_pdp_approx_dp(self):
        assert pdp_to_approx_dp(PrivacyBudget(1.0, 0.1), 0.1) == pytest.approx(2.4849066497880004)
        assert pdp_to_approx_dp(PrivacyBudget(1.0, 0.0), 1.0) == pytest.approx(0.0, abs=1e-15)
        assert pdp_to_approx_dp(PrivacyBudget(-2.0, 0.1), 0.1) == pytest.approx(2.4849066497880004)
        with pytest.raises(ConversionError):
            pdp_to_approx_dp(PrivacyBudget(-0.5, 0.1), 0.1)


def test_hdp_lambda_minimises_variance():
    lams = [-3.0, -2.0, -1.5, -0.6, -0.5, -0.4, 0.5, 1.0, 2.0]
    for eps in (0.1, 0.5, 1.0, 1.5):
        var = [calibrate_gaussian_pdp(1.0, PrivacyBudget(lam, eps)).variance for lam in lams]
        assert lams[int(np.argmin(var))] == -0.5
