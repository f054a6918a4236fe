import math

import numpy as np
import pytest

from hdpriv.divergence import DomainError
from hdpriv.inference import corrected_ci, last_step_variance, private_cov, psd_clip, sandwich_cov, score_outer
from hdpriv.optimize import OptimizerConfig, gd_run, nr_run, pgd_run, pnr_run, robust_start
from hdpriv.privacy import std_normal_quantile

from conftest import make_context


@pytest.fixture(scope="module")
def fitted():
    ctx = make_context(31, n=1000)
    theta = nr_run(ctx, 20, 1.0, robust_start(ctx.kde.data))[-1]
    return ctx, theta


def _is_psd(a):
    return np.array_equal(a, a.T) and np.min(np.linalg.eigvalsh(a)) >= -1e-12


def test_psd_clip():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    out = psd_clip(a)
    assert _is_psd(out)
    np.testing.assert_allclose(np.linalg.eigvalsh(out), [0.0, 3.0], atol=1e-12)


def test_sandwich_symmetric_psd(fitted):
    ctx, theta = fitted
    for shift in ([0, 0], [0.3, -0.2], [-1, 0.5]):
        assert _is_psd(sandwich_cov(ctx, theta + np.array(shift)))


def test_sandwich_standard_error_band(fitted):
    ctx, theta = fitted
    se = math.sqrt(sandwich_cov(ctx, theta)[0, 0] / ctx.n)
    assert 0.06 <= se <= 0.09


def test_sandwich_middle_is_bilinear(fitted, monkeypatch):
    ctx, theta = fitted
    base = sandwich_cov(ctx, theta)
    orig = type(ctx).gradient_contributions
    monkeypatch.setattr(type(ctx), "gradient_contributions", lambda self, t: 3.0 * orig(self, t))
    np.testing.assert_allclose(sandwich_cov(ctx, theta), 9.0 * base, rtol=1e-12)


def test_score_outer_targets_fisher(fitted):
    ctx, theta = fitted
    fisher = np.diag([1.0, 2.0]) / theta[1] ** 2
    np.testing.assert_allclose(np.diag(score_outer(ctx, theta)), np.diag(fisher), rtol=0.15)


class TestPrivateCov:
    def test_vacuous_level_is_exact(self, fitted):
        ctx, theta = fitted
        np.testing.assert_array_equal(private_cov(ctx, theta, 2.0, np.random.default_rng(0)), sandwich_cov(ctx, theta))

    def test_psd_under_noise(self, fitted):
        ctx, theta = fitted
        for seed in range(100):
            assert _is_psd(private_cov(ctx, theta, 0.05, np.random.default_rng(seed)))

    @pytest.mark.parametrize("eps", [0.0, 2.5])
    def test_domain(self, fitted, eps):
        ctx, theta = fitted
        with pytest.raises(DomainError):
            private_cov(ctx, theta, eps, np.random.default_rng(0))


class TestCorrectedCi:
    def test_zero_noise_correction_vanishes(self, fitted):
        ctx, _ = fitted
        trace = pgd_run(ctx, OptimizerConfig(K=50, total_epsilon=2.0))
        rep = corrected_ci(trace, ctx, np.random.default_rng(0))
        np.testing.assert_array_equal(rep.ci_plain, rep.ci_corrected)
        assert rep.epsilon_total == 2.0

    @pytest.mark.parametrize("mode,K", [("gd", 50), ("nr", 5)])
    @pytest.mark.parametrize("correction", ["auto", "squared", "verbatim"])
    def test_corrected_contains_plain(self, fitted, mode, K, correction):
        ctx, _ = fitted
        cfg = OptimizerConfig(K=K, total_epsilon=0.6, mode=mode, seed=4)
        trace = (pgd_run if mode == "gd" else pnr_run)(ctx, cfg, robust_start(ctx.kde.data))
        rep = corrected_ci(trace, ctx, np.random.default_rng(5), correction=correction)
        assert np.all(rep.ci_plain[:, 0] < rep.ci_plain[:, 1])
        assert np.all(rep.ci_corrected[:, 0] < rep.ci_plain[:, 0])
        assert np.all(rep.ci_corrected[:, 1] > rep.ci_plain[:, 1])
        assert rep.epsilon_total == pytest.approx(1.8)

    def test_gd_correction_forms(self, fitted):
        ctx, _ = fitted
        trace = pgd_run(ctx, OptimizerConfig(K=50, total_epsilon=0.6, seed=1))
        s = trace.grad_sens[-1] * trace.noise_mult
        np.testing.assert_allclose(last_step_variance(trace, ctx, "squared"), 2 * (0.5 * s) ** 2)
        np.testing.assert_allclose(last_step_variance(trace, ctx, "verbatim"), 2 * 0.5 * s)
        np.testing.assert_array_equal(last_step_variance(trace, ctx, "auto"), last_step_variance(trace, ctx, "squared"))

    def test_nr_auto_is_verbatim(self, fitted):
        ctx, _ = fitted
        trace = pnr_run(ctx, OptimizerConfig(K=5, total_epsilon=0.6, mode="nr", seed=1), robust_start(ctx.kde.data))
        np.testing.assert_array_equal(last_step_variance(trace, ctx, "auto"), last_step_variance(trace, ctx, "verbatim"))
        with pytest.raises(DomainError):
            last_step_variance(trace, ctx, "cubic")

    def test_plain_width_uses_quantile(self, fitted):
        ctx, _ = fitted
        trace = pgd_run(ctx, OptimizerConfig(K=50, total_epsilon=2.0))
        rep = corrected_ci(trace, ctx, np.random.default_rng(0), level=0.9)
        half = 0.5 * (rep.ci_plain[:, 1] - rep.ci_plain[:, 0])
        np.testing.assert_allclose(half, std_normal_quantile(0.95) * np.sqrt(np.diag(rep.cov) / ctx.n))
        with pytest.raises(DomainError):
            corrected_ci(trace, ctx, np.random.default_rng(0), level=1.0)

    def test_pdp_run_reports_nan_total(self, fitted):
        ctx, _ = fitted
        trace = pgd_run(ctx, OptimizerConfig(K=20, total_epsilon=0.4, lam=1.0))
        rep = corrected_ci(trace, ctx, np.random.default_rng(0))
        assert math.isnan(rep.epsilon_total)

    def test_covers_and_dict(self, fitted):
        ctx, theta = fitted
        trace = pgd_run(ctx, OptimizerConfig(K=50, total_epsilon=2.0))
        rep = corrected_ci(trace, ctx, np.random.default_rng(0))
        plain, corr = rep.covers(rep.estimate)
        assert plain.all() and corr.all()
        assert set(rep.as_dict()) >= {"estimate", "ci_plain", "ci_corrected", "epsilon_total"}


def test_quantile_value():
    assert abs(std_normal_quantile(0.975) - 1.959964) < 1e-6
