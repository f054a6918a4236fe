import math

import numpy as np
import pytest

from hdpriv.divergence import DomainError
from hdpriv.optimize import (
    DEFAULT_THETA0,
    OptimizerAbort,
    OptimizerConfig,
    auto_iterations,
    gd_run,
    noise_multiplier,
    noise_scale_c,
    nr_run,
    pgd_run,
    pnr_run,
    private_run,
    regularized_inverse,
    robust_start,
    symmetric_noise_matrix,
)
from hdpriv.privacy import PrivacyBudget, calibrate_gaussian_pdp, solve_per_step_epsilon

from conftest import make_context


class TestNoiseScale:
    def test_examples(self):
        assert noise_scale_c(1.0) == pytest.approx(0.42466090014400953, abs=1e-15)
        assert noise_scale_c(2 - 1e-12) < 0.07
        assert noise_scale_c(1e-12) > 1e5

    @pytest.mark.parametrize("eps", [0.0, 2.0, -1.0])
    def test_domain(self, eps):
        with pytest.raises(DomainError):
            noise_scale_c(eps)

    def test_multiplier(self):
        assert noise_multiplier(2.0) == 0.0
        assert noise_multiplier(0.3) == noise_scale_c(0.3)
        assert noise_multiplier(0.3, 1.0) == calibrate_gaussian_pdp(1.0, PrivacyBudget(1.0, 0.3)).scale


class TestSymmetricNoise:
    def test_zero_scale(self):
        assert not np.any(symmetric_noise_matrix(3, 0.0, np.random.default_rng(0)))

    def test_symmetric(self):
        w = symmetric_noise_matrix(4, 1.3, np.random.default_rng(1))
        assert np.array_equal(w, w.T)

    def test_entry_variance(self):
        g = np.random.default_rng(2)
        draws = np.array([symmetric_noise_matrix(2, 1.5, g) for _ in range(10**5)])
        var = draws.var(axis=0)
        np.testing.assert_allclose(var, np.full((2, 2), 2.25), rtol=0.02)

    def test_domain(self):
        with pytest.raises(DomainError):
            symmetric_noise_matrix(0, 1.0, np.random.default_rng(0))


def test_regularized_inverse():
    h = np.diag([2.0, -1.0])
    inv, clipped = regularized_inverse(h, 0.5)
    np.testing.assert_allclose(inv, np.diag([0.5, 2.0]))
    assert clipped == 1
    with pytest.raises(OptimizerAbort):
        regularized_inverse(np.array([[np.nan, 0], [0, 1.0]]))


def test_auto_iterations():
    assert auto_iterations(1000, "gd") == math.ceil(7.25 * math.log(1000))
    assert auto_iterations(1000, "nr") == math.ceil(2.6 * math.log(math.log(1000)))
    assert auto_iterations(10**6, "gd") > auto_iterations(1000, "gd")


def test_config_validation():
    with pytest.raises(DomainError):
        OptimizerConfig(K=0)
    with pytest.raises(DomainError):
        OptimizerConfig(eta=0)
    with pytest.raises(DomainError):
        OptimizerConfig(total_epsilon=2.5)
    with pytest.raises(DomainError):
        OptimizerConfig(p=2.2)
    assert not OptimizerConfig(total_epsilon=math.inf).private
    assert OptimizerConfig(total_epsilon=0.6, K=50).per_step_epsilon(1000) == solve_per_step_epsilon(0.6, 50)


@pytest.fixture(scope="module")
def ctx():
    return make_context(77, n=400)


class TestZeroNoise:
    def test_pgd_equals_gd(self, ctx):
        trace = pgd_run(ctx, OptimizerConfig(K=50, eta=0.5, total_epsilon=2.0, seed=3))
        plain = gd_run(ctx, 50, 0.5, DEFAULT_THETA0)
        assert np.max(np.abs(trace.thetas - plain)) <= 1e-12
        assert trace.noise_mult == 0.0

    def test_pnr_equals_nr(self, ctx):
        start = robust_start(ctx.kde.data)
        trace = pnr_run(ctx, OptimizerConfig(K=5, eta=0.5, total_epsilon=2.0, mode="nr", seed=3), start)
        plain = nr_run(ctx, 5, 0.5, start)
        assert np.max(np.abs(trace.thetas - plain)) <= 1e-12


class TestPrivateRuns:
    @pytest.mark.parametrize("mode,K", [("gd", 50), ("nr", 5)])
    @pytest.mark.parametrize("eps", [0.2, 0.6, 1.0])
    def test_ledger_reaches_budget(self, ctx, mode, K, eps):
        trace = private_run(ctx, OptimizerConfig(K=K, total_epsilon=eps, mode=mode), robust_start(ctx.kde.data))
        assert trace.total_spent == pytest.approx(eps, abs=1e-10)
        assert np.all(np.diff(trace.epsilon_spent) > 0)
        assert np.all(trace.epsilon_spent <= eps + 1e-10)
        assert trace.thetas.shape == (K + 1, 2)

    def test_pdp_ledger(self, ctx):
        trace = private_run(ctx, OptimizerConfig(K=20, total_epsilon=0.4, lam=1.0))
        assert trace.total_spent == pytest.approx(0.4, abs=1e-10)

    def test_deterministic(self, ctx):
        cfg = OptimizerConfig(K=10, total_epsilon=0.6, mode="nr", seed=9)
        a = private_run(ctx, cfg, robust_start(ctx.kde.data))
        b = private_run(ctx, cfg, robust_start(ctx.kde.data))
        assert np.array_equal(a.thetas, b.thetas)
        c = private_run(ctx, OptimizerConfig(K=10, total_epsilon=0.6, mode="nr", seed=10), robust_start(ctx.kde.data))
        assert not np.array_equal(a.thetas, c.thetas)

    def test_noise_scale_used(self, ctx):
        trace = pgd_run(ctx, OptimizerConfig(K=50, total_epsilon=0.6, seed=1))
        assert trace.noise_mult == pytest.approx(noise_scale_c(solve_per_step_epsilon(0.6, 50)))
        trace = pnr_run(ctx, OptimizerConfig(K=5, total_epsilon=0.6, mode="nr", seed=1), robust_start(ctx.kde.data))
        assert trace.noise_mult == pytest.approx(noise_scale_c(solve_per_step_epsilon(0.6, 5) / 2))

    def test_weak_sensitivity_is_larger(self, ctx):
        sharp = pgd_run(ctx, OptimizerConfig(K=3, total_epsilon=0.6))
        weak = pgd_run(ctx, OptimizerConfig(K=3, total_epsilon=0.6, weak=True))
        assert np.all(weak.grad_sens > sharp.grad_sens)

    def test_sigma_projection(self, ctx):
        trace = pgd_run(ctx, OptimizerConfig(K=5, eta=50.0, total_epsilon=2.0), (5.0, 0.06))
        assert np.all(trace.thetas[:, 1] >= 0.05)


def test_utility_improves_with_epsilon():
    dist = {eps: [] for eps in (0.2, 0.6, 2.0)}
    for rep in range(200):
        c = make_context(1000 + rep, n=1000, r=1000)
        ref = gd_run(c, 50, 0.5)[-1]
        for eps in dist:
            t = pgd_run(c, OptimizerConfig(K=50, total_epsilon=eps, seed=rep))
            dist[eps].append(np.linalg.norm(t.theta - ref))
    means = [np.mean(dist[e]) for e in (0.2, 0.6, 2.0)]
    assert means[0] > means[1] > means[2]
    assert means[2] == 0.0
