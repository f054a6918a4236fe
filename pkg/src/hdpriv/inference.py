"""Sandwich covariance and private confidence intervals for the Hellinger estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .divergence import DomainError
from .hdloss import McLossContext
from .optimize import IterateTrace, noise_scale_c, regularized_inverse, symmetric_noise_matrix
from .privacy import HDP_MAX, std_normal_quantile

Correction = Literal["auto", "squared", "verbatim"]
CORRECTIONS = ("auto", "squared", "verbatim")


def psd_clip(a: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetrise ``a`` and raise its eigenvalues to at least ``floor``."""
    sym = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(sym)
    out = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (out + out.T)


def score_outer(ctx: McLossContext, theta) -> np.ndarray:
    """Estimate of the limiting covariance of ``sqrt(n) * grad L_n``.

    Averages ``rho_i^2 u_i u_i^T`` over the Monte-Carlo points, which targets
    ``int f u u^T``, the Fisher information at ``theta``.
    """
    phi = ctx.gradient_contributions(theta)
    return phi.T @ phi / ctx.r


def sandwich_cov(ctx: McLossContext, theta, floor: float = 1e-3) -> np.ndarray:
    """``H^-1 M H^-1``: covariance of ``sqrt(n) (theta_hat - theta)``."""
    hinv, _ = regularized_inverse(ctx.hessian(theta), floor)
    v = hinv @ score_outer(ctx, theta) @ hinv
    return psd_clip(v)


def private_cov(ctx: McLossContext, theta, eps: float, rng: np.random.Generator,
                p: float = 1.7, floor: float = 1e-3) -> np.ndarray:
    """Sandwich covariance built from privatised Hessian and middle matrix.

    Both factors go through the symmetric-matrix Gaussian mechanism at level
    ``eps``; the Hessian with its sensitivity, the middle matrix with the
    squared gradient sensitivity. ``eps = 2`` adds no noise.
    """
    if not 0 < eps <= HDP_MAX:
        raise DomainError(f"HDP epsilon must lie in (0, 2], got {eps}")
    h = ctx.hessian(theta)
    middle = score_outer(ctx, theta)
    if eps < HDP_MAX:
        c = noise_scale_c(eps)
        grad_s, hess_s = ctx.model.sensitivities(theta, ctx.n, p)
        m = ctx.model.dim
        h = h + symmetric_noise_matrix(m, hess_s * c, rng)
        middle = psd_clip(middle + symmetric_noise_matrix(m, grad_s**2 * c, rng))
    hinv, _ = regularized_inverse(h, floor)
    return psd_clip(hinv @ middle @ hinv)


@dataclass
class CiReport:
    estimate: np.ndarray
    cov: np.ndarray
    ci_plain: np.ndarray
    ci_corrected: np.ndarray
    level: float
    epsilon_total: float
    correction_var: np.ndarray

    def covers(self, truth) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(truth, dtype=float)
        plain = (self.ci_plain[:, 0] <= t) & (t <= self.ci_plain[:, 1])
        corr = (self.ci_corrected[:, 0] <= t) & (t <= self.ci_corrected[:, 1])
        return plain, corr

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "cov": self.cov.tolist(),
            "ci_plain": self.ci_plain.tolist(),
            "ci_corrected": self.ci_corrected.tolist(),
            "level": self.level,
            "epsilon_total": self.epsilon_total,
        }


def last_step_variance(trace: IterateTrace, ctx: McLossContext,
                       correction: Correction = "auto", floor: float = 1e-3) -> np.ndarray:
    """Per-coordinate variance attributed to the final iteration's noise.

    GD: ``2 (eta Delta c)^2`` (``squared``) or ``2 eta Delta c`` (``verbatim``).
    NR: diagonal of ``eta^2 A s A`` with ``A = (H(theta_K) + W_K)^-1`` and
    ``s = (Delta c)^2`` or ``Delta c`` respectively. ``auto`` picks
    ``squared`` for GD and ``verbatim`` for NR.
    """
    if correction not in CORRECTIONS:
        raise DomainError(f"unknown correction {correction!r}")
    if correction == "auto":
        correction = "squared" if trace.mode == "gd" else "verbatim"
    m = len(trace.theta)
    scale = trace.grad_sens[-1] * trace.noise_mult
    s = scale**2 if correction == "squared" else scale
    if scale == 0.0:
        return np.zeros(m)
    if trace.mode == "gd":
        if correction == "squared":
            return np.full(m, 2.0 * trace.eta**2 * s)
        return np.full(m, 2.0 * trace.eta * s)
    floor = max(floor, trace.extra.get("hess_floor", floor))
    a, _ = regularized_inverse(ctx.hessian(trace.theta) + trace.hess_noise[-1], floor)
    return np.diag(trace.eta**2 * s * (a @ a)).copy()


def corrected_ci(trace: IterateTrace, ctx: McLossContext, rng: np.random.Generator,
                 level: float = 0.95, eps_ci: float | None = None,
                 correction: Correction = "auto", p: float = 1.7) -> CiReport:
    """Plain and corrected private confidence intervals around the final iterate.

    ``eps_ci`` is the HDP level spent on the covariance release. It defaults
    to the estimator's own level for HDP runs; PDP runs default to 2, i.e. an
    unperturbed covariance, and report a NaN total.
    """
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    theta = trace.theta
    eps_est = trace.total_spent
    if eps_ci is None:
        # PDP-calibrated runs release their covariance at the matching HDP level
        eps_ci = min(eps_est, HDP_MAX) if trace.lam == -0.5 else HDP_MAX
    v = private_cov(ctx, theta, eps_ci, rng, p=p)
    z = std_normal_quantile(0.5 + level / 2.0)
    var_plain = np.diag(v) / ctx.n
    extra = last_step_variance(trace, ctx, correction)
    half_plain = z * np.sqrt(var_plain)
    half_corr = z * np.sqrt(var_plain + extra)
    return CiReport(
        estimate=theta.copy(),
        cov=v,
        ci_plain=np.column_stack([theta - half_plain, theta + half_plain]),
        ci_corrected=np.column_stack([theta - half_corr, theta + half_corr]),
        level=level,
        epsilon_total=min(3.0 * max(eps_est, eps_ci), HDP_MAX) if trace.lam == -0.5 else float("nan"),
        correction_var=extra,
    )
