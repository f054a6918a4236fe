"""Gradient descent and Newton-Raphson on the Hellinger loss, plain and private.

The private variants add Gaussian noise to every gradient (and, for Newton,
every Hessian) so that each iteration is ``eps'``-HDP, with ``eps'`` chosen so
that ``K`` adaptive compositions give the requested total budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .divergence import DomainError
from .hdloss import McLossContext, NumericalError
from .models import weak_sensitivity_rate
from .privacy import (
    HDP_LAMBDA,
    HDP_MAX,
    PrivacyBudget,
    calibrate_gaussian_pdp,
    compose_hdp_k,
    solve_per_step_epsilon,
    solve_per_step_epsilon_pdp,
)

EIG_FLOOR = 1e-3
# noisy-Hessian eigenvalues are also floored at this multiple of the noise SD
NOISE_FLOOR = 1.0
DEFAULT_THETA0 = (1.0, 1.0)
# chosen so that n = 1000 gives the K = 50 (GD) and K = 5 (NR) used in the experiments
AUTO_K_GD = 7.25
AUTO_K_NR = 2.6


class OptimizerAbort(RuntimeError):
    """Raised when an iterate or a perturbed Hessian becomes unusable."""


def noise_scale_c(eps_prime: float) -> float:
    """Noise multiplier ``(-8 log(1 - eps'/2))^(-1/2)`` of an ``eps'``-HDP Gaussian release."""
    if not 0 < eps_prime < HDP_MAX:
        raise DomainError(f"per-step epsilon must lie in (0, 2), got {eps_prime}")
    return 1.0 / math.sqrt(-8.0 * math.log1p(-0.5 * eps_prime))


def noise_multiplier(eps_step: float, lam: float = HDP_LAMBDA) -> float:
    """Gaussian noise standard deviation per unit L2 sensitivity at one step's budget.

    ``eps_step`` is on the HDP scale when ``lam = -1/2`` and on the PDP scale otherwise.
    An HDP step at the vacuous level 2 needs no noise.
    """
    if lam == HDP_LAMBDA:
        if eps_step >= HDP_MAX:
            return 0.0
        return noise_scale_c(eps_step)
    return calibrate_gaussian_pdp(1.0, PrivacyBudget(lam, eps_step)).scale


def auto_iterations(n: int, mode: Literal["gd", "nr"], c: float | None = None) -> int:
    """``ceil(c log n)`` iterations for GD, ``ceil(c log log n)`` for NR."""
    if mode == "gd":
        return max(1, math.ceil((AUTO_K_GD if c is None else c) * math.log(n)))
    return max(1, math.ceil((AUTO_K_NR if c is None else c) * math.log(max(math.log(n), 1.0))))


def symmetric_noise_matrix(m: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric matrix with i.i.d. ``N(0, scale^2)`` upper triangle (diagonal included)."""
    if m < 1:
        raise DomainError(f"dimension must be positive, got {m}")
    upper = np.triu(rng.standard_normal((m, m)))
    z = upper + np.triu(upper, 1).T
    return scale * z


def regularized_inverse(h: np.ndarray, floor: float = EIG_FLOOR) -> tuple[np.ndarray, int]:
    """Inverse of the symmetric part of ``h`` with eigenvalues clipped below at ``floor``.

    Returns the inverse and the number of clipped eigenvalues.
    """
    sym = 0.5 * (h + h.T)
    if not np.all(np.isfinite(sym)):
        raise OptimizerAbort("non-finite Hessian")
    w, v = np.linalg.eigh(sym)
    clipped = int(np.count_nonzero(w < floor))
    w = np.maximum(w, floor)
    inv = (v / w) @ v.T
    if not np.all(np.isfinite(inv)):
        raise OptimizerAbort("perturbed Hessian is singular after regularisation")
    return inv, clipped


@dataclass
class OptimizerConfig:
    """Settings shared by the plain and private optimisers.

    ``total_epsilon`` is an HDP level when ``lam = -1/2`` (the default) and a
    PDP level at ``lam`` otherwise. ``K = None`` selects the iteration count
    from the sample size.
    """

    K: int | None = 50
    eta: float = 0.5
    total_epsilon: float = 2.0
    p: float = 1.7
    mode: Literal["gd", "nr"] = "gd"
    seed: int = 0
    lam: float = HDP_LAMBDA
    weak: bool = False
    eig_floor: float = EIG_FLOOR
    noise_floor: float = NOISE_FLOOR

    def __post_init__(self) -> None:
        if self.K is not None and self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K}")
        if not self.eta > 0:
            raise DomainError(f"learning rate must be positive, got {self.eta}")
        if self.mode not in ("gd", "nr"):
            raise DomainError(f"mode must be 'gd' or 'nr', got {self.mode!r}")
        if not 1.0 < self.p <= 2.0:
            raise DomainError(f"p must lie in (1, 2], got {self.p}")
        if math.isinf(self.total_epsilon) and self.total_epsilon > 0:
            pass  # explicit non-private run
        elif self.is_hdp:
            if not 0 < self.total_epsilon <= HDP_MAX:
                raise DomainError(f"HDP epsilon must lie in (0, 2], got {self.total_epsilon}")
        else:
            PrivacyBudget(self.lam, self.total_epsilon)

    @property
    def is_hdp(self) -> bool:
        return self.lam == HDP_LAMBDA

    @property
    def private(self) -> bool:
        if math.isinf(self.total_epsilon):
            return False
        return not (self.is_hdp and self.total_epsilon >= HDP_MAX)

    def iterations(self, n: int) -> int:
        return self.K if self.K is not None else auto_iterations(n, self.mode)

    def per_step_epsilon(self, n: int) -> float:
        K = self.iterations(n)
        if not self.private:
            return math.inf if math.isinf(self.total_epsilon) else HDP_MAX
        if self.is_hdp:
            return solve_per_step_epsilon(self.total_epsilon, K)
        return solve_per_step_epsilon_pdp(self.total_epsilon, K, self.lam)


@dataclass
class IterateTrace:
    """Everything a run produced.

    ``thetas`` has ``K + 1`` rows; noise arrays are indexed by iteration.
    ``grad_sens`` / ``hess_sens`` hold the sensitivities used at each step and
    ``noise_mult`` the per-unit-sensitivity noise scale of a gradient release.
    """

    thetas: np.ndarray
    grad_noise: np.ndarray
    hess_noise: np.ndarray | None
    grad_sens: np.ndarray
    hess_sens: np.ndarray | None
    eps_step: float
    epsilon_spent: np.ndarray
    losses: np.ndarray
    mode: str
    eta: float
    noise_mult: float
    last_hessian: np.ndarray | None = None
    projections: int = 0
    clipped_eigs: int = 0
    lam: float = HDP_LAMBDA
    extra: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def K(self) -> int:
        return len(self.thetas) - 1

    @property
    def total_spent(self) -> float:
        return float(self.epsilon_spent[-1]) if len(self.epsilon_spent) else 0.0


def _sensitivities(ctx: McLossContext, theta: np.ndarray, cfg: OptimizerConfig) -> tuple[float, float]:
    grad_s, hess_s = ctx.model.sensitivities(theta, ctx.n, cfg.p)
    if cfg.weak:
        sigma = max(float(theta[1]), ctx.model.sigma_min)
        grad_s = weak_sensitivity_rate(2.0 * math.sqrt(6.0) / sigma, ctx.n)
        hess_s = weak_sensitivity_rate(math.sqrt(118.0) / sigma**2, ctx.n)
    return grad_s, hess_s


def _iteration_rngs(seed, K: int) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(K)]


def _checked(theta: np.ndarray, ctx: McLossContext) -> tuple[np.ndarray, bool]:
    if not np.all(np.isfinite(theta)):
        raise OptimizerAbort(f"iterate left the finite region: {theta}")
    return ctx.model.project(theta)


def _spent(eps_step: float, k: int, cfg: OptimizerConfig) -> float:
    if cfg.is_hdp:
        return compose_hdp_k(eps_step, k)
    t = cfg.lam * (cfg.lam + 1.0)
    h = eps_step
    for _ in range(k - 1):
        h = eps_step + h + t * eps_step * h
    return h


def private_run(ctx: McLossContext, cfg: OptimizerConfig, theta0=DEFAULT_THETA0,
                rng=None) -> IterateTrace:
    """Private gradient descent (``cfg.mode == 'gd'``) or Newton-Raphson (``'nr'``).

    ``rng`` seeds the noise: an int, a ``SeedSequence`` or ``None`` for
    ``cfg.seed``. Each iteration draws from its own spawned stream.
    """
    K = cfg.iterations(ctx.n)
    eps_step = cfg.per_step_epsilon(ctx.n)
    nr = cfg.mode == "nr"
    if cfg.private:
        # Newton splits each step's budget evenly between gradient and Hessian
        mult = noise_multiplier(eps_step / 2.0 if nr else eps_step, cfg.lam)
    else:
        mult = 0.0
    rngs = _iteration_rngs(cfg.seed if rng is None else rng, K)

    m = ctx.model.dim
    theta, _ = _checked(np.asarray(theta0, dtype=float), ctx)
    thetas = [theta.copy()]
    grad_noise = np.zeros((K, m))
    hess_noise = np.zeros((K, m, m)) if nr else None
    grad_sens = np.zeros(K)
    hess_sens = np.zeros(K) if nr else None
    spent = np.zeros(K)
    losses = [ctx.loss(theta)]
    projections = clipped = 0
    last_h = None
    floor = cfg.eig_floor
    try:
        for k in range(K):
            gs, hs = _sensitivities(ctx, theta, cfg)
            grad_sens[k] = gs
            z = rngs[k].standard_normal(m)
            noise = gs * mult * z
            grad_noise[k] = noise
            g = ctx.gradient(theta) + noise
            if nr:
                hess_sens[k] = hs
                w = symmetric_noise_matrix(m, hs * mult, rngs[k])
                hess_noise[k] = w
                last_h = ctx.hessian(theta) + w
                floor = max(cfg.eig_floor, cfg.noise_floor * hs * mult)
                inv, c = regularized_inverse(last_h, floor)
                clipped += c
                step = inv @ g
            else:
                step = g
            theta, projected = _checked(theta - cfg.eta * step, ctx)
            projections += projected
            thetas.append(theta.copy())
            losses.append(ctx.loss(theta))
            spent[k] = _spent(eps_step, k + 1, cfg) if cfg.private else cfg.total_epsilon
    except NumericalError as exc:
        raise OptimizerAbort(str(exc)) from exc
    return IterateTrace(
        thetas=np.array(thetas), grad_noise=grad_noise, hess_noise=hess_noise,
        grad_sens=grad_sens, hess_sens=hess_sens, eps_step=eps_step,
        epsilon_spent=spent, losses=np.array(losses), mode=cfg.mode, eta=cfg.eta,
        noise_mult=mult, last_hessian=last_h, projections=projections,
        clipped_eigs=clipped, lam=cfg.lam, extra={"hess_floor": floor} if nr else {},
    )


def pgd_run(ctx: McLossContext, cfg: OptimizerConfig, theta0=DEFAULT_THETA0, rng=None) -> IterateTrace:
    """Private gradient descent ``theta <- theta - eta (grad + Delta_n c Z)``."""
    if cfg.mode != "gd":
        cfg = OptimizerConfig(**{**cfg.__dict__, "mode": "gd"})
    return private_run(ctx, cfg, theta0, rng)


def pnr_run(ctx: McLossContext, cfg: OptimizerConfig, theta0=DEFAULT_THETA0, rng=None) -> IterateTrace:
    """Private Newton-Raphson ``theta <- theta - eta (H + W)^-1 (grad + N)``."""
    if cfg.mode != "nr":
        cfg = OptimizerConfig(**{**cfg.__dict__, "mode": "nr"})
    return private_run(ctx, cfg, theta0, rng)


def gd_run(ctx: McLossContext, K: int, eta: float, theta0=DEFAULT_THETA0) -> np.ndarray:
    """Plain gradient descent; returns the ``K + 1`` iterates."""
    theta = np.asarray(theta0, dtype=float)
    out = [theta]
    for _ in range(K):
        theta, _ = ctx.model.project(theta - eta * ctx.gradient(theta))
        out.append(theta)
    return np.array(out)


def nr_run(ctx: McLossContext, K: int, eta: float, theta0=DEFAULT_THETA0,
           floor: float = EIG_FLOOR) -> np.ndarray:
    """Plain damped Newton-Raphson; returns the ``K + 1`` iterates."""
    theta = np.asarray(theta0, dtype=float)
    out = [theta]
    for _ in range(K):
        inv, _ = regularized_inverse(ctx.hessian(theta), floor)
        theta, _ = ctx.model.project(theta - eta * inv @ ctx.gradient(theta))
        out.append(theta)
    return np.array(out)


def robust_start(data) -> np.ndarray:
    """Median and normalised MAD, a root-n consistent robust starting point."""
    x = np.asarray(data, dtype=float)
    med = float(np.median(x))
    mad = 1.4826 * float(np.median(np.abs(x - med)))
    return np.array([med, mad if mad > 0 else float(np.std(x)) or 1.0])
