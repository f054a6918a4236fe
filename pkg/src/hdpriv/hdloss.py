"""Monte-Carlo Hellinger loss ``L(theta) = 2 int (sqrt f_theta - sqrt g)^2``.

With ``X_1..X_r`` drawn from the kernel estimate ``g`` and held fixed,

    L(theta) ~= 4 - (4/r) sum rho_i,          rho_i = sqrt(f_theta(X_i) / g(X_i))
    grad     =  -(2/r) sum rho_i u_i
    hess     =   (1/r) sum rho_i u_i u_i^T - (2/r) sum rho_i H_f(X_i) / f_theta(X_i)

where ``u`` is the model score and ``H_f`` the density Hessian in ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import KdeEstimate
from .models import NormalModel

RATIO_CAP = 1e8
# Monte-Carlo draws per observation; smaller values let MC error dominate the estimate
DEFAULT_MC_FACTOR = 5


class NumericalError(ArithmeticError):
    """Raised when the loss or its derivatives become non-finite."""


@dataclass
class McLossContext:
    """Frozen Monte-Carlo draws from a KDE together with the model they are scored under.

    The same draws serve every evaluation in a replication so that loss,
    gradient and Hessian are smooth functions of ``theta``.
    """

    kde: KdeEstimate
    mc_samples: np.ndarray
    model: NormalModel = field(default_factory=NormalModel)
    capped_events: int = 0

    def __post_init__(self) -> None:
        x = np.asarray(self.mc_samples, dtype=float).ravel()
        x.setflags(write=False)
        self.mc_samples = x
        g = np.asarray(self.kde.pdf(x), dtype=float)
        if np.any(g <= 0):
            raise NumericalError("Monte-Carlo point outside the support of the kernel estimate")
        self._log_g = np.log(g)

    @classmethod
    def draw(cls, kde: KdeEstimate, rng: np.random.Generator, r: int | None = None,
             model: NormalModel | None = None) -> "McLossContext":
        """Draw ``r`` points (default: ``DEFAULT_MC_FACTOR`` times the sample size) from ``kde``."""
        r = DEFAULT_MC_FACTOR * kde.n if r is None else r
        return cls(kde, kde.sample(r, rng), model or NormalModel())

    @property
    def r(self) -> int:
        return int(self.mc_samples.size)

    @property
    def n(self) -> int:
        return self.kde.n

    def ratio(self, theta) -> np.ndarray:
        """``sqrt(f_theta / g)`` at each Monte-Carlo point, capped at ``RATIO_CAP``."""
        half_log = 0.5 * (self.model.logdensity(theta, self.mc_samples) - self._log_g)
        rho = np.exp(np.minimum(half_log, np.log(RATIO_CAP)))
        capped = int(np.count_nonzero(half_log > np.log(RATIO_CAP)))
        if capped:
            self.capped_events += capped
        return rho

    def loss(self, theta) -> float:
        val = loss_from_ratio(self.ratio(theta))
        if not np.isfinite(val):
            raise NumericalError(f"non-finite loss at theta={theta}")
        return val

    def loss_clamped(self, theta) -> float:
        """Loss clipped to ``[0, 4]``, the range of the exact Hellinger loss; for display."""
        return float(np.clip(self.loss(theta), 0.0, 4.0))

    def gradient(self, theta) -> np.ndarray:
        rho = self.ratio(theta)
        u = self.model.score(theta, self.mc_samples)
        g = -2.0 * np.sum(rho[:, None] * u, axis=0) / self.r
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at theta={theta}")
        return g

    def hessian(self, theta) -> np.ndarray:
        rho = self.ratio(theta)
        u = self.model.score(theta, self.mc_samples)
        hf = self.model.density_hessian_factor(theta, self.mc_samples)
        outer = np.einsum("i,ij,ik->jk", rho, u, u)
        curv = np.einsum("i,ijk->jk", rho, hf)
        h = (outer - 2.0 * curv) / self.r
        h = 0.5 * (h + h.T)
        if not np.all(np.isfinite(h)):
            raise NumericalError(f"non-finite Hessian at theta={theta}")
        return h

    def gradient_contributions(self, theta) -> np.ndarray:
        """Per-point terms ``rho_i u_i``; the gradient is ``-2`` times their mean."""
        rho = self.ratio(theta)
        return rho[:, None] * self.model.score(theta, self.mc_samples)


def loss_from_ratio(rho: np.ndarray) -> float:
    """The Monte-Carlo loss from the square-root density ratios."""
    rho = np.asarray(rho, dtype=float)
    return float(2.0 * (2.0 - 2.0 * np.mean(rho)))


def mc_loss(ctx: McLossContext, theta) -> float:
    return ctx.loss(theta)


def mc_gradient(ctx: McLossContext, theta) -> np.ndarray:
    return ctx.gradient(theta)


def mc_hessian(ctx: McLossContext, theta) -> np.ndarray:
    return ctx.hessian(theta)
