"""Parametric families used by the Hellinger loss.

A family exposes its density, score ``u = grad log f``, the score Jacobian and
the Hessian of the density with respect to the parameters, all vectorised over
observations, plus the gradient and Hessian sensitivity constants used to
calibrate private optimisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .divergence import DomainError

SIGMA_MIN = 0.05

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_GRAD_CONST = 2.0 * math.sqrt(6.0)
_HESS_CONST = math.sqrt(118.0)


@dataclass(frozen=True)
class ModelDerivatives:
    logdensity: np.ndarray
    score: np.ndarray
    score_jacobian: np.ndarray
    density_hessian: np.ndarray


class NormalModel:
    """``N(mu, sigma^2)`` parametrised by ``theta = (mu, sigma)``."""

    dim = 2
    names = ("mu", "sigma")

    def __init__(self, sigma_min: float = SIGMA_MIN):
        self.sigma_min = sigma_min

    @staticmethod
    def _unpack(theta) -> tuple[float, float]:
        mu, sigma = (float(v) for v in theta)
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        return mu, sigma

    def is_admissible(self, theta) -> bool:
        return bool(np.all(np.isfinite(theta))) and float(theta[1]) > self.sigma_min

    def project(self, theta) -> tuple[np.ndarray, bool]:
        """Clamp ``sigma`` to the admissible region; report whether clamping happened."""
        th = np.array(theta, dtype=float)
        if th[1] < self.sigma_min:
            th[1] = self.sigma_min
            return th, True
        return th, False

    def logdensity(self, theta, x):
        mu, sigma = self._unpack(theta)
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return -0.5 * z * z - math.log(sigma) - _LOG_SQRT_2PI

    def density(self, theta, x):
        return np.exp(self.logdensity(theta, x))

    def score(self, theta, x) -> np.ndarray:
        """Score vectors, shape ``x.shape + (2,)``."""
        mu, sigma = self._unpack(theta)
        d = np.asarray(x, dtype=float) - mu
        s2 = sigma * sigma
        return np.stack([d / s2, (d * d - s2) / (s2 * sigma)], axis=-1)

    def score_jacobian(self, theta, x) -> np.ndarray:
        """Jacobian of the score in ``theta``, shape ``x.shape + (2, 2)``."""
        mu, sigma = self._unpack(theta)
        d = np.asarray(x, dtype=float) - mu
        s2 = sigma * sigma
        off = -2.0 * d / (s2 * sigma)
        j11 = np.full_like(d, -1.0 / s2)
        j22 = -3.0 * d * d / (s2 * s2) + 1.0 / s2
        return np.stack([np.stack([j11, off], -1), np.stack([off, j22], -1)], -2)

    def density_hessian_factor(self, theta, x) -> np.ndarray:
        """``H_f(x) / f(x)``, the density Hessian divided by the density."""
        mu, sigma = self._unpack(theta)
        d = np.asarray(x, dtype=float) - mu
        s2 = sigma * sigma
        h11 = (d * d - s2) / (s2 * s2)
        h12 = d * (d * d - 3.0 * s2) / (s2 * s2 * sigma)
        h22 = (d**4 - 5.0 * s2 * d * d + 2.0 * s2 * s2) / (s2 * s2 * s2)
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    def density_hessian(self, theta, x) -> np.ndarray:
        f = self.density(theta, x)
        return np.asarray(f)[..., None, None] * self.density_hessian_factor(theta, x)

    def derivatives(self, theta, x) -> ModelDerivatives:
        return ModelDerivatives(
            self.logdensity(theta, x),
            self.score(theta, x),
            self.score_jacobian(theta, x),
            self.density_hessian(theta, x),
        )

    def sensitivities(self, theta, n: int, p: float) -> tuple[float, float]:
        """Gradient and Hessian L2 sensitivities ``2 sqrt(6)/sigma n^(-1/p)`` and ``sqrt(118)/sigma^2 n^(-1/p)``.

        ``sigma`` is clamped below at ``sigma_min``.
        """
        sigma = max(float(theta[1]), self.sigma_min)
        return normal_sensitivities((0.0, sigma), n, p)

    def sample(self, theta, size: int, rng: np.random.Generator) -> np.ndarray:
        mu, sigma = self._unpack(theta)
        return rng.normal(mu, sigma, size=size)

    def method_of_moments(self, data) -> np.ndarray:
        x = np.asarray(data, dtype=float)
        return np.array([x.mean(), x.std()])


def normal_score(theta, x):
    return NormalModel().score(theta, x)


def normal_density_hessian(theta, x):
    return NormalModel().density_hessian(theta, x)


def normal_sensitivities(theta, n: int, p: float) -> tuple[float, float]:
    """Sharp-rate sensitivity constants of the Normal-model Hellinger gradient and Hessian."""
    sigma = float(theta[1])
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if not 1.0 < p <= 2.0:
        raise DomainError(f"sensitivity exponent p must lie in (1, 2], got {p}")
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    rate = n ** (-1.0 / p)
    return _GRAD_CONST / sigma * rate, _HESS_CONST / (sigma * sigma) * rate


def weak_sensitivity_rate(C: float, n: int) -> float:
    """``C n^(-1/2)``, the sensitivity rate without the truncation assumption."""
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    return C / math.sqrt(n)
