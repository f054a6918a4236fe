"""Closed-form power divergences between isotropic Gaussian and Laplace laws.

The power divergence of index ``lam`` between densities ``p`` and ``q`` is

    D_lam(p, q) = 1 / (lam (lam + 1)) * ( int p^(lam+1) q^(-lam) - 1 )

with the ``lam in {0, -1}`` limits given by KL and reverse KL. ``lam = -1/2``
is four times one minus the Bhattacharyya coefficient, i.e. twice the squared
Hellinger distance ``int (sqrt p - sqrt q)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# |lam (lam + 1)| below this selects the KL / reverse-KL branch
KL_BRANCH_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a formula."""


@dataclass(frozen=True)
class DivergenceOrder:
    """Index of the power-divergence family."""

    lam: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam):
            raise DomainError(f"divergence order must be finite, got {self.lam}")

    @property
    def t(self) -> float:
        """The product ``lam * (lam + 1)`` that drives every closed form."""
        return self.lam * (self.lam + 1.0)

    @property
    def is_kl(self) -> bool:
        return abs(self.t) < KL_BRANCH_TOL


def _order(order: DivergenceOrder | float) -> DivergenceOrder:
    return order if isinstance(order, DivergenceOrder) else DivergenceOrder(float(order))


def _sign(x: float) -> float:
    # sign(0) = 0; only reached on the dedicated KL branch anyway
    return float(np.sign(x))


def gaussian_power_divergence(v_norm2: float, sigma: float, order: DivergenceOrder | float) -> float:
    """Power divergence between ``N(w1, sigma^2 I)`` and ``N(w2, sigma^2 I)``.

    Args:
        v_norm2: Euclidean distance ``||w1 - w2||_2`` between the means.
        sigma: Common standard deviation.
        order: Divergence index (a :class:`DivergenceOrder` or a float).
    """
    order = _order(order)
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if v_norm2 < 0:
        raise DomainError(f"v_norm2 must be non-negative, got {v_norm2}")
    q = v_norm2 * v_norm2 / (2.0 * sigma * sigma)
    if order.is_kl:
        return q
    t = order.t
    return math.expm1(t * q) / t


def hellinger_sq_gaussians(v_norm2: float, sigma: float) -> float:
    """Squared Hellinger distance ``int (sqrt p - sqrt q)^2`` of two isotropic Gaussians.

    Equals ``2 (1 - exp(-||v||^2 / (8 sigma^2)))``, half of ``D_{-1/2}``.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if v_norm2 < 0:
        raise DomainError(f"v_norm2 must be non-negative, got {v_norm2}")
    return -2.0 * math.expm1(-v_norm2 * v_norm2 / (8.0 * sigma * sigma))


def laplace_power_divergence_exact(
    v: Sequence[float] | np.ndarray, b: float, order: DivergenceOrder | float
) -> float:
    """Exact power divergence between product Laplace laws with common scale ``b``.

    ``v`` is the vector of location differences, one entry per coordinate.
    """
    order = _order(order)
    if not b > 0:
        raise DomainError(f"Laplace scale must be positive, got {b}")
    a = np.abs(np.atleast_1d(np.asarray(v, dtype=float)))
    lam = order.lam
    if order.is_kl:
        return float(np.sum(a / b - 1.0 + np.exp(-a / b)))
    if lam == -0.5:
        r = a / (2.0 * b)
        return float(-4.0 * (np.prod(np.exp(-r) * (1.0 + r)) - 1.0))
    k = 1.0 / (2.0 * lam + 1.0)
    factors = 0.5 * (np.exp(lam * a / b) * (1.0 + k) + np.exp(-(lam + 1.0) * a / b) * (1.0 - k))
    return float(np.expm1(np.sum(np.log(factors))) / order.t)


def laplace_power_divergence_bound(v_norm1: float, b: float, order: DivergenceOrder | float) -> float:
    """Upper bound on the Laplace power divergence that depends on ``v`` only through ``||v||_1``."""
    order = _order(order)
    if not b > 0:
        raise DomainError(f"Laplace scale must be positive, got {b}")
    if v_norm1 < 0:
        raise DomainError(f"v_norm1 must be non-negative, got {v_norm1}")
    if order.is_kl:
        return v_norm1 / b
    lam = order.lam
    return math.expm1(_sign(lam) * (lam + 1.0) * v_norm1 / b) / order.t
