"""Epanechnikov kernel density estimates, optionally truncated to a window.

The truncated estimate keeps the ``1 / (n c)`` normalisation but drops the
observations outside ``(-b, b)``, so it integrates to the retained fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .divergence import DomainError

EPANECHNIKOV_VARIANCE = 0.2


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def epanechnikov_cdf(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    return 0.25 * (2.0 + 3.0 * u - u**3)


def sample_epanechnikov(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draws from the Epanechnikov density on [-1, 1].

    Uses the three-uniform rule: take the middle-magnitude candidate unless the
    third draw has the largest magnitude, in which case take the second.
    """
    u = rng.uniform(-1.0, 1.0, size=(3, size))
    a = np.abs(u)
    pick_second = (a[2] >= a[1]) & (a[2] >= a[0])
    return np.where(pick_second, u[1], u[2])


def silverman_bandwidth(data: np.ndarray) -> float:
    """Rule-of-thumb bandwidth ``0.9 * min(sd, IQR / 1.34) * n^(-1/5)``."""
    x = np.asarray(data, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise DomainError("bandwidth selection needs at least two observations")
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    if sd == 0.0:
        raise DomainError("bandwidth selection needs data with non-zero spread")
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


@dataclass(frozen=True)
class KdeEstimate:
    """Epanechnikov KDE ``g(x) = (1/(n c)) sum K((x - X_i) / c)``.

    Attributes:
        data: The observations.
        bandwidth: Kernel bandwidth ``c``.
        truncation: Optional half-width ``b`` of the retention window ``(-b, b)``.
    """

    data: np.ndarray
    bandwidth: float
    truncation: float | None = None
    kernel: str = "epanechnikov"
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)
    _prefix: tuple = field(init=False, repr=False, compare=False)
    _center: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.data, dtype=float).ravel()
        if x.size < 1:
            raise DomainError("KDE needs at least one observation")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.truncation is not None and not self.truncation > 0:
            raise DomainError(f"truncation bound must be positive, got {self.truncation}")
        if self.kernel != "epanechnikov":
            raise DomainError(f"unsupported kernel {self.kernel!r}")
        x.setflags(write=False)
        object.__setattr__(self, "data", x)
        kept = np.sort(x[self.retained_mask])
        center = float(np.median(kept)) if kept.size else 0.0
        z = kept - center
        prefix = tuple(np.concatenate(([0.0], np.cumsum(z**p))) for p in range(4))
        object.__setattr__(self, "_sorted", kept)
        object.__setattr__(self, "_prefix", prefix)
        object.__setattr__(self, "_center", center)

    @classmethod
    def from_data(cls, data: np.ndarray, bandwidth: float | None = None,
                  truncation: float | None = None) -> "KdeEstimate":
        """Build a KDE, choosing the Silverman bandwidth when none is given."""
        if bandwidth is None:
            bandwidth = silverman_bandwidth(data)
        return cls(np.asarray(data, dtype=float), float(bandwidth), truncation)

    @property
    def n(self) -> int:
        return int(self.data.size)

    @property
    def retained_mask(self) -> np.ndarray:
        if self.truncation is None:
            return np.ones(self.data.shape, dtype=bool)
        return np.abs(self.data) < self.truncation

    @property
    def mass(self) -> float:
        """Total mass of the estimate: the retained fraction of observations."""
        return self._sorted.size / self.n

    def _window_sums(self, x: np.ndarray):
        c = self.bandwidth
        lo = np.searchsorted(self._sorted, x - c, side="left")
        hi = np.searchsorted(self._sorted, x + c, side="right")
        sums = [p[hi] - p[lo] for p in self._prefix]
        return lo, sums

    def pdf(self, x: np.ndarray | float) -> np.ndarray | float:
        """Evaluate the density; exact finite kernel sum."""
        xs = np.asarray(x, dtype=float)
        flat = xs.ravel()
        c = self.bandwidth
        _, (s0, s1, s2, _) = self._window_sums(flat)
        d = flat - self._center
        # sum over window of (d - z_i)^2
        sq = d * d * s0 - 2.0 * d * s1 + s2
        out = 0.75 * (s0 - sq / (c * c)) / (self.n * c)
        out = np.maximum(out, 0.0).reshape(xs.shape)
        return float(out) if np.ndim(x) == 0 else out

    def cdf(self, x: np.ndarray | float) -> np.ndarray | float:
        """Integral of :meth:`pdf` from minus infinity."""
        xs = np.asarray(x, dtype=float)
        flat = xs.ravel()
        c = self.bandwidth
        lo, (s0, s1, s2, s3) = self._window_sums(flat)
        d = flat - self._center
        # sum over window of F(u_i), F(u) = (2 + 3u - u^3)/4, u_i = (d - z_i)/c
        s_u = (d * s0 - s1) / c
        s_u3 = (d**3 * s0 - 3 * d * d * s1 + 3 * d * s2 - s3) / c**3
        inside = 0.25 * (2.0 * s0 + 3.0 * s_u - s_u3)
        # observations entirely to the left of the window contribute 1 each;
        # searchsorted "left" on x - c excludes ties at the window edge, where F = 1 anyway
        out = (lo + inside) / self.n
        out = np.clip(out, 0.0, self.mass).reshape(xs.shape)
        return float(out) if np.ndim(x) == 0 else out

    def pdf_direct(self, x: np.ndarray | float) -> np.ndarray:
        """Brute-force kernel sum; reference implementation for tests."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        kept = self.data[self.retained_mask]
        u = (xs[:, None] - kept[None, :]) / self.bandwidth
        return epanechnikov(u).sum(axis=1) / (self.n * self.bandwidth)

    def support(self) -> tuple[float, float]:
        if self._sorted.size == 0:
            raise DomainError("truncation window excludes every observation")
        return float(self._sorted[0] - self.bandwidth), float(self._sorted[-1] + self.bandwidth)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` points from the (renormalised) estimate.

        Picks a retained observation uniformly and adds bandwidth-scaled
        Epanechnikov noise.
        """
        if count < 1:
            raise DomainError(f"count must be positive, got {count}")
        if self._sorted.size == 0:
            raise DomainError("truncation window excludes every observation")
        idx = rng.integers(0, self._sorted.size, size=count)
        return self._sorted[idx] + self.bandwidth * sample_epanechnikov(rng, count)


def kde_eval(kde: KdeEstimate, x):
    return kde.pdf(x)


def kde_sample(kde: KdeEstimate, count: int, rng: np.random.Generator) -> np.ndarray:
    return kde.sample(count, rng)


def load_dataset(path: str | Path) -> np.ndarray:
    """Read one floating-point observation per line; blank lines and ``#`` comments are skipped."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from exc
    if not values:
        raise ValueError(f"{path}: no observations")
    return np.asarray(values, dtype=float)
