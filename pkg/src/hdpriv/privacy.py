"""Noise calibration, composition and conversion for HDP / PDP budgets.

Budgets are held internally as a power-divergence pair ``(lam, eps_pd)``.
An ``eps``-HDP guarantee is the pair ``(-1/2, 2 * eps)``; the HDP helpers
convert exactly once at their boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Literal

from .divergence import KL_BRANCH_TOL, DomainError, laplace_power_divergence_exact

HDP_LAMBDA = -0.5
HDP_MAX = 2.0

ROOT_TOL = 1e-12
ROOT_MAXITER = 200

_STD_NORMAL = NormalDist()


class ConversionError(ValueError):
    """Raised when a conversion is not defined for the given divergence order."""


class RootFindingError(ArithmeticError):
    """Raised when a bracketed root solve cannot bracket its target."""


@dataclass(frozen=True)
class PrivacyBudget:
    """A ``(lam, eps)`` power-divergence privacy level."""

    lam: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and math.isfinite(self.epsilon)):
            raise DomainError("budget parameters must be finite")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")
        t = self.t
        # eps_pd = 4 at lam = -1/2 is 2-HDP, the vacuous edge of the window
        vacuous_hdp = self.lam == HDP_LAMBDA and self.epsilon == 2 * HDP_MAX
        if t < 0 and not (self.epsilon < -1.0 / t or vacuous_hdp):
            raise DomainError(
                f"epsilon={self.epsilon} inadmissible at lambda={self.lam}: must be < {-1.0 / t:g}"
            )

    @property
    def t(self) -> float:
        return self.lam * (self.lam + 1.0)

    @classmethod
    def hdp(cls, epsilon: float) -> "PrivacyBudget":
        """Budget equivalent to ``epsilon``-HDP."""
        if not 0 <= epsilon <= HDP_MAX:
            raise DomainError(f"HDP epsilon must lie in [0, 2], got {epsilon}")
        return cls(HDP_LAMBDA, 2.0 * epsilon)

    @property
    def is_hdp(self) -> bool:
        return self.lam == HDP_LAMBDA

    @property
    def hdp_epsilon(self) -> float:
        if not self.is_hdp:
            raise ConversionError(f"budget at lambda={self.lam} is not an HDP budget")
        return self.epsilon / 2.0


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of a calibrated additive mechanism.

    ``scale`` is the Gaussian standard deviation or the Laplace scale ``b``.
    """

    kind: Literal["gaussian", "laplace"]
    scale: float
    sensitivity: float
    dim: int = 1

    @property
    def variance(self) -> float:
        if self.kind == "gaussian":
            return self.scale**2
        return 2.0 * self.scale**2


def _is_kl(t: float) -> bool:
    return abs(t) < KL_BRANCH_TOL


def _check_sensitivity(delta: float) -> None:
    if not (delta >= 0 and math.isfinite(delta)):
        raise DomainError(f"sensitivity must be finite and non-negative, got {delta}")


def calibrate_gaussian_pdp(delta_l2: float, budget: PrivacyBudget, dim: int = 1) -> NoiseSpec:
    """Gaussian noise level giving ``(lam, eps)``-PDP for an L2 sensitivity ``delta_l2``."""
    _check_sensitivity(delta_l2)
    t, eps = budget.t, budget.epsilon
    if delta_l2 == 0:
        return NoiseSpec("gaussian", 0.0, 0.0, dim)
    if eps <= 0:
        raise DomainError("epsilon must be positive for non-zero sensitivity")
    if _is_kl(t):
        var = delta_l2**2 / (2.0 * eps)
    else:
        arg = t * eps
        if arg <= -1.0:
            if budget.is_hdp and budget.epsilon == 2 * HDP_MAX:
                return NoiseSpec("gaussian", 0.0, delta_l2, dim)
            raise DomainError(f"log argument 1 + t*eps = {1 + arg} is not positive")
        var = delta_l2**2 * t / (2.0 * math.log1p(arg))
    return NoiseSpec("gaussian", math.sqrt(var), delta_l2, dim)


def calibrate_gaussian_hdp(delta_l2: float, epsilon_hdp: float, dim: int = 1) -> NoiseSpec:
    """Gaussian noise level giving ``epsilon_hdp``-HDP.

    ``epsilon_hdp = 2`` is the vacuous level and yields zero noise.
    """
    if not 0 < epsilon_hdp <= HDP_MAX:
        raise DomainError(f"HDP epsilon must lie in (0, 2], got {epsilon_hdp}")
    _check_sensitivity(delta_l2)
    if epsilon_hdp == HDP_MAX or delta_l2 == 0:
        return NoiseSpec("gaussian", 0.0, delta_l2, dim)
    var = delta_l2**2 / (-8.0 * math.log1p(-0.5 * epsilon_hdp))
    return NoiseSpec("gaussian", math.sqrt(var), delta_l2, dim)


def calibrate_laplace_pdp(delta_l1: float, budget: PrivacyBudget, dim: int = 1) -> NoiseSpec:
    """Laplace scale giving ``(lam, eps)``-PDP for an L1 sensitivity ``delta_l1``."""
    _check_sensitivity(delta_l1)
    lam, t, eps = budget.lam, budget.t, budget.epsilon
    if delta_l1 == 0:
        return NoiseSpec("laplace", 0.0, 0.0, dim)
    if eps <= 0:
        raise DomainError("epsilon must be positive for non-zero sensitivity")
    if _is_kl(t):
        return NoiseSpec("laplace", delta_l1 / eps, delta_l1, dim)
    if t * eps <= -1.0:
        if budget.is_hdp and budget.epsilon == 2 * HDP_MAX:
            return NoiseSpec("laplace", 0.0, delta_l1, dim)
        raise DomainError(f"log argument 1 + t*eps = {1 + t * eps} is not positive")
    log_term = math.log1p(t * eps)
    sgn = lambda x: float((x > 0) - (x < 0))  # noqa: E731
    b = max(
        sgn(lam) * (lam + 1.0) * delta_l1 / log_term,
        sgn(lam + 1.0) * lam * delta_l1 / log_term,
    )
    return NoiseSpec("laplace", b, delta_l1, dim)


def _bisect_increasing(f: Callable[[float], float], target: float, lo: float, hi: float) -> float:
    """Solve ``f(x) = target`` for increasing ``f`` with ``f(lo) <= target <= f(hi)``.

    Stops once ``|f(x) - target| <= ROOT_TOL`` or the bracket stops shrinking.
    """
    best, best_err = lo, abs(f(lo) - target)
    for _ in range(ROOT_MAXITER):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        val = f(mid)
        err = abs(val - target)
        if err < best_err:
            best, best_err = mid, err
        if err <= ROOT_TOL:
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    hi_err = abs(f(hi) - target)
    if hi_err < best_err:
        best, best_err = hi, hi_err
    if best_err > ROOT_TOL * max(1.0, abs(target)) * 1e3:
        raise RootFindingError(f"bisection stalled with residual {best_err:g}")
    return best


def calibrate_laplace_hdp_exact_1d(delta_l1: float, epsilon_hdp: float) -> NoiseSpec:
    """Smallest Laplace scale giving ``epsilon_hdp``-HDP for a scalar query.

    Inverts the exact one-dimensional Laplace Hellinger distance rather than the
    L1 upper bound, so the scale is strictly below :func:`calibrate_laplace_pdp`
    at ``lam = -1/2``.
    """
    if not delta_l1 > 0:
        raise DomainError(f"sensitivity must be positive, got {delta_l1}")
    if not 0 < epsilon_hdp < HDP_MAX:
        raise DomainError(f"HDP epsilon must lie in (0, 2), got {epsilon_hdp}")

    # squared Hellinger of Lap(0,b) vs Lap(delta,b), written in r = delta / (2b);
    # increasing in r
    def hd(r: float) -> float:
        return -2.0 * (math.exp(-r) * (1.0 + r) - 1.0)

    lo, hi = 0.0, 1.0
    while hd(hi) < epsilon_hdp:
        hi *= 2.0
        if hi > 1e6:
            raise RootFindingError(f"cannot bracket Laplace scale for eps={epsilon_hdp}")
    r = _bisect_increasing(hd, epsilon_hdp, lo, hi)
    b = delta_l1 / (2.0 * r)
    return NoiseSpec("laplace", b, delta_l1, 1)


def laplace_hdp_of_scale(delta_l1: float, b: float) -> float:
    """HDP level (squared Hellinger) of a scalar Laplace mechanism with scale ``b``."""
    return 0.5 * laplace_power_divergence_exact([delta_l1], b, HDP_LAMBDA)


def compose_pdp(e1: float, e2: float, lam: float) -> float:
    """Sequential / adaptive composition of two ``(lam, .)``-PDP mechanisms."""
    PrivacyBudget(lam, e1)
    PrivacyBudget(lam, e2)
    return e1 + e2 + lam * (lam + 1.0) * e1 * e2


def _check_hdp(eps: float) -> None:
    if not 0 <= eps <= HDP_MAX:
        raise DomainError(f"HDP epsilon must lie in [0, 2], got {eps}")


def compose_hdp(e1: float, e2: float) -> float:
    """Sequential / adaptive composition of two HDP mechanisms."""
    _check_hdp(e1)
    _check_hdp(e2)
    return e1 + e2 - 0.5 * e1 * e2


def compose_hdp_parallel(e1: float, e2: float) -> float:
    """Composition over disjoint datasets."""
    _check_hdp(e1)
    _check_hdp(e2)
    return max(e1, e2)


def compose_hdp_k(eps_per_step: float, k: int) -> float:
    """HDP level after ``k`` adaptive compositions of an ``eps_per_step`` mechanism.

    Runs the recursion ``h_j = x + h_{j-1} - x h_{j-1} / 2`` with ``h_1 = x``.
    """
    _check_hdp(eps_per_step)
    if k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    h = eps_per_step
    for _ in range(k - 1):
        h = eps_per_step + h - 0.5 * eps_per_step * h
    return h


def compose_hdp_k_closed(eps_per_step: float, k: int) -> float:
    """Closed form ``2 (1 - (1 - x/2)^k)`` of :func:`compose_hdp_k`."""
    _check_hdp(eps_per_step)
    return -2.0 * math.expm1(k * math.log1p(-0.5 * eps_per_step)) if eps_per_step < 2 else 2.0


def solve_per_step_epsilon(eps_total: float, K: int) -> float:
    """Per-iteration HDP level whose ``K``-fold composition equals ``eps_total``."""
    if not 0 < eps_total <= HDP_MAX:
        raise DomainError(f"total HDP epsilon must lie in (0, 2], got {eps_total}")
    if K < 1:
        raise DomainError(f"K must be a positive integer, got {K}")
    if K == 1 or eps_total == HDP_MAX:
        return eps_total
    # h_K(eps/K) <= eps and h_K(eps) >= eps bracket the root
    return _bisect_increasing(lambda x: compose_hdp_k(x, K), eps_total, eps_total / K, eps_total)


def solve_per_step_epsilon_pdp(eps_total: float, K: int, lam: float) -> float:
    """Per-iteration PDP level whose ``K``-fold composition at ``lam`` equals ``eps_total``."""
    PrivacyBudget(lam, eps_total)
    if K < 1:
        raise DomainError(f"K must be a positive integer, got {K}")
    t = lam * (lam + 1.0)

    def compose_k(x: float) -> float:
        h = x
        for _ in range(K - 1):
            h = x + h + t * x * h
        return h

    if K == 1:
        return eps_total
    return _bisect_increasing(compose_k, eps_total, 0.0, eps_total)


def group_privacy_hdp(eps: float, k: int) -> float:
    """HDP level for datasets differing in ``k`` records, capped at 2."""
    _check_hdp(eps)
    if k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    return min(k * k * eps, HDP_MAX)


def hdp_to_approx_dp(eps: float) -> tuple[float, float]:
    """``(eps', delta')`` approximate-DP guarantee implied by ``eps``-HDP."""
    _check_hdp(eps)
    return 0.0, math.sqrt(eps)


def std_normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    return _STD_NORMAL.inv_cdf(p)


def hdp_to_gdp(eps: float) -> float | None:
    """``mu``-GDP parameter implied by ``eps``-HDP.

    Returns ``None`` when ``eps >= 1``: the quantile argument reaches 1 and no
    finite ``mu`` exists.
    """
    _check_hdp(eps)
    p = (math.sqrt(eps) + 1.0) / 2.0
    if p >= 1.0:
        return None
    return 2.0 * std_normal_quantile(p)


def pdp_to_rdp(budget: PrivacyBudget, loose: bool = False) -> tuple[float, float]:
    """Renyi-DP ``(alpha, eps_rdp)`` equivalent of a PDP budget with ``lam > 0``.

    With ``loose=True`` returns the weaker ``(alpha, alpha * eps)`` statement.
    """
    lam, eps = budget.lam, budget.epsilon
    if not lam > 0:
        raise ConversionError(f"RDP conversion needs lambda > 0, got {lam}")
    alpha = lam + 1.0
    if loose:
        return alpha, alpha * eps
    return alpha, math.log1p(eps * lam * (lam + 1.0)) / lam


def pdp_to_zcdp(budget: PrivacyBudget) -> float:
    """zCDP parameter of an additive Gaussian mechanism calibrated to ``budget``.

    Pass-through: such a mechanism is ``eps``-zCDP for ``lam > 0``.
    """
    if not budget.lam > 0:
        raise ConversionError(f"zCDP link needs lambda > 0, got {budget.lam}")
    return budget.epsilon


def pdp_to_approx_dp(budget: PrivacyBudget, delta: float) -> float:
    """``eps_DP`` such that ``(lam, eps)``-PDP implies ``(eps_DP, delta)``-DP."""
    lam, eps = budget.lam, budget.epsilon
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    num = math.log((lam * (lam + 1.0) * eps + 1.0) / delta)
    if lam > 0:
        return num / lam
    if lam < -1:
        return -num / (lam + 1.0)
    raise ConversionError(f"(eps, delta)-DP conversion undefined for lambda={lam} in [-1, 0]")


@dataclass
class HdpLedger:
    """Running adaptive-composition state for a sequence of HDP releases."""

    spent: float = 0.0
    steps: int = 0

    def charge(self, eps: float) -> float:
        self.spent = compose_hdp(self.spent, eps)
        self.steps += 1
        return self.spent

    def copy(self) -> "HdpLedger":
        return HdpLedger(self.spent, self.steps)
