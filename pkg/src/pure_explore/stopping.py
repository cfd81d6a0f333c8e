"""GLRT stopping thresholds, the stopping test and the terminal decision."""
from __future__ import annotations

import enum
import math

import numpy as np

from . import _engine as e
from . import _geometry as g
from .chernoff import Query, lenient_answer, pitfall_table
from .divergences import DomainError

ZETA2 = math.pi ** 2 / 6.0
_HINV_ITER = 200


class ThresholdKind(enum.Enum):
    THEORETICAL = e.THR_THEORETICAL
    PRACTICAL = e.THR_PRACTICAL
    HEURISTIC = e.THR_HEURISTIC


def h(u: float) -> float:
    return u - math.log(u)


def h_inv(y: float) -> float:
    """Inverse of ``h`` on the branch ``u >= 1`` (requires ``y >= 1``)."""
    if y < 1.0:
        raise DomainError(f"h_inv is defined for y >= 1, got {y}")
    # h(2y) = 2y - log(2y) >= y for every y >= 1
    lo, hi = 1.0, 2.0 * y
    for _ in range(_HINV_ITER):
        mid = 0.5 * (lo + hi)
        if h(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def h_tilde(z: float, x: float) -> float:
    loglogz = math.log(math.log(z))
    if x >= h(1.0 / math.log(z)):
        u = h_inv(x)
        return math.exp(1.0 / u) * u
    return z * (x - loglogz)


def c_exp(x: float) -> float:
    return 2.0 * h_tilde(1.5, (h_inv(1.0 + x) + math.log(2.0 * ZETA2)) / 2.0)


# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def norm_ppf(q: float) -> float:
    """Standard normal quantile: rational approximation plus one Newton step."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    lo = 0.02425
    if q < lo:
        r = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    elif q > 1.0 - lo:
        r = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -(((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    else:
        s = q - 0.5
        r = s * s
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    return x - err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")


def threshold_constant(kind: ThresholdKind, delta: float, n_arms: int) -> float:
    """Part of the threshold that does not depend on the sampling state."""
    _check_delta(delta)
    if kind is ThresholdKind.THEORETICAL:
        return n_arms * c_exp(math.log(1.0 / delta) / n_arms)
    if kind is ThresholdKind.HEURISTIC:
        return norm_ppf(1.0 - delta)
    return 0.0


def threshold(kind: ThresholdKind, t: int, delta: float, n_arms: int | None = None,
              counts=None) -> float:
    """Stopping threshold gamma(t, delta).

    Args:
        kind: threshold family.
        t: number of samples so far (>= 1).
        delta: confidence parameter in (0, 1).
        n_arms: number of arms (Theoretical only; inferred from ``counts``).
        counts: per-arm sample counts, all >= 1 (Theoretical only).
    """
    _check_delta(delta)
    if t < 1:
        raise DomainError("t must be >= 1")
    if kind is ThresholdKind.THEORETICAL:
        if counts is None:
            raise DomainError("the theoretical threshold needs per-arm counts")
        counts = np.asarray(counts, dtype=float)
        if np.any(counts < 1):
            raise DomainError("all counts must be >= 1")
        const = threshold_constant(kind, delta, n_arms or counts.size)
        return float(e.threshold_k(kind.value, float(t), counts, delta, const))
    const = threshold_constant(kind, delta, n_arms or 1)
    return float(e.threshold_k(kind.value, float(t), np.ones(1), delta, const))


def glrt_evidence(query: Query, stats, crn_rho: float | None = None) -> float:
    """``t * Gamma`` at the empirical means, computed on raw counts."""
    fam = stats.family.code
    K = stats.n_arms
    means = np.empty(K)
    var_use = np.empty(K)
    e.empirical(fam, stats.counts, stats.sums, stats.sumsq, stats.variances, means, var_use)
    pfi, pff = pitfall_table(query, means)
    crn = crn_rho is not None
    value, _ = g.glrt_min(fam, means, var_use, stats.counts, pfi, pff, crn,
                          np.sqrt(var_use), float(crn_rho or 0.0))
    return float(value)


def should_stop(query: Query, stats, kind: ThresholdKind, delta: float,
                crn_rho: float | None = None) -> bool:
    """GLRT stopping test: evidence strictly above the threshold."""
    stats.require_initialized(1)
    gamma = threshold(kind, stats.t, delta, stats.n_arms, stats.counts)
    return glrt_evidence(query, stats, crn_rho) > gamma


def decision(query: Query, stats):
    """Answer at the empirical means, ties toward lower indices."""
    return lenient_answer(query, stats.means())
