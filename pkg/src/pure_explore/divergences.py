"""KL divergences for the supported reward families.

The scalar kernels (``kl_scalar``, ``dkl_dm2``) are shared with the compiled
simulation engine; the public functions add validation on top of them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit

# integer codes used inside kernels
GAUSSIAN = 0
BERNOULLI = 1
GAUSSIAN_UNKNOWN = 2

BERNOULLI_CLAMP = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of a divergence or distribution."""


class FamilyKind(enum.Enum):
    GAUSSIAN_KNOWN_VARIANCE = GAUSSIAN
    BERNOULLI = BERNOULLI
    GAUSSIAN_UNKNOWN_VARIANCE = GAUSSIAN_UNKNOWN


@dataclass(frozen=True)
class RewardFamily:
    """Reward distribution family of a bandit instance.

    ``variances`` is only meaningful for the known-variance Gaussian family,
    where it holds one variance per arm.
    """

    kind: FamilyKind
    variances: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind is FamilyKind.GAUSSIAN_KNOWN_VARIANCE:
            if not self.variances:
                raise DomainError("known-variance Gaussian family needs per-arm variances")
            if any(not (v > 0 and math.isfinite(v)) for v in self.variances):
                raise DomainError(f"variances must be strictly positive, got {self.variances}")
            object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        elif self.variances is not None:
            raise DomainError(f"{self.kind.name} family takes no variance parameters")

    @classmethod
    def gaussian(cls, variances) -> "RewardFamily":
        return cls(FamilyKind.GAUSSIAN_KNOWN_VARIANCE, tuple(np.atleast_1d(variances).tolist()))

    @classmethod
    def bernoulli(cls) -> "RewardFamily":
        return cls(FamilyKind.BERNOULLI)

    @classmethod
    def gaussian_unknown_variance(cls) -> "RewardFamily":
        return cls(FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE)

    @property
    def code(self) -> int:
        return self.kind.value

    def variance_array(self, n_arms: int) -> np.ndarray:
        """Per-arm variances as a float array (ones for families without them)."""
        if self.variances is None:
            return np.ones(n_arms)
        if len(self.variances) == 1:
            return np.full(n_arms, self.variances[0])
        if len(self.variances) != n_arms:
            raise DomainError(f"family has {len(self.variances)} variances for {n_arms} arms")
        return np.asarray(self.variances, dtype=float)


@njit
def kl_scalar(fam, m1, m2, var):
    if fam == BERNOULLI:
        return m1 * math.log(m1 / m2) + (1.0 - m1) * math.log((1.0 - m1) / (1.0 - m2))
    diff = m1 - m2
    return diff * diff / (2.0 * var)


@njit
def dkl_dm2(fam, m1, m2, var):
    """Derivative of kl_scalar in its second argument."""
    if fam == BERNOULLI:
        return (m2 - m1) / (m2 * (1.0 - m2))
    return (m2 - m1) / var


def kl(family: RewardFamily, arm: int, m1: float, m2: float) -> float:
    """KL divergence between two members of ``family`` with means m1 and m2.

    Args:
        family: reward family; for known-variance Gaussians the variance of
            ``arm`` is used.
        arm: arm index selecting the variance.
        m1, m2: means of the two distributions.

    Raises:
        DomainError: Bernoulli means outside the open interval (0, 1), or a
            family without a one-parameter KL (unknown-variance Gaussian).
    """
    if family.kind is FamilyKind.BERNOULLI:
        if not (0.0 < m1 < 1.0 and 0.0 < m2 < 1.0):
            raise DomainError(f"Bernoulli means must lie in (0, 1), got ({m1}, {m2})")
        return float(kl_scalar(BERNOULLI, float(m1), float(m2), 1.0))
    if family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
        raise DomainError("use kl_gaussian_two_param for the unknown-variance family")
    if not (math.isfinite(m1) and math.isfinite(m2)):
        raise DomainError("Gaussian means must be finite")
    var = family.variances[arm] if len(family.variances) > 1 else family.variances[0]
    return float(kl_scalar(GAUSSIAN, float(m1), float(m2), var))


def kl_gaussian_two_param(mean1: float, var1: float, mean2: float, var2: float) -> float:
    """KL from N(mean1, var1) to N(mean2, var2)."""
    if not (var1 > 0 and var2 > 0):
        raise DomainError(f"variances must be positive, got ({var1}, {var2})")
    ratio = var1 / var2
    return 0.5 * ((mean1 - mean2) ** 2 / var2 + ratio - 1.0 - math.log(ratio))
