"""Exploration queries, pitfall decompositions and generalized Chernoff information.

Indices are 0-based throughout. Mean vectors and allocations are 1-D float
arrays; allocations need not lie on the simplex (the information is
homogeneous of degree one in ``p``).
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _geometry as g
from .divergences import (
    BERNOULLI_CLAMP,
    DomainError,
    FamilyKind,
    RewardFamily,
)


class InstanceError(ValueError):
    """The mean vector does not determine a unique answer."""


class ContractError(ValueError):
    """An argument violates the calling contract (e.g. foreign pitfall)."""


class QueryKind(enum.Enum):
    BEST_ARM = g.Q_BEST_ARM
    BEST_K = g.Q_BEST_K
    THRESHOLD = g.Q_THRESHOLD
    CLOSEST_TO_THRESHOLD = g.Q_CLOSEST
    ALL_EPSILON_GOOD = g.Q_ALL_EPS
    EPSILON_BEST_ARM = g.Q_EPS_BEST
    SIGNED = g.Q_SIGNED
    MURPHY = g.Q_MURPHY
    PAIRWISE = g.Q_PAIRWISE


_NEEDS_THRESHOLD = {QueryKind.THRESHOLD, QueryKind.CLOSEST_TO_THRESHOLD, QueryKind.SIGNED,
                    QueryKind.MURPHY}
_NEEDS_EPS = {QueryKind.ALL_EPSILON_GOOD, QueryKind.EPSILON_BEST_ARM}


@dataclass(frozen=True)
class Query:
    """An exploration question about the mean vector.

    Use the classmethod constructors rather than the raw fields. Pairwise
    queries carry ``classes``: a tuple of answer classes, each a tuple of
    ordered pairs ``(i, j)`` meaning ``theta_i > theta_j``.
    """

    kind: QueryKind
    k: int = 0
    threshold: float = 0.0
    epsilon: float = 0.0
    classes: tuple = ()

    def __post_init__(self):
        if self.kind is QueryKind.BEST_K and self.k < 1:
            raise DomainError(f"BestK needs k >= 1, got {self.k}")
        if self.kind in _NEEDS_EPS and not self.epsilon >= 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if not math.isfinite(self.threshold):
            raise DomainError("threshold must be finite")

    @classmethod
    def best_arm(cls):
        return cls(QueryKind.BEST_ARM)

    @classmethod
    def best_k(cls, k: int):
        return cls(QueryKind.BEST_K, k=int(k))

    @classmethod
    def thresholding(cls, threshold: float):
        return cls(QueryKind.THRESHOLD, threshold=float(threshold))

    @classmethod
    def closest_to_threshold(cls, threshold: float):
        return cls(QueryKind.CLOSEST_TO_THRESHOLD, threshold=float(threshold))

    @classmethod
    def all_epsilon_good(cls, epsilon: float):
        return cls(QueryKind.ALL_EPSILON_GOOD, epsilon=float(epsilon))

    @classmethod
    def epsilon_best_arm(cls, epsilon: float):
        return cls(QueryKind.EPSILON_BEST_ARM, epsilon=float(epsilon))

    @classmethod
    def signed(cls, threshold: float):
        return cls(QueryKind.SIGNED, threshold=float(threshold))

    @classmethod
    def murphy(cls, threshold: float):
        return cls(QueryKind.MURPHY, threshold=float(threshold))

    @classmethod
    def pairwise(cls, classes, n_arms: int):
        """Pairwise query; the partition is validated against all rankings.

        Raises:
            DomainError: a class holds both (i, j) and (j, i), an index is out
                of range, or the classes do not partition the rankings of
                ``n_arms`` arms (checked exhaustively for up to 8 arms).
        """
        norm = tuple(tuple((int(i), int(j)) for i, j in c) for c in classes)
        _validate_pairwise(norm, n_arms)
        return cls(QueryKind.PAIRWISE, k=int(n_arms), classes=norm)

    def validate_for(self, n_arms: int) -> None:
        if n_arms < 2:
            raise DomainError("at least two arms are required")
        if self.kind is QueryKind.BEST_K and not 1 <= self.k < n_arms:
            raise DomainError(f"BestK needs 1 <= k < K, got k={self.k}, K={n_arms}")
        if self.kind is QueryKind.PAIRWISE and self.k != n_arms:
            raise DomainError(f"pairwise query built for {self.k} arms, instance has {n_arms}")

    def kernel_args(self):
        pairs = [(c, i, j) for c, cl in enumerate(self.classes) for i, j in cl]
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 3)
        return (self.kind.value, self.k, self.threshold, self.epsilon,
                np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1]),
                np.ascontiguousarray(arr[:, 2]), len(self.classes))


def _validate_pairwise(classes, n_arms):
    if not classes:
        raise DomainError("pairwise query needs at least one class")
    for c in classes:
        s = set(c)
        for i, j in c:
            if i == j or not (0 <= i < n_arms and 0 <= j < n_arms):
                raise DomainError(f"invalid pair ({i}, {j}) for {n_arms} arms")
            if (j, i) in s:
                raise DomainError(f"class contains both ({i}, {j}) and ({j}, {i})")
    if n_arms <= 8:
        for perm in itertools.permutations(range(n_arms)):
            rank = np.empty(n_arms)
            rank[list(perm)] = np.arange(n_arms, 0, -1)
            hits = sum(all(rank[i] > rank[j] for i, j in c) for c in classes)
            if hits != 1:
                raise DomainError(
                    f"classes are not a partition: ranking {perm} matches {hits} classes")


class PitfallKind(enum.Enum):
    ARM = "arm"
    PAIR = "pair"
    WHOLE = "whole"


@dataclass(frozen=True)
class Pitfall:
    kind: PitfallKind
    i: int = -1
    j: int = -1

    @classmethod
    def arm(cls, i):
        return cls(PitfallKind.ARM, int(i))

    @classmethod
    def pair(cls, i, j):
        if i == j:
            raise DomainError("pair pitfall needs distinct arms")
        return cls(PitfallKind.PAIR, int(i), int(j))

    @classmethod
    def whole(cls):
        return cls(PitfallKind.WHOLE)

    def __str__(self):
        if self.kind is PitfallKind.ARM:
            return f"Arm({self.i})"
        if self.kind is PitfallKind.PAIR:
            return f"Pair({self.i},{self.j})"
        return "Whole"


@dataclass(frozen=True)
class ChernoffResult:
    value: float
    minimizer: np.ndarray
    gradient: np.ndarray
    weights: np.ndarray
    active_set: frozenset
    variances: np.ndarray | None = None


DEFAULT_FAMILY = RewardFamily.gaussian((1.0,))


def _family(family):
    return DEFAULT_FAMILY if family is None else family


def prepare_means(family: RewardFamily, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 2:
        raise DomainError("mean vector must be 1-D with at least two arms")
    if not np.all(np.isfinite(theta)):
        raise DomainError("means must be finite")
    if family.kind is FamilyKind.BERNOULLI:
        theta = np.clip(theta, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
    return theta


def _prepare_p(p, n):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise DomainError(f"allocation must have length {n}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("allocation components must be finite and nonnegative")
    return p


def correct_answer(query: Query, theta):
    """The unique answer of ``query`` at ``theta``.

    Returns a frozenset of arm indices for set-valued queries, ``"+"``/``"-"``
    for Signed, ``"feasible"``/``"infeasible"`` for Murphy and the class index
    for Pairwise.

    Raises:
        InstanceError: ties or boundary means leave the answer ambiguous.
    """
    theta = np.asarray(theta, dtype=float)
    K = theta.size
    query.validate_for(K)
    kind = query.kind
    T = query.threshold
    if kind in (QueryKind.BEST_ARM, QueryKind.EPSILON_BEST_ARM):
        top = theta.max()
        if np.count_nonzero(theta == top) > 1:
            raise InstanceError("best arm is not unique")
        return frozenset({int(np.argmax(theta))})
    if kind is QueryKind.BEST_K:
        srt = np.sort(theta)[::-1]
        if not srt[query.k - 1] > srt[query.k]:
            raise InstanceError("k-th and (k+1)-th largest means are tied")
        return frozenset(int(i) for i in np.flatnonzero(theta >= srt[query.k - 1]))
    if kind is QueryKind.THRESHOLD:
        if np.any(theta == T):
            raise InstanceError("a mean sits exactly at the threshold")
        return frozenset(int(i) for i in np.flatnonzero(theta > T))
    if kind is QueryKind.CLOSEST_TO_THRESHOLD:
        dist = np.abs(theta - T)
        if np.count_nonzero(dist == dist.min()) > 1:
            raise InstanceError("closest arm to the threshold is not unique")
        return frozenset({int(np.argmin(dist))})
    if kind is QueryKind.ALL_EPSILON_GOOD:
        top = theta.max()
        cut = top - query.epsilon
        if np.count_nonzero(theta == top) > 1 or np.any((theta == cut) & (theta != top)):
            raise InstanceError("a mean sits exactly at the epsilon-good boundary")
        return frozenset(int(i) for i in np.flatnonzero(theta >= cut))
    if kind is QueryKind.SIGNED:
        if theta.min() > T:
            return "+"
        if theta.max() < T:
            return "-"
        raise InstanceError("signed query needs all means on one side of the threshold")
    if kind is QueryKind.MURPHY:
        lo = theta.min()
        if lo == T:
            raise InstanceError("smallest mean sits exactly at the threshold")
        return "feasible" if lo < T else "infeasible"
    hits = [c for c, cl in enumerate(query.classes) if all(theta[i] > theta[j] for i, j in cl)]
    if len(hits) != 1:
        raise InstanceError("means do not select a unique pairwise class")
    return hits[0]


def lenient_answer(query: Query, theta):
    """Answer with ties broken toward lower indices (used for decisions)."""
    theta = np.asarray(theta, dtype=float)
    kind = query.kind
    T = query.threshold
    if kind in (QueryKind.BEST_ARM, QueryKind.EPSILON_BEST_ARM):
        return frozenset({int(g.argmax_first(theta))})
    if kind is QueryKind.BEST_K:
        return frozenset(int(i) for i in np.flatnonzero(g.top_k_mask(theta, query.k)))
    if kind is QueryKind.THRESHOLD:
        return frozenset(int(i) for i in np.flatnonzero(theta > T))
    if kind is QueryKind.CLOSEST_TO_THRESHOLD:
        return frozenset({int(g.argmin_first(np.abs(theta - T)))})
    if kind is QueryKind.ALL_EPSILON_GOOD:
        return frozenset(int(i) for i in np.flatnonzero(theta >= theta.max() - query.epsilon))
    if kind is QueryKind.SIGNED:
        return "+" if g.signed_is_plus(theta, T) else "-"
    if kind is QueryKind.MURPHY:
        return "feasible" if theta.min() < T else "infeasible"
    args = query.kernel_args()
    return int(g.pairwise_class(theta, args[4], args[5], args[6], args[7]))


def is_correct(query: Query, theta, answer) -> bool:
    """Whether ``answer`` is acceptable at the true means ``theta``.

    EpsilonBestArm accepts any epsilon-good arm; every other query requires
    the exact answer.
    """
    theta = np.asarray(theta, dtype=float)
    if query.kind is QueryKind.EPSILON_BEST_ARM:
        (arm,) = tuple(answer)
        return bool(theta[arm] >= theta.max() - query.epsilon)
    return answer == correct_answer(query, theta)


def _tag(query: Query, pfi_row) -> Pitfall:
    kind, a, b = int(pfi_row[0]), int(pfi_row[1]), int(pfi_row[2])
    if kind == g.PF_WHOLE:
        return Pitfall.whole()
    if kind == g.PF_ARM:
        return Pitfall.arm(a)
    if query.kind in (QueryKind.BEST_ARM, QueryKind.EPSILON_BEST_ARM):
        return Pitfall.arm(b)
    if query.kind is QueryKind.CLOSEST_TO_THRESHOLD:
        return Pitfall.arm(a)
    return Pitfall.pair(a, b)


def pitfall_table(query: Query, theta):
    """Kernel table (pfi, pff) for ``theta``, no uniqueness check."""
    return g.build_pitfalls(*query.kernel_args(), np.asarray(theta, dtype=float))


def pitfalls(query: Query, theta) -> list[Pitfall]:
    """Ordered pitfall list; the order defines the tie-breaking ordinal."""
    correct_answer(query, theta)
    pfi, _ = pitfall_table(query, theta)
    return [_tag(query, row) for row in pfi]


def _row_of(query, pfi, pitfall):
    for r, row in enumerate(pfi):
        if _tag(query, row) == pitfall:
            return r
    raise ContractError(f"{pitfall} is not a pitfall of this query at these means")


def _result(fam, theta, var, p, pfi, pff, r, crn=False, sd=None, rho=0.0):
    K = theta.size
    grad = np.zeros(K)
    vt = np.zeros(K)
    h = np.zeros(K)
    sd = np.ones(K) if sd is None else sd
    value = g.pitfall_detail(fam, theta, var, p, pfi, pff, r, crn, sd, rho, grad, vt)
    g.ids_weights(fam, theta, var, p, pfi, pff, r, value, grad, h)
    active = frozenset(int(i) for i in np.flatnonzero(grad != 0.0))
    return value, grad, vt, h, active


def chernoff(query: Query, theta, p, pitfall: Pitfall, family: RewardFamily | None = None
             ) -> ChernoffResult:
    """Generalized Chernoff information of one pitfall.

    Args:
        query: exploration query.
        theta: mean vector; Bernoulli means are clamped into the open unit
            interval first.
        p: nonnegative allocation (any scale).
        pitfall: a member of ``pitfalls(query, theta)``.
        family: reward family, unit-variance Gaussian by default.

    Raises:
        ContractError: ``pitfall`` does not belong to the decomposition.
    """
    family = _family(family)
    if family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
        raise DomainError("use chernoff_unknown_variance for the unknown-variance family")
    theta = prepare_means(family, theta)
    K = theta.size
    p = _prepare_p(p, K)
    if query.kind is QueryKind.EPSILON_BEST_ARM:
        var = family.variance_array(K)
        if family.kind is not FamilyKind.GAUSSIAN_KNOWN_VARIANCE or np.any(var != 1.0):
            raise DomainError("EpsilonBestArm requires unit-variance Gaussian rewards")
    correct_answer(query, theta)
    pfi, pff = pitfall_table(query, theta)
    r = _row_of(query, pfi, pitfall)
    value, grad, vt, h, active = _result(family.code, theta, family.variance_array(K), p, pfi, pff, r)
    return ChernoffResult(float(value), vt, grad, h, active)


def _best_arm_row(theta, pitfall):
    query = Query.best_arm()
    correct_answer(query, theta)
    pfi, pff = pitfall_table(query, theta)
    if pitfall.kind is PitfallKind.PAIR:
        if pitfall.i != int(pfi[0, 1]):
            raise ContractError(f"{pitfall} does not start at the best arm")
        pitfall = Pitfall.arm(pitfall.j)
    return pfi, pff, _row_of(query, pfi, pitfall)


def chernoff_unknown_variance(theta, variances, p, pitfall: Pitfall) -> ChernoffResult:
    """Best-arm Chernoff information when variances are unknown (estimated).

    ``pitfall`` may be given as ``Arm(j)`` or ``Pair(best, j)``. The result
    also reports the minimizing variances ``variances_k + (theta_k -
    minimizer_k)**2``.
    """
    theta = prepare_means(RewardFamily.gaussian_unknown_variance(), theta)
    var = np.asarray(variances, dtype=float)
    if var.shape != theta.shape or np.any(~(var > 0)):
        raise DomainError("variances must be positive, one per arm")
    p = _prepare_p(p, theta.size)
    pfi, pff, r = _best_arm_row(theta, pitfall)
    value, grad, vt, h, active = _result(g.GAUSSIAN_UNKNOWN, theta, var, p, pfi, pff, r)
    return ChernoffResult(float(value), vt, grad, h, active, var + (theta - vt) ** 2)


def chernoff_crn(theta, sd, rho: float, p, pitfall: Pitfall) -> ChernoffResult:
    """Best-arm Chernoff information under equicorrelated Gaussian noise.

    Raises:
        DomainError: ``rho`` outside [0, 1) or nonpositive standard deviations.
    """
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    theta = prepare_means(DEFAULT_FAMILY, theta)
    sd = np.asarray(sd, dtype=float)
    if sd.shape != theta.shape or np.any(~(sd > 0)):
        raise DomainError("standard deviations must be positive, one per arm")
    p = _prepare_p(p, theta.size)
    pfi, pff, r = _best_arm_row(theta, pitfall)
    value, grad, vt, h, active = _result(g.GAUSSIAN, theta, sd * sd, p, pfi, pff, r,
                                         crn=True, sd=sd, rho=float(rho))
    return ChernoffResult(float(value), vt, grad, h, active)


def glrt_statistic(query: Query, theta, p, family: RewardFamily | None = None):
    """Minimum Chernoff information over pitfalls and the pitfall attaining it.

    Returns:
        ``(value, pitfall)``; ties go to the lowest pitfall ordinal.
    """
    family = _family(family)
    theta = prepare_means(family, theta)
    p = _prepare_p(p, theta.size)
    correct_answer(query, theta)
    pfi, pff = pitfall_table(query, theta)
    var = family.variance_array(theta.size)
    value, r = g.glrt_min(family.code, theta, var, p, pfi, pff, False, np.sqrt(var), 0.0)
    return float(value), _tag(query, pfi[r])
