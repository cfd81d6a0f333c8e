"""PAN allocation rules: estimation, detection and selection.

Every function here wraps the same compiled kernel the simulation loop uses,
so a sequence of ``pan_step`` calls consumes the random stream exactly as a
harness run does.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import _engine as e
from . import _geometry as g
from .chernoff import (
    ChernoffResult,
    ContractError,
    InstanceError,
    Pitfall,
    PitfallKind,
    Query,
    _tag,
    correct_answer,
    glrt_statistic,
    pitfall_table,
    prepare_means,
)
from .divergences import DomainError, FamilyKind, RewardFamily

log = logging.getLogger(__name__)

DEFAULT_TS_CAP = 10_000


class InitializationError(RuntimeError):
    """A rule was invoked before every arm had been sampled."""


class SufficientStats:
    """Per-arm counts, reward sums and sums of squares."""

    def __init__(self, family: RewardFamily, n_arms: int):
        self.family = family
        self.n_arms = n_arms
        self.counts = np.zeros(n_arms)
        self.sums = np.zeros(n_arms)
        self.sumsq = np.zeros(n_arms)
        self.variances = family.variance_array(n_arms)

    @classmethod
    def from_arrays(cls, family, counts, sums, sumsq=None):
        counts = np.asarray(counts, dtype=float)
        st = cls(family, counts.size)
        st.counts = counts.copy()
        st.sums = np.asarray(sums, dtype=float).copy()
        st.sumsq = np.zeros_like(counts) if sumsq is None else np.asarray(sumsq, dtype=float).copy()
        return st

    def update(self, arm: int, reward: float) -> None:
        self.counts[arm] += 1
        self.sums[arm] += reward
        self.sumsq[arm] += reward * reward

    @property
    def t(self) -> int:
        return int(self.counts.sum())

    def allocation(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    def means(self) -> np.ndarray:
        self.require_initialized(1)
        return self.sums / self.counts

    def require_initialized(self, n0: int) -> None:
        if np.any(self.counts < n0):
            raise InitializationError(f"every arm needs at least {n0} samples first")


@dataclass(frozen=True)
class Posterior:
    """Independent per-arm posterior under a flat prior.

    Gaussian arms: Normal(mean, variance / N). Bernoulli arms:
    Beta(1 + successes, 1 + failures); ``mean``/``var`` report its moments.
    """

    stats: SufficientStats

    def __post_init__(self):
        if self.stats.family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
            raise DomainError("no posterior is defined for the unknown-variance family")
        self.stats.require_initialized(1)

    def moments(self):
        K = self.stats.n_arms
        mean, s2 = np.empty(K), np.empty(K)
        e.posterior_moments(self.stats.family.code, self.stats.counts, self.stats.sums,
                            self.stats.variances, mean, s2)
        return mean, s2

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(self.stats.n_arms)
        e.posterior_draw(self.stats.family.code, self.stats.counts, self.stats.sums,
                         self.stats.variances, rng, out)
        return out


class Estimation(enum.Enum):
    EB = e.EST_EB
    TS = e.EST_TS
    ORACLE = e.EST_ORACLE


class Detection(enum.Enum):
    KKT = e.DET_KKT
    TS = e.DET_TS
    PPS = e.DET_PPS


class Selection(enum.Enum):
    IDS = e.SEL_IDS
    FIXED_BETA = e.SEL_BETA


@dataclass(frozen=True)
class RuleConfig:
    """An estimation-detection-selection combination, e.g. TS-TS-IDS."""

    estimation: Estimation
    detection: Detection
    selection: Selection = Selection.IDS
    beta: float = 0.5
    ts_detection_cap: int = DEFAULT_TS_CAP

    def __post_init__(self):
        if self.selection is Selection.FIXED_BETA and not 0.0 < self.beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.ts_detection_cap < 1:
            raise DomainError("ts_detection_cap must be >= 1")

    @classmethod
    def parse(cls, name: str, ts_detection_cap: int = DEFAULT_TS_CAP) -> "RuleConfig":
        """Parse names like ``"TS-KKT-IDS"`` or ``"TS-PPS-0.5"``."""
        try:
            est, det, sel = name.upper().split("-")
            estimation, detection = Estimation[est], Detection[det]
        except (ValueError, KeyError):
            raise DomainError(f"cannot parse rule name {name!r}") from None
        if sel == "IDS":
            return cls(estimation, detection, Selection.IDS, ts_detection_cap=ts_detection_cap)
        try:
            beta = float(sel)
        except ValueError:
            raise DomainError(f"unknown selection {sel!r}") from None
        return cls(estimation, detection, Selection.FIXED_BETA, beta, ts_detection_cap)

    @property
    def name(self) -> str:
        sel = "IDS" if self.selection is Selection.IDS else f"{self.beta:g}"
        return f"{self.estimation.name}-{self.detection.name}-{sel}"


@dataclass(frozen=True)
class Detected:
    pitfall: Pitfall
    attempts: int = 0
    fallback: bool = False


@dataclass(frozen=True)
class StepRecord:
    arm: int
    theta_hat: np.ndarray
    pitfall: Pitfall | None
    weights: np.ndarray | None
    fallback: bool


def estimate(config: RuleConfig, stats: SufficientStats, rng: np.random.Generator,
             theta_true=None) -> np.ndarray:
    """Mean estimate: empirical means (EB), one posterior draw (TS) or the truth (ORACLE)."""
    stats.require_initialized(1)
    K = stats.n_arms
    truth = np.zeros(K) if theta_true is None else np.asarray(theta_true, dtype=float)
    if config.estimation is Estimation.ORACLE and theta_true is None:
        raise ContractError("oracle estimation needs the true means")
    out, var_use = np.empty(K), np.empty(K)
    e.estimate_k(config.estimation.value, stats.family.code, stats.counts, stats.sums,
                 stats.sumsq, stats.variances, truth, rng, out, var_use)
    return out


def _table(query, family, theta_hat):
    theta_hat = prepare_means(family, theta_hat)
    pfi, pff = pitfall_table(query, theta_hat)
    return theta_hat, pfi, pff


def detect_kkt(query: Query, theta_hat, p, family: RewardFamily | None = None) -> Pitfall:
    """Principal pitfall: the minimiser of the Chernoff information."""
    return glrt_statistic(query, theta_hat, p, family)[1]


def detect_ts(query: Query, theta_hat, stats: SufficientStats, rng: np.random.Generator,
              cap: int = DEFAULT_TS_CAP) -> Detected:
    """Thompson-sampling detection with a KKT fallback after ``cap`` attempts."""
    correct_answer(query, theta_hat)
    theta_hat, pfi, pff = _table(query, stats.family, theta_hat)
    post = Posterior(stats)
    r, attempts = e.detect_ts_k(stats.family.code, post.stats.counts, stats.sums,
                                stats.variances, pfi, pff, int(cap), rng)
    if r < 0:
        log.info("TS detection hit the cap of %d draws; falling back to KKT", cap)
        return Detected(detect_kkt(query, theta_hat, stats.allocation(), stats.family),
                        attempts, True)
    return Detected(_tag(query, pfi[r]), attempts, False)


def pps_probabilities(query: Query, theta_hat, stats: SufficientStats) -> dict:
    """Posterior mass of each pitfall's alternative (unnormalised)."""
    theta_hat, pfi, pff = _table(query, stats.family, theta_hat)
    Posterior(stats)
    w = np.empty(pfi.shape[0])
    e.pps_weights(stats.family.code, stats.counts, stats.sums, stats.variances, pfi, pff, w)
    return {_tag(query, pfi[r]): float(w[r]) for r in range(pfi.shape[0])}


def detect_pps(query: Query, theta_hat, stats: SufficientStats,
               rng: np.random.Generator) -> Detected:
    """Pitfall sampled proportionally to its posterior mass (KKT fallback)."""
    correct_answer(query, theta_hat)
    theta_hat, pfi, pff = _table(query, stats.family, theta_hat)
    Posterior(stats)
    r = e.detect_pps_k(stats.family.code, stats.counts, stats.sums, stats.variances,
                       pfi, pff, rng)
    if r < 0:
        return Detected(detect_kkt(query, theta_hat, stats.allocation(), stats.family), 0, True)
    return Detected(_tag(query, pfi[r]))


def select_ids(result: ChernoffResult, rng: np.random.Generator) -> int:
    """Arm drawn from the selection weights of ``result``."""
    return int(e.sample_index(np.asarray(result.weights, dtype=float), rng))


def select_beta(candidates, beta: float, rng: np.random.Generator) -> int:
    """Leader with probability ``beta``, challenger otherwise.

    Args:
        candidates: ``(leader, challenger)`` or a pair pitfall ``Pair(i, j)``
            whose first arm is the leader.

    Raises:
        ContractError: ``candidates`` is not a pair.
    """
    if isinstance(candidates, Pitfall):
        if candidates.kind is not PitfallKind.PAIR:
            raise ContractError("beta selection needs a pair (leader, challenger)")
        candidates = (candidates.i, candidates.j)
    leader, challenger = (int(c) for c in candidates)
    if leader == challenger:
        raise ContractError("leader and challenger must differ")
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    return int(e.select_beta_k(leader, challenger, float(beta), rng))


def pan_step(config: RuleConfig, query: Query, stats: SufficientStats,
             rng: np.random.Generator, theta_true=None, crn_rho: float | None = None,
             n0: int = 1) -> StepRecord:
    """One estimate, detect, select step.

    ``crn_rho`` switches pair pitfalls to the correlated-noise information;
    ``theta_true`` feeds ORACLE estimation.
    """
    stats.require_initialized(n0)
    if config.selection is Selection.FIXED_BETA and any(
            row[0] != g.PF_PAIR for row in pitfall_table(query, stats.means())[0]):
        raise ContractError("beta selection is only defined for pair pitfalls")
    K = stats.n_arms
    truth = np.zeros(K) if theta_true is None else np.asarray(theta_true, dtype=float)
    theta_hat, h = np.empty(K), np.empty(K)
    sd = np.sqrt(stats.variances)
    arm, pk, pa, pb, fb = e.pan_step_k(
        stats.family.code, stats.counts, stats.sums, stats.sumsq, stats.variances, sd,
        crn_rho is not None, float(crn_rho or 0.0), truth, *query.kernel_args(),
        config.estimation.value, config.detection.value, config.selection.value,
        float(config.beta), int(config.ts_detection_cap), rng, theta_hat, h)
    try:
        correct_answer(query, theta_hat)
    except InstanceError:
        log.debug("tied estimate %s; ties broken toward lower indices", theta_hat)
    tag = _tag(query, np.array([pk, pa, pb]))
    return StepRecord(int(arm), theta_hat, tag, h, bool(fb))


def uniform_step(stats: SufficientStats) -> int:
    """Round-robin baseline: arm ``t mod K``."""
    return stats.t % stats.n_arms
