"""Reward environments, single-run drivers and the seeded replication engine.

Replication ``r`` of an experiment draws from
``Generator(Philox(SeedSequence(master_seed, spawn_key=(r,))))``. Philox is
counter based, so streams for distinct replications are independent by
construction and results never depend on scheduling.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import _engine as e
from . import _geometry as g
from .chernoff import Query, QueryKind, correct_answer, is_correct, lenient_answer
from .divergences import DomainError, FamilyKind, RewardFamily
from .rules import Estimation, RuleConfig, Detection, Selection
from .stopping import ThresholdKind, threshold_constant

UNIFORM = "uniform"
DEFAULT_STEP_CAP = 10 ** 6

_PAIR_QUERIES = {QueryKind.BEST_ARM, QueryKind.BEST_K, QueryKind.CLOSEST_TO_THRESHOLD,
                 QueryKind.ALL_EPSILON_GOOD, QueryKind.EPSILON_BEST_ARM, QueryKind.PAIRWISE}


@dataclass(frozen=True)
class BanditInstance:
    """Ground truth of a bandit problem.

    ``rho`` switches on equicorrelated (CRN) Gaussian noise; ``None`` means
    independent arms. For the unknown-variance family, ``true_variances``
    holds the hidden noise variances.
    """

    family: RewardFamily
    means: tuple
    rho: float | None = None
    true_variances: tuple | None = None

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if len(means) < 2:
            raise DomainError("an instance needs at least two arms")
        if not all(math.isfinite(m) for m in means):
            raise DomainError("means must be finite")
        kind = self.family.kind
        if kind is FamilyKind.BERNOULLI and not all(0.0 < m < 1.0 for m in means):
            raise DomainError("Bernoulli means must lie in (0, 1)")
        if kind is FamilyKind.GAUSSIAN_KNOWN_VARIANCE:
            self.family.variance_array(len(means))
        if self.rho is not None:
            if kind is not FamilyKind.GAUSSIAN_KNOWN_VARIANCE:
                raise DomainError("CRN correlation requires known-variance Gaussian arms")
            if not 0.0 <= self.rho < 1.0:
                raise DomainError(f"rho must lie in [0, 1), got {self.rho}")
        if kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
            tv = self.true_variances or (1.0,) * len(means)
            if len(tv) == 1:
                tv = tv * len(means)
            if len(tv) != len(means) or not all(v > 0 for v in tv):
                raise DomainError("true_variances must be positive, one per arm")
            object.__setattr__(self, "true_variances", tuple(float(v) for v in tv))
        elif self.true_variances is not None:
            raise DomainError("true_variances only applies to the unknown-variance family")

    @property
    def K(self) -> int:
        return len(self.means)

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.means, dtype=float)

    def noise_variances(self) -> np.ndarray:
        if self.family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
            return np.asarray(self.true_variances, dtype=float)
        if self.family.kind is FamilyKind.BERNOULLI:
            th = self.theta
            return th * (1.0 - th)
        return self.family.variance_array(self.K)

    @property
    def n0(self) -> int:
        return 2 if self.family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE else 1


def make_rng(master_seed: int, replication: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.Philox(ss))


def _sampling_arrays(instance):
    theta = instance.theta
    var = (instance.noise_variances() if instance.family.kind is not FamilyKind.BERNOULLI
           else np.ones(instance.K))
    return theta, np.sqrt(var)


def sample(instance: BanditInstance, arm: int, rng: np.random.Generator) -> float:
    """One reward of ``arm``."""
    if not 0 <= arm < instance.K:
        raise DomainError(f"arm {arm} out of range")
    theta, sd = _sampling_arrays(instance)
    crn = instance.rho is not None
    return float(e.draw_reward(instance.family.code, theta, sd, crn,
                               float(instance.rho or 0.0), int(arm), rng))


def sample_latent(instance: BanditInstance, rng: np.random.Generator) -> np.ndarray:
    """Full latent CRN vector ``theta + sd * (sqrt(rho) Z0 + sqrt(1 - rho) Z)``."""
    theta, sd = _sampling_arrays(instance)
    rho = float(instance.rho or 0.0)
    z0 = rng.standard_normal()
    z = rng.standard_normal(instance.K)
    return theta + sd * (math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * z)


@dataclass(frozen=True)
class FixedConfidence:
    threshold: ThresholdKind = ThresholdKind.PRACTICAL
    delta: float = 0.1
    step_cap: int = DEFAULT_STEP_CAP


@dataclass(frozen=True)
class FixedBudget:
    budget: int
    checkpoints: tuple = ()


@dataclass(frozen=True)
class Convergence:
    budget: int
    checkpoints: tuple = ()


Mode = Union[FixedConfidence, FixedBudget, Convergence]


def geometric_checkpoints(start: int, stop: int, ratio: float = 1.25) -> tuple:
    """Distinct values of ceil(ratio**m) within [start, stop], plus ``stop``."""
    out = set()
    m = 0
    while True:
        v = math.ceil(ratio ** m)
        if v > stop:
            break
        if v >= start:
            out.add(v)
        m += 1
    out.add(stop)
    return tuple(sorted(out))


@dataclass(frozen=True)
class ExperimentConfig:
    instance: BanditInstance
    query: Query
    rule: RuleConfig | str
    mode: Mode
    replications: int = 1
    master_seed: int = 0
    log_steps: bool = False

    def __post_init__(self):
        errors = validate_config(self)
        if errors:
            raise DomainError("; ".join(errors))

    @property
    def uniform(self) -> bool:
        return self.rule == UNIFORM

    @property
    def horizon(self) -> int:
        if isinstance(self.mode, FixedConfidence):
            return self.mode.step_cap
        return self.mode.budget

    def checkpoints(self) -> tuple:
        if isinstance(self.mode, FixedConfidence):
            return ()
        if self.mode.checkpoints:
            return tuple(sorted(int(c) for c in self.mode.checkpoints))
        if isinstance(self.mode, Convergence):
            return geometric_checkpoints(self.instance.K * self.instance.n0, self.mode.budget)
        return ()


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """All invariant violations of ``cfg`` (empty when valid)."""
    errs = []
    inst, query = cfg.instance, cfg.query
    K = inst.K
    try:
        query.validate_for(K)
        correct_answer(query, inst.theta)
    except ValueError as exc:
        errs.append(f"instance/query: {exc}")
    if query.kind is QueryKind.EPSILON_BEST_ARM and (
            inst.family.kind is not FamilyKind.GAUSSIAN_KNOWN_VARIANCE
            or np.any(inst.family.variance_array(K) != 1.0)):
        errs.append("EpsilonBestArm requires unit-variance Gaussian rewards")
    if inst.rho is not None and query.kind is not QueryKind.BEST_ARM:
        errs.append("CRN information is only defined for BestArm")
    if cfg.replications < 1:
        errs.append("replications must be >= 1")
    if not 0 <= int(cfg.master_seed) < 2 ** 64:
        errs.append("seed must be an unsigned 64-bit integer")
    if cfg.rule != UNIFORM:
        if not isinstance(cfg.rule, RuleConfig):
            errs.append(f"rule must be a RuleConfig or {UNIFORM!r}")
        else:
            rule = cfg.rule
            if inst.family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE and (
                    rule.estimation is not Estimation.EB or rule.detection is not Detection.KKT
                    or rule.selection is not Selection.IDS):
                errs.append("unknown-variance runs support the EB-KKT-IDS rule only")
            if rule.selection is Selection.FIXED_BETA and query.kind not in _PAIR_QUERIES:
                errs.append("fixed-beta selection needs a query whose pitfalls are pairs")
    if inst.family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE and query.kind is not QueryKind.BEST_ARM:
        errs.append("the unknown-variance family supports BestArm only")
    mode = cfg.mode
    floor = K * inst.n0
    if isinstance(mode, FixedConfidence):
        if not 0.0 < mode.delta < 1.0:
            errs.append("delta must lie in (0, 1)")
        if mode.step_cap < floor:
            errs.append(f"step_cap must be >= K*n0 = {floor}")
    elif isinstance(mode, (FixedBudget, Convergence)):
        if mode.budget < floor:
            errs.append(f"budget must be >= K*n0 = {floor}")
        if any(not floor <= c <= mode.budget for c in mode.checkpoints):
            errs.append("checkpoints must lie within [K*n0, budget]")
    else:
        errs.append("unknown mode")
    return errs


@dataclass
class RunRecord:
    replication: int
    tau: int
    answer: object
    correct: bool
    censored: bool
    fallback_count: int
    counts: np.ndarray
    trajectory: np.ndarray | None = None
    wall_per_step: float = 0.0
    step_log: list | None = None


@dataclass(frozen=True)
class StepLog:
    t: int
    estimate_hash: str
    pitfall: tuple
    arm: int
    glrt: float


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    stderr: float
    ci95: float
    q1: float
    q3: float
    pcs: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "ci95": self.ci95,
                "q1": self.q1, "q3": self.q3, "pcs": self.pcs, "n": self.n}


def _run(cfg: ExperimentConfig, replication: int, seed: int | None = None) -> RunRecord:
    inst = cfg.instance
    rng = make_rng(cfg.master_seed if seed is None else seed, replication)
    theta = inst.theta
    fam = inst.family.code
    var_true = inst.noise_variances() if inst.family.kind is not FamilyKind.BERNOULLI \
        else np.ones(inst.K)
    var_alg = inst.family.variance_array(inst.K)
    crn = inst.rho is not None
    fc = isinstance(cfg.mode, FixedConfidence)
    if fc:
        kind, delta = cfg.mode.threshold, float(cfg.mode.delta)
        const = float(threshold_constant(kind, delta, inst.K))
    else:
        kind, delta, const = ThresholdKind.PRACTICAL, 0.5, 0.0
    rule = cfg.rule if not cfg.uniform else RuleConfig(Estimation.EB, Detection.KKT)
    cps = np.asarray(cfg.checkpoints(), dtype=np.int64)
    started = time.perf_counter()
    (t, stopped, N, S, Q, fallbacks, traj, log_arm, log_pf, log_glrt,
     log_est) = e.run_kernel(
        fam, theta, var_true, var_alg, crn, float(inst.rho or 0.0), *cfg.query.kernel_args(),
        cfg.uniform, rule.estimation.value, rule.detection.value, rule.selection.value,
        float(rule.beta), int(rule.ts_detection_cap), int(inst.n0), int(cfg.horizon),
        fc, kind.value, const, delta, cps, bool(cfg.log_steps), rng)
    elapsed = time.perf_counter() - started
    answer = lenient_answer(cfg.query, S / N)
    censored = fc and not stopped
    correct = (not censored) and is_correct(cfg.query, theta, answer)
    step_log = None
    if cfg.log_steps:
        step_log = [StepLog(s, hashlib.sha1(log_est[s].tobytes()).hexdigest()[:16],
                            tuple(int(v) for v in log_pf[s]), int(log_arm[s]),
                            float(log_glrt[s]))
                    for s in range(inst.K * inst.n0, int(t))]
    return RunRecord(replication, int(t), answer, bool(correct), bool(censored), int(fallbacks),
                     N.astype(np.int64), traj if cps.size else None,
                     elapsed / max(int(t), 1), step_log)


def run_fixed_confidence(cfg: ExperimentConfig, replication: int, seed: int | None = None
                         ) -> RunRecord:
    """Sample until the GLRT stops or the step cap is reached (censored)."""
    if not isinstance(cfg.mode, FixedConfidence):
        raise DomainError("config is not in fixed-confidence mode")
    return _run(cfg, replication, seed)


def run_fixed_budget(cfg: ExperimentConfig, replication: int, seed: int | None = None
                     ) -> RunRecord:
    """Spend exactly the budget, then decide on empirical means."""
    if isinstance(cfg.mode, FixedConfidence):
        raise DomainError("config is not in fixed-budget or convergence mode")
    return _run(cfg, replication, seed)


def run_one(cfg: ExperimentConfig, replication: int, seed: int | None = None) -> RunRecord:
    return _run(cfg, replication, seed)


def aggregate(values, correct) -> AggregateStats:
    v = np.asarray(values, dtype=float)
    n = v.size
    stderr = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return AggregateStats(float(v.mean()), stderr, 1.96 * stderr,
                          float(np.percentile(v, 25)), float(np.percentile(v, 75)),
                          float(np.mean(np.asarray(correct, dtype=float))), n)


def run_replications(cfg: ExperimentConfig, workers: int = 1):
    """Run every replication, possibly on several threads.

    Returns:
        ``(AggregateStats, records)`` with records sorted by replication.
    """
    reps = range(cfg.replications)
    if workers <= 1:
        records = [_run(cfg, r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda r: _run(cfg, r), reps))
    records.sort(key=lambda rec: rec.replication)
    stats = aggregate([r.tau for r in records], [r.correct for r in records])
    return stats, records


def runs_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "tau_or_T", "correct", "censored", "fallback_count"])
    for r in records:
        w.writerow([r.replication, r.tau, int(r.correct), int(r.censored), r.fallback_count])
    return buf.getvalue()


def trajectory_csv(records, n_arms: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "t", "gamma_true", "gamma_emp"]
               + [f"p_{i + 1}" for i in range(n_arms)])
    for r in records:
        if r.trajectory is None:
            continue
        for row in r.trajectory:
            w.writerow([r.replication, int(row[0])] + [repr(float(x)) for x in row[1:]])
    return buf.getvalue()


def summary_json(config_echo: dict, stats: AggregateStats) -> str:
    return json.dumps({"config": config_echo, **stats.to_dict()}, indent=2, sort_keys=True) + "\n"
