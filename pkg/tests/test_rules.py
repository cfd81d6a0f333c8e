import numpy as np
import pytest
from scipy.stats import norm

from pure_explore.chernoff import (
    ContractError,
    Pitfall,
    Query,
    _tag,
    chernoff,
    correct_answer,
    pitfalls,
)
from pure_explore.divergences import DomainError, RewardFamily
from pure_explore.harness import BanditInstance, ExperimentConfig, FixedBudget, run_one
from pure_explore.allocation import overall_balance_residual
from pure_explore.rules import (
    Detection,
    Estimation,
    InitializationError,
    Posterior,
    RuleConfig,
    Selection,
    SufficientStats,
    detect_kkt,
    detect_pps,
    detect_ts,
    estimate,
    pan_step,
    pps_probabilities,
    select_beta,
    select_ids,
    uniform_step,
)

UNIT = RewardFamily.gaussian((1.0,))
CASE1 = np.array([0.1, 0.2, 0.3, 0.4, 0.5])


def _stats(means, counts, family=UNIT):
    counts = np.asarray(counts, dtype=float)
    return SufficientStats.from_arrays(family, counts, np.asarray(means, dtype=float) * counts)


def _freq(draws, K):
    return np.bincount(np.asarray(draws), minlength=K) / len(draws)


class TestStats:
    def test_update_and_allocation(self):
        s = SufficientStats(UNIT, 3)
        for arm, y in [(0, 1.0), (1, 2.0), (1, 4.0), (2, 0.0)]:
            s.update(arm, y)
        assert s.t == 4
        np.testing.assert_allclose(s.allocation(), [0.25, 0.5, 0.25])
        np.testing.assert_allclose(s.means(), [1.0, 3.0, 0.0])

    def test_uninitialized(self):
        s = _stats([0.0, 0.0], [1, 0])
        with pytest.raises(InitializationError):
            estimate(RuleConfig(Estimation.EB, Detection.KKT), s, np.random.default_rng(0))


class TestRuleConfig:
    @pytest.mark.parametrize("name", ["TS-TS-IDS", "EB-KKT-IDS", "TS-PPS-0.5", "EB-TS-0.8"])
    def test_round_trip(self, name):
        assert RuleConfig.parse(name).name == name

    def test_beta_domain(self):
        with pytest.raises(DomainError):
            RuleConfig(Estimation.TS, Detection.TS, Selection.FIXED_BETA, 1.0)

    def test_cap_domain(self):
        with pytest.raises(DomainError):
            RuleConfig(Estimation.TS, Detection.TS, ts_detection_cap=0)

    def test_garbage(self):
        with pytest.raises(DomainError):
            RuleConfig.parse("TS-XYZ-IDS")


class TestEstimate:
    def test_eb(self, rng):
        s = SufficientStats.from_arrays(UNIT, [2, 2], [2.0, 3.0])
        np.testing.assert_array_equal(
            estimate(RuleConfig(Estimation.EB, Detection.KKT), s, rng), [1.0, 1.5])

    def test_eb_tie_is_reported_downstream(self, rng):
        s = SufficientStats.from_arrays(UNIT, [2, 3], [2.0, 3.0])
        theta = estimate(RuleConfig(Estimation.EB, Detection.KKT), s, rng)
        np.testing.assert_array_equal(theta, [1.0, 1.0])

    def test_ts_posterior_scale(self, rng):
        s = _stats([0.3, -0.2], [4, 4])
        draws = np.array([Posterior(s).draw(rng) for _ in range(100_000)])
        assert 0.24 <= draws[:, 0].var() <= 0.26
        assert 0.24 <= draws[:, 1].var() <= 0.26
        assert abs(np.corrcoef(draws.T)[0, 1]) < 0.01

    def test_ts_concentrates(self, rng):
        s = _stats([0.3, -0.2], [1e6, 1e6])
        cfg = RuleConfig(Estimation.TS, Detection.TS)
        draws = np.array([estimate(cfg, s, rng) for _ in range(2000)])
        assert np.mean(np.abs(draws[:, 0] - 0.3) <= 0.01) >= 0.99

    def test_bernoulli_beta_posterior(self, rng):
        s = SufficientStats.from_arrays(RewardFamily.bernoulli(), [8, 8], [2.0, 6.0])
        mean, s2 = Posterior(s).moments()
        np.testing.assert_allclose(mean, [3 / 10, 7 / 10])
        np.testing.assert_allclose(s2, [3 * 7 / (100 * 11), 7 * 3 / (100 * 11)])

    def test_oracle_needs_truth(self, rng):
        s = _stats([0.3, -0.2], [4, 4])
        with pytest.raises(ContractError):
            estimate(RuleConfig(Estimation.ORACLE, Detection.KKT), s, rng)


class TestDetectKkt:
    def test_threshold(self):
        assert detect_kkt(Query.thresholding(0.0), [1.0, -2.0], [0.5, 0.5]) == Pitfall.arm(0)

    def test_single_pitfall(self):
        assert detect_kkt(Query.signed(0.0), [0.2, 0.5], [0.5, 0.5]) == Pitfall.whole()

    def test_best_arm(self):
        assert detect_kkt(Query.best_arm(), [1.0, 0.9, 0.0], [1 / 3] * 3) == Pitfall.arm(1)


class TestDetectTs:
    def test_two_arm_only_challenger(self, rng):
        s = _stats([1.0, 0.0], [1, 1])
        for _ in range(200):
            assert detect_ts(Query.best_arm(), [1.0, 0.0], s, rng).pitfall == Pitfall.arm(1)

    def test_first_draw_acceptance(self, rng, oracle):
        s = _stats([1.0, 0.0], [1, 1])
        attempts = np.array([detect_ts(Query.best_arm(), [1.0, 0.0], s, rng).attempts
                             for _ in range(100_000)])
        expected = 1 - norm.cdf(1 / np.sqrt(2))
        assert expected == pytest.approx(oracle["ts_accept_prob"], abs=1e-12)
        assert np.mean(attempts == 1) == pytest.approx(expected, abs=0.01)
        assert attempts.mean() == pytest.approx(1 / expected, rel=0.02)

    def test_accepted_draw_membership(self):
        # Replaying the generator reproduces the accepted draw.
        s = _stats([1.0, 0.8, 0.0], [2, 2, 2])
        for seed in range(50):
            det = detect_ts(Query.best_arm(), [1.0, 0.8, 0.0], s, np.random.default_rng(seed))
            replay = np.random.default_rng(seed)
            for _ in range(det.attempts):
                draw = Posterior(s).draw(replay)
            assert draw[det.pitfall.i] > draw[0]

    def test_cap_falls_back(self, rng):
        s = _stats([5.0, 0.0], [1000, 1000])
        det = detect_ts(Query.best_arm(), [5.0, 0.0], s, rng, cap=10)
        assert det.fallback and det.attempts == 10 and det.pitfall == Pitfall.arm(1)


class TestDetectPps:
    def test_symmetric(self, rng):
        s = _stats([1.0, 0.0, 0.0], [1, 1, 1])
        draws = [detect_pps(Query.best_arm(), [1.0, 0.0, 0.0], s, rng).pitfall.i
                 for _ in range(100_000)]
        assert np.mean(np.array(draws) == 1) == pytest.approx(0.5, abs=0.01)

    def test_concentrated(self, rng):
        s = _stats([1.0, 0.9, 0.0], [100, 100, 100])
        draws = [detect_pps(Query.best_arm(), [1.0, 0.9, 0.0], s, rng).pitfall
                 for _ in range(10_000)]
        assert np.mean([d == Pitfall.arm(1) for d in draws]) >= 0.99

    @pytest.mark.parametrize("query,means,counts", [
        (Query.best_arm(), [0.5, 0.3, 0.2], [4, 3, 5]),
        (Query.best_k(2), [0.5, 0.3, 0.2, 0.45], [4, 3, 5, 2]),
        (Query.thresholding(0.25), [0.5, 0.3, 0.2], [4, 3, 5]),
        (Query.closest_to_threshold(0.25), [0.5, 0.3, 0.1], [4, 3, 5]),
        (Query.epsilon_best_arm(0.1), [0.5, 0.3, 0.2], [4, 3, 5]),
        (Query.signed(0.0), [0.5, 0.3, 0.2], [4, 3, 5]),
        (Query.murphy(0.3), [0.5, 0.1, 0.6], [4, 3, 5]),
    ])
    def test_matches_monte_carlo(self, query, means, counts):
        s = _stats(means, counts)
        probs = pps_probabilities(query, means, s)
        rng = np.random.default_rng(99)
        sd = 1 / np.sqrt(np.asarray(counts, dtype=float))
        x = np.asarray(means) + sd * rng.standard_normal((1_000_000, len(means)))
        for pf, prob in probs.items():
            assert _in_alternative(query, means, pf, x).mean() == pytest.approx(prob, abs=0.005), pf

    def test_bernoulli_moment_matching(self):
        s = SufficientStats.from_arrays(RewardFamily.bernoulli(), [10, 10], [7.0, 4.0])
        (prob,) = pps_probabilities(Query.best_arm(), s.means(), s).values()
        mean, s2 = Posterior(s).moments()
        assert prob == pytest.approx(norm.cdf((mean[1] - mean[0]) / np.sqrt(s2.sum())))


def _in_alternative(query, means, pf, x):
    T, eps = query.threshold, query.epsilon
    answer = correct_answer(query, means)
    name = query.kind.name
    if name in ("BEST_ARM", "EPSILON_BEST_ARM"):
        (best,) = answer
        return x[:, pf.i] > x[:, best] + eps
    if name == "BEST_K":
        return x[:, pf.j] > x[:, pf.i]
    if name == "THRESHOLD":
        return (x[:, pf.i] > T) != (means[pf.i] > T)
    if name == "CLOSEST_TO_THRESHOLD":
        (best,) = answer
        return np.abs(x[:, pf.i] - T) < np.abs(x[:, best] - T)
    if name == "SIGNED":
        return np.all(x < T, axis=1)
    if name == "MURPHY" and pf == Pitfall.whole():
        return np.all(x > T, axis=1)
    raise AssertionError(name)


class TestSelect:
    def test_point_mass(self, rng):
        r = chernoff(Query.thresholding(0.0), [2.0, -1.0], [0.5, 0.5], Pitfall.arm(0))
        assert all(select_ids(r, rng) == 0 for _ in range(100))

    def test_half_half(self, rng):
        r = chernoff(Query.best_arm(), [1.0, 0.0, -1.0], [0.4, 0.4, 0.2], Pitfall.arm(1))
        np.testing.assert_allclose(r.weights, [0.5, 0.5, 0.0])
        f = _freq([select_ids(r, rng) for _ in range(100_000)], 3)
        assert f[0] == pytest.approx(0.5, abs=0.01) and f[2] == 0.0

    @pytest.mark.parametrize("p,leader", [((0.25, 0.75), 0.75), ((0.2, 0.8), 0.8)])
    def test_leader_probability(self, rng, p, leader):
        r = chernoff(Query.best_arm(), [1.0, 0.0], p, Pitfall.arm(1))
        closed = (1 / p[0]) / (1 / p[0] + 1 / p[1])
        assert r.weights[0] == pytest.approx(closed) == pytest.approx(leader)
        f = _freq([select_ids(r, rng) for _ in range(100_000)], 2)
        assert f[0] == pytest.approx(leader, abs=0.01)

    def test_beta_one(self, rng):
        assert all(select_beta((2, 0), 1.0, rng) == 2 for _ in range(100))

    @pytest.mark.parametrize("beta", [0.5, 0.8])
    def test_beta_frequency(self, rng, beta):
        f = _freq([select_beta(Pitfall.pair(1, 0), beta, rng) for _ in range(100_000)], 2)
        assert f[1] == pytest.approx(beta, abs=0.01)

    def test_beta_needs_pair(self, rng):
        with pytest.raises(ContractError):
            select_beta(Pitfall.arm(1), 0.5, rng)


class TestPanStep:
    def test_eb_kkt_ids_threshold(self, rng):
        q = Query.thresholding(0.35)
        s = _stats(CASE1, [3, 1, 2, 2, 5])
        rec = pan_step(RuleConfig(Estimation.EB, Detection.KKT), q, s, rng)
        assert rec.pitfall == Pitfall.arm(rec.arm)
        assert rec.pitfall == detect_kkt(q, CASE1, s.allocation())

    def test_ttts_arm_in_pair(self, rng):
        s = _stats(CASE1, [3, 1, 2, 2, 5])
        for _ in range(300):
            rec = pan_step(RuleConfig(Estimation.TS, Detection.TS), Query.best_arm(), s, rng)
            leader = int(np.argmax(rec.theta_hat))
            assert rec.arm in (leader, rec.pitfall.i)
            assert rec.pitfall.i != leader

    @pytest.mark.parametrize("name", ["TS-TS-IDS", "TS-PPS-IDS", "EB-KKT-0.5", "TS-KKT-IDS"])
    def test_seed_reproduces_sequence(self, name):
        def seq(seed):
            rng = np.random.default_rng(seed)
            noise = np.random.default_rng(seed + 1)
            s = _stats(CASE1, [1] * 5)
            arms = []
            for _ in range(200):
                arm = pan_step(RuleConfig.parse(name), Query.best_k(2), s, rng).arm
                s.update(arm, CASE1[arm] + noise.standard_normal())
                arms.append(arm)
            return arms

        assert seq(5) == seq(5)
        assert seq(5) != seq(6)

    def test_beta_rejects_non_pair_query(self, rng):
        s = _stats(CASE1, [1] * 5)
        with pytest.raises(ContractError):
            pan_step(RuleConfig.parse("EB-KKT-0.5"), Query.thresholding(0.35), s, rng)

    def test_requires_initialization(self, rng):
        with pytest.raises(InitializationError):
            pan_step(RuleConfig.parse("EB-KKT-IDS"), Query.best_arm(), _stats(CASE1, [1, 1, 0, 1, 1]), rng)


def test_uniform_round_robin():
    s = SufficientStats(UNIT, 3)
    arms = []
    for _ in range(6):
        arm = uniform_step(s)
        arms.append(arm)
        s.update(arm, 0.0)
    assert arms == [0, 1, 2, 0, 1, 2]
    np.testing.assert_array_equal(s.counts, [2, 2, 2])


def test_ids_stationarity_trace():
    """Arm frequencies given the detected pitfall track the IDS weights."""
    q = Query.best_k(2)
    inst = BanditInstance(UNIT, CASE1)
    cfg = ExperimentConfig(inst, q, RuleConfig(Estimation.ORACLE, Detection.KKT),
                           FixedBudget(100_000, ()), 1, 17, log_steps=True)
    rec = run_one(cfg, 0)
    counts = np.ones(5)
    joint, expected, seen = {}, {}, {}
    for step in rec.step_log:
        pf = _tag(q, np.array(step.pitfall))
        a, b = pf.i, pf.j
        # equal-variance pair weights: h_a = p_b / (p_a + p_b)
        h_a = counts[b] / (counts[a] + counts[b])
        seen[pf] = seen.get(pf, 0) + 1
        expected[pf] = expected.get(pf, 0.0) + h_a
        joint[pf] = joint.get(pf, 0) + (step.arm == a)
        counts[step.arm] += 1
    np.testing.assert_array_equal(counts, rec.counts)
    frequent = [pf for pf, n in seen.items() if n >= 2000]
    assert frequent
    for pf in frequent:
        assert joint[pf] / seen[pf] == pytest.approx(expected[pf] / seen[pf], abs=0.02), pf


def test_empirical_overall_balance():
    # A cap of 100 keeps this affordable: late in a run nearly every TS
    # detection exhausts any cap and falls back to KKT either way.
    inst = BanditInstance(UNIT, CASE1)
    cfg = ExperimentConfig(inst, Query.best_arm(), RuleConfig.parse("TS-TS-IDS", 100),
                           FixedBudget(100_000, ()), 20, 23)
    residuals = []
    for r in range(20):
        rec = run_one(cfg, r)
        p = rec.counts / rec.counts.sum()
        residuals.append(abs(overall_balance_residual(p, 4, 1.0)))
    assert np.median(residuals) <= 0.02


def test_pitfalls_ordering_stable():
    assert pitfalls(Query.best_k(2), CASE1)[0] == Pitfall.pair(3, 0)
