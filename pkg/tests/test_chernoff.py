import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import random_case
from pure_explore.chernoff import (
    ContractError,
    InstanceError,
    Pitfall,
    Query,
    chernoff,
    chernoff_crn,
    chernoff_unknown_variance,
    correct_answer,
    glrt_statistic,
    is_correct,
    lenient_answer,
    pitfalls,
)
from pure_explore.divergences import DomainError, RewardFamily

CASE1 = np.array([0.1, 0.2, 0.3, 0.4, 0.5])


def _cases(seed, n, variant=None):
    rng = np.random.default_rng(seed)
    return [random_case(rng, variant) for _ in range(n)]


def _exp_family_cases(seed, n):
    # The correlated closed form is neither monotone nor concave in p.
    return [c for c in _cases(seed, n) if not c.label.startswith("crn")]


class TestAnswers:
    def test_best_k_case1(self):
        assert correct_answer(Query.best_k(2), CASE1) == frozenset({3, 4})

    def test_threshold(self):
        assert correct_answer(Query.thresholding(0.35), CASE1) == frozenset({3, 4})

    def test_signed_plus(self):
        assert correct_answer(Query.signed(0.0), [0.2, 0.5]) == "+"

    def test_tied_best_arm_rejected(self):
        with pytest.raises(InstanceError):
            correct_answer(Query.best_arm(), [0.5, 0.5])

    def test_lenient_breaks_ties_low(self):
        assert lenient_answer(Query.best_arm(), [0.5, 0.5, 0.1]) == frozenset({0})

    def test_epsilon_best_accepts_any_good_arm(self):
        q = Query.epsilon_best_arm(0.2)
        assert is_correct(q, [1.0, 0.9, 0.0], frozenset({1}))
        assert not is_correct(q, [1.0, 0.9, 0.0], frozenset({2}))


class TestPitfalls:
    def test_best_arm(self):
        assert pitfalls(Query.best_arm(), [0.5, 0.4, 0.3]) == [Pitfall.arm(1), Pitfall.arm(2)]

    def test_best_k_product(self):
        pfs = pitfalls(Query.best_k(2), CASE1)
        assert len(pfs) == 6
        assert {(x.i, x.j) for x in pfs} == {(i, j) for i in (3, 4) for j in (0, 1, 2)}

    def test_murphy_feasible_is_whole(self):
        assert pitfalls(Query.murphy(0.0), [-0.5, 1.0]) == [Pitfall.whole()]

    def test_murphy_infeasible_is_per_arm(self):
        assert pitfalls(Query.murphy(0.0), [0.5, 1.0]) == [Pitfall.arm(0), Pitfall.arm(1)]

    def test_threshold_covers_every_arm(self):
        assert len(pitfalls(Query.thresholding(0.35), CASE1)) == 5


class TestChernoffExamples:
    def test_best_arm_half(self):
        r = chernoff(Query.best_arm(), [1.0, 0.0], [0.5, 0.5], Pitfall.arm(1))
        assert r.value == pytest.approx(0.125, abs=1e-15)
        assert r.minimizer[0] == pytest.approx(0.5) and r.minimizer[1] == pytest.approx(0.5)
        np.testing.assert_allclose(r.weights, [0.5, 0.5])
        assert r.active_set == frozenset({0, 1})

    def test_weighted_mean(self):
        r = chernoff(Query.best_arm(), [1.0, 0.0], [0.25, 0.75], Pitfall.arm(1))
        assert r.minimizer[0] == pytest.approx(0.25)

    def test_threshold_arm(self):
        theta = np.array([2.0, -1.0, 0.5])
        p = np.array([0.3, 0.3, 0.4])
        r = chernoff(Query.thresholding(0.0), theta, p, Pitfall.arm(0))
        assert r.value == pytest.approx(0.6)
        np.testing.assert_array_equal(r.weights, [1.0, 0.0, 0.0])

    def test_epsilon_zero_matches_best_arm(self):
        theta, p = [1.0, 0.7, 0.2], [0.2, 0.5, 0.3]
        for j in (1, 2):
            a = chernoff(Query.epsilon_best_arm(0.0), theta, p, Pitfall.arm(j))
            b = chernoff(Query.best_arm(), theta, p, Pitfall.arm(j))
            assert a.value == pytest.approx(b.value, rel=1e-14)
            np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-14)

    def test_foreign_pitfall_rejected(self):
        with pytest.raises(ContractError):
            chernoff(Query.best_arm(), [1.0, 0.0, 0.5], [1 / 3] * 3, Pitfall.arm(0))

    def test_whole_sums_arm_terms(self):
        theta, p = np.array([0.2, 0.5]), np.array([0.4, 0.6])
        r = chernoff(Query.signed(0.0), theta, p, Pitfall.whole())
        assert r.value == pytest.approx(0.5 * (0.4 * 0.04 + 0.6 * 0.25))

    def test_bernoulli_pair(self):
        r = chernoff(Query.best_arm(), [0.4, 0.2], [0.5, 0.5], Pitfall.arm(1),
                     RewardFamily.bernoulli())
        u = r.minimizer[0]
        assert 0.2 < u < 0.4

        def kl(a, b):
            return a * math.log(a / b) + (1 - a) * math.log((1 - a) / (1 - b))

        assert r.value == pytest.approx(0.5 * kl(0.4, u) + 0.5 * kl(0.2, u), rel=1e-12)


class TestZeroAllocation:
    def test_both_zero_uniform(self):
        r = chernoff(Query.best_arm(), [1.0, 0.0, 0.5], [0.0, 0.0, 1.0], Pitfall.arm(1))
        assert r.value == 0.0
        np.testing.assert_allclose(r.weights, [1 / 3] * 3)

    def test_one_zero_point_mass(self):
        r = chernoff(Query.best_arm(), [1.0, 0.0, 0.5], [0.5, 0.0, 0.5], Pitfall.arm(1))
        assert r.value == 0.0
        assert r.minimizer[1] == pytest.approx(1.0)
        np.testing.assert_array_equal(r.weights, [0.0, 1.0, 0.0])


class TestUnknownVariance:
    def test_example_below_known(self, oracle):
        r = chernoff_unknown_variance([1.0, 0.0], [1.0, 1.0], [0.5, 0.5], Pitfall.arm(1))
        assert r.value < 0.125
        assert r.value == pytest.approx(oracle["uv_example_value"], rel=1e-8)

    def test_minimizer_inside(self):
        r = chernoff_unknown_variance([1.0, 0.2, 0.0], [1.0, 2.0, 0.5], [0.3, 0.3, 0.4],
                                      Pitfall.arm(2))
        assert 0.0 <= r.minimizer[0] <= 1.0

    def test_pair_form_accepted(self):
        a = chernoff_unknown_variance([1.0, 0.0], [1.0, 1.0], [0.5, 0.5], Pitfall.pair(0, 1))
        b = chernoff_unknown_variance([1.0, 0.0], [1.0, 1.0], [0.5, 0.5], Pitfall.arm(1))
        assert a.value == b.value

    def test_nonpositive_variance(self):
        with pytest.raises(DomainError):
            chernoff_unknown_variance([1.0, 0.0], [1.0, 0.0], [0.5, 0.5], Pitfall.arm(1))

    def test_strict_dominance(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            K = int(rng.integers(2, 6))
            theta = rng.normal(size=K)
            var = rng.uniform(0.2, 3.0, K)
            p = rng.dirichlet(np.ones(K)) + 1e-3
            best = int(np.argmax(theta))
            j = int(rng.choice([k for k in range(K) if k != best]))
            uv = chernoff_unknown_variance(theta, var, p, Pitfall.arm(j)).value
            kv = chernoff(Query.best_arm(), theta, p, Pitfall.arm(j),
                          RewardFamily.gaussian(tuple(var))).value
            assert uv < kv


class TestCrn:
    def test_zero_rho_reduces(self):
        theta, sd, p = [1.0, 0.3, 0.0], [1.0, 2.0, 0.5], [0.2, 0.5, 0.3]
        for j in (1, 2):
            a = chernoff_crn(theta, sd, 0.0, p, Pitfall.arm(j))
            b = chernoff(Query.best_arm(), theta, p, Pitfall.arm(j),
                         RewardFamily.gaussian((1.0, 4.0, 0.25)))
            assert a.value == pytest.approx(b.value, rel=1e-14)
            np.testing.assert_allclose(a.gradient, b.gradient, rtol=1e-12)

    def test_example_value(self):
        r = chernoff_crn([1.0, 0.0], [1.0, 1.0], 0.5, [0.5, 0.5], Pitfall.arm(1))
        assert r.value == pytest.approx(0.25)

    def test_nondecreasing_in_rho(self):
        vals = [chernoff_crn([1.0, 0.0, 0.4], [1.0, 1.5, 1.0], rho, [0.3, 0.5, 0.2],
                             Pitfall.arm(1)).value for rho in np.linspace(0, 0.95, 20)]
        assert np.all(np.diff(vals) >= 0)

    def test_can_decrease_in_allocation(self):
        # Extra samples on the low-variance arm raise the variance of the
        # difference once the correlation term dominates.
        pf = Pitfall.arm(1)
        lo = chernoff_crn([1.0, 0.0], [0.2, 1.0], 0.9, [0.1, 0.5], pf).value
        hi = chernoff_crn([1.0, 0.0], [0.2, 1.0], 0.9, [0.2, 0.5], pf).value
        assert hi < lo

    @pytest.mark.parametrize("rho", [-0.1, 1.0])
    def test_rho_domain(self, rho):
        with pytest.raises(DomainError):
            chernoff_crn([1.0, 0.0], [1.0, 1.0], rho, [0.5, 0.5], Pitfall.arm(1))


class TestGlrt:
    def test_smallest_gap_wins(self):
        v, pf = glrt_statistic(Query.best_arm(), [1.0, 0.9, 0.0], [1 / 3] * 3)
        assert pf == Pitfall.arm(1)
        assert v == pytest.approx((1 / 3) * 0.01 / 4)

    def test_single_pitfall(self):
        v, pf = glrt_statistic(Query.signed(0.0), [0.2, 0.5], [0.5, 0.5])
        assert pf == Pitfall.whole()

    def test_two_arm_value(self):
        v, _ = glrt_statistic(Query.best_arm(), [1.0, 0.0], [0.5, 0.5])
        assert v == pytest.approx(0.125)

    def test_tie_lowest_ordinal(self):
        _, pf = glrt_statistic(Query.best_arm(), [1.0, 0.0, 0.0], [0.5, 0.25, 0.25])
        assert pf == Pitfall.arm(1)


class TestProperties:
    def test_pde_and_homogeneity(self):
        for c in _cases(1, 300):
            r = c.evaluate(c.p)
            tol = 1e-9 * max(1.0, r.value)
            assert abs(c.p @ r.gradient - r.value) <= tol, c.label
            for s in (0.5, 2.0):
                assert abs(c.evaluate(s * c.p).value - s * r.value) <= tol, c.label

    def test_gradient_matches_finite_difference(self):
        h = 1e-6
        for c in _cases(2, 150):
            g = c.evaluate(c.p).gradient
            for i in range(c.p.size):
                e = np.zeros_like(c.p)
                e[i] = h
                fd = (c.evaluate(c.p + e).value - c.evaluate(c.p - e).value) / (2 * h)
                assert abs(fd - g[i]) <= 1e-5 * max(abs(g[i]), 1e-12), (c.label, i)

    def test_monotone_in_each_component(self):
        for c in _exp_family_cases(3, 150):
            v = c.evaluate(c.p).value
            for i in range(c.p.size):
                q = c.p.copy()
                q[i] += 0.05
                assert c.evaluate(q).value >= v - 1e-12, c.label

    def test_concavity(self):
        rng = np.random.default_rng(5)
        for c in _exp_family_cases(6, 200):
            q = rng.dirichlet(np.ones(c.p.size))
            mid = c.evaluate(0.5 * (c.p + q)).value
            assert mid >= 0.5 * (c.evaluate(c.p).value + c.evaluate(q).value) - 1e-9, c.label

    def test_weights_on_simplex(self):
        for c in _cases(7, 200):
            r = c.evaluate(c.p)
            if r.value > 0:
                assert np.all(r.weights >= 0)
                assert r.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_pair_active_set_has_two_members(self):
        for c in _cases(8, 200, "standard"):
            if "Pair" in c.label or "Arm" in c.label and c.label.split()[0] in (
                    "BEST_ARM", "EPSILON_BEST_ARM", "CLOSEST_TO_THRESHOLD"):
                r = c.evaluate(c.p)
                assert len(r.active_set) == 2, c.label

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-2, 2), st.floats(0.05, 0.95))
    def test_two_arm_gaussian_closed_form(self, gap, p0):
        if abs(gap) < 1e-3:
            return
        theta = [gap, 0.0] if gap > 0 else [0.0, -gap]
        r = chernoff(Query.best_arm(), theta, [p0, 1 - p0], Pitfall.arm(1) if gap > 0
                     else Pitfall.arm(0))
        assert r.value == pytest.approx(0.5 * gap * gap * p0 * (1 - p0), rel=1e-12)
