import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popforest.errors import InsufficientTail, OrderingViolation, TooFewSamples
from popforest.stats import (
    TrendVerdict,
    dominance_check,
    ks_two_sample,
    mc_run,
    replica_rng,
    summarize,
    tail_rate,
    trend,
)


class TestRng:
    def test_streams_are_deterministic(self):
        a = replica_rng(7, 3).random(5)
        b = replica_rng(7, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_across_replicas(self):
        a = replica_rng(7, 0).random(5)
        b = replica_rng(7, 1).random(5)
        assert not np.allclose(a, b)


class TestMcRun:
    def test_exponential_mean(self):
        res = mc_run(lambda rng: rng.standard_exponential(), 100_000, 11)
        assert abs(res.summary.mean - 1.0) < 3 * res.summary.std_err

    def test_deterministic(self):
        a = mc_run(lambda rng: rng.standard_exponential(), 500, 3)
        b = mc_run(lambda rng: rng.standard_exponential(), 500, 3)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_errors_recorded_not_fatal(self):
        def flaky(rng):
            v = rng.random()
            if v < 0.2:
                raise RuntimeError("boom")
            return v

        res = mc_run(flaky, 200, 5)
        assert res.summary.n + len(res.errors) == 200
        assert res.summary.n_errors == len(res.errors) > 0

    def test_all_failures_raise(self):
        def broken(rng):
            raise RuntimeError("nope")

        with pytest.raises(RuntimeError):
            mc_run(broken, 10, 1)

    def test_censored_pairs(self):
        res = mc_run(lambda rng: (rng.random(), rng.random() < 0.5), 400, 9)
        assert 0.3 < res.summary.censored_fraction < 0.7

    def test_half_replica_count_roughly_doubles_std_err(self):
        big = mc_run(lambda rng: rng.standard_exponential(), 20_000, 21)
        small = mc_run(lambda rng: rng.standard_exponential(), 10_000, 22)
        ratio = small.summary.std_err / big.summary.std_err
        assert abs(ratio - math.sqrt(2.0)) < 0.2 * math.sqrt(2.0)


class TestSummarize:
    def test_quantiles_monotone(self):
        rng = replica_rng(1, 0)
        s = summarize(rng.standard_normal(5000))
        qs = [s.quantiles[k] for k in ("0.1", "0.25", "0.5", "0.75", "0.9")]
        assert qs == sorted(qs)

    def test_tail_rate_suppressed_under_heavy_censoring(self):
        samples = np.linspace(0, 1, 1000)
        censored = np.zeros(1000, bool)
        censored[:600] = True
        assert summarize(samples, censored).tail_rate is None


class TestKs:
    def test_identical_arrays(self):
        a = np.arange(50, dtype=float)
        d, p = ks_two_sample(a, a.copy())
        assert d == 0.0

    def test_disjoint_supports(self):
        a = np.random.default_rng(0).uniform(0, 1, 100)
        b = np.random.default_rng(1).uniform(2, 3, 100)
        d, p = ks_two_sample(a, b)
        assert d == 1.0
        assert p < 1e-6

    def test_hand_computed_quarter_offset(self):
        a = np.array([1.0, 2.0, 3.0, 4.0] * 5)
        b = np.array([1.5, 2.5, 3.5, 4.5] * 5)
        # brute-force oracle over the pooled grid
        grid = np.sort(np.concatenate([a, b]))
        fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
        fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
        oracle = float(np.max(np.abs(fa - fb)))
        d, _ = ks_two_sample(a, b)
        assert oracle == pytest.approx(0.25)
        assert d == pytest.approx(0.25)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            ks_two_sample([1.0] * 5, [2.0] * 50)


class TestTailRate:
    def test_exponential_rates_recovered(self):
        for c in (0.5, 1.0, 2.0):
            rng = replica_rng(13, int(c * 10))
            samples = rng.standard_exponential(100_000) / c
            c_hat, se = tail_rate(samples)
            assert abs(c_hat - c) < 3 * max(se, 0.02 * c)

    def test_exp2_tight_window(self):
        rng = replica_rng(14, 0)
        c_hat, _ = tail_rate(rng.standard_exponential(100_000) / 2.0)
        assert abs(c_hat - 2.0) < 0.1

    def test_polynomial_tail_has_no_exponential_rate(self):
        rng = replica_rng(15, 0)
        samples = rng.pareto(2.0, 100_000) + 1.0
        c_hat, _ = tail_rate(samples)
        assert c_hat < 0.05

    def test_degenerate_tail_rejected(self):
        with pytest.raises(InsufficientTail):
            tail_rate(np.ones(1000))

    def test_censor_level_drops_top(self):
        rng = replica_rng(16, 0)
        samples = np.concatenate([rng.standard_exponential(5000),
                                  np.full(5000, 100.0)])
        c_hat, _ = tail_rate(samples, censor_level=99.0)
        assert 0.5 < c_hat < 1.5

    def test_too_few_points(self):
        with pytest.raises(InsufficientTail):
            tail_rate(np.linspace(0, 1, 50))


class TestTrend:
    def test_plateau(self):
        rep = trend([1, 2, 3, 4], [1.0, 1.5, 1.55, 1.56])
        assert rep.verdict is TrendVerdict.PLATEAU

    def test_growing(self):
        rep = trend([1, 2, 3, 4], [1.0, 2.0, 4.0, 8.0])
        assert rep.verdict is TrendVerdict.GROWING
        assert rep.last_relative_increment == pytest.approx(1.0)

    def test_between_thresholds(self):
        rep = trend([1, 2, 3, 4], [1.0, 2.0, 2.3, 2.7])
        assert rep.verdict is TrendVerdict.INCONCLUSIVE
        assert rep.last_relative_increment == pytest.approx(0.4 / 2.3)

    def test_thresholds_configurable(self):
        rep = trend([1, 2, 3], [1.0, 2.0, 2.4],
                    plateau_threshold=0.25, growing_threshold=0.25)
        assert rep.verdict is TrendVerdict.PLATEAU

    def test_needs_three_levels(self):
        with pytest.raises(ValueError):
            trend([1, 2], [1.0, 2.0])


class TestDominance:
    def test_coupled_ok(self):
        lo = np.array([1.0, 2.0, 3.0])
        rep = dominance_check(lo, lo + 0.5, coupled=True)
        assert rep.ok

    def test_coupled_violation_carries_index(self):
        lo = np.array([1.0, 5.0, 3.0])
        hi = np.array([2.0, 4.0, 6.0])
        with pytest.raises(OrderingViolation) as err:
            dominance_check(lo, hi, coupled=True)
        assert err.value.index == 1

    def test_uncoupled_identical_not_rejected(self):
        rng = replica_rng(17, 0)
        a = rng.standard_exponential(500)
        rep = dominance_check(a, a.copy(), coupled=False)
        assert rep.ok

    def test_uncoupled_shifted_dominates(self):
        rng = replica_rng(18, 0)
        a = rng.standard_exponential(500)
        rep = dominance_check(a, a + 1.0, coupled=False)
        assert rep.ok and rep.max_gap <= 0

    def test_uncoupled_detects_reversed_order(self):
        rng = replica_rng(19, 0)
        a = rng.standard_exponential(2000)
        rep = dominance_check(a + 1.0, a, coupled=False)
        assert not rep.ok


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 100.0), min_size=20, max_size=60),
       st.lists(st.floats(0.0, 100.0), min_size=20, max_size=60))
def test_ks_distance_bounded_and_symmetric(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    d1, _ = ks_two_sample(a, b)
    d2, _ = ks_two_sample(b, a)
    assert 0.0 <= d1 <= 1.0
    assert d1 == pytest.approx(d2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 1000.0), min_size=3, max_size=8))
def test_trend_verdict_matches_manual_rule(medians):
    rep = trend(list(range(len(medians))), medians)
    rel = (medians[-1] - medians[-2]) / abs(medians[-2])
    if rel < 0.10:
        assert rep.verdict is TrendVerdict.PLATEAU
    elif rel > 0.25:
        assert rep.verdict is TrendVerdict.GROWING
    else:
        assert rep.verdict is TrendVerdict.INCONCLUSIVE
