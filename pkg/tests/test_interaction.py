import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popforest.errors import H1Violation, NoSignStabilization
from popforest.interaction import (
    build_model,
    linear,
    logistic,
    power_log,
    rate_sums,
    rate_sums_over_x,
    scaled_model,
    zero_fn,
)


def brute_sums(f, n):
    """Independent oracle: direct summation of increment parts."""
    fp = fm = 0.0
    for ell in range(1, n + 1):
        d = f(float(ell)) - f(float(ell - 1))
        fp += max(d, 0.0)
        fm += max(-d, 0.0)
    return fp, fm


class TestBuildModel:
    def test_logistic_unit(self):
        m = logistic(1.0, 1.0)
        assert m.theta == 1.0
        assert m.a0 == 1.0
        assert m.f(0.0) == 0.0
        assert m.f(2.0) == pytest.approx(-2.0)

    def test_powerlog_is_continuous_at_the_knee(self):
        m = power_log(1.0, 1.0)
        assert m.a0 == 2.0
        assert m.f(2.0) == pytest.approx(-2.0 * math.log(2.0))
        assert m.f(1.999999) == pytest.approx(m.f(2.0), rel=1e-4)
        assert m.f(4.0) == pytest.approx(-4.0 * math.log(4.0))
        assert m.f(0.0) == 0.0

    def test_zero_fn_has_no_sign_threshold(self):
        m = zero_fn()
        assert m.theta == 0.0
        assert m.a0 is None
        with pytest.raises(NoSignStabilization):
            m.require_a0()

    def test_linear_collapses_from_logistic(self):
        m = logistic(1.5, 0.0)
        assert m.family == "linear"
        assert m.f(3.0) == pytest.approx(4.5)

    def test_custom_theta_estimated_covers_slope(self):
        m = build_model(lambda x: 0.7 * np.asarray(x, float))
        assert 0.7 <= m.theta <= 0.8

    def test_custom_a0_detected_for_quadratic_competition(self):
        m = build_model(lambda x: np.asarray(x, float) - np.asarray(x, float) ** 2)
        assert m.a0 is not None and 1.0 < m.a0 < 1.3

    def test_nonzero_at_origin_rejected(self):
        with pytest.raises(ValueError):
            build_model(lambda x: np.asarray(x, float) + 1.0)

    def test_h1_violation_for_superlinear_with_given_theta(self):
        with pytest.raises(H1Violation):
            build_model(lambda x: np.asarray(x, float) ** 2, theta=1.0)

    def test_oscillating_sign_needs_explicit_a0(self):
        with pytest.raises(NoSignStabilization):
            build_model(lambda x: np.sin(np.asarray(x, float)))

    def test_user_a0_always_wins(self):
        m = build_model(lambda x: np.sin(np.asarray(x, float)), a0=7.0)
        assert m.a0 == 7.0

    def test_h1_margin_recorded(self):
        m = logistic(1.0, 1.0)
        assert m.h1_max_excess >= 0.0


class TestRateSums:
    def test_decreasing_f_gives_pure_negative_parts(self):
        m = linear(-1.0)
        s = rate_sums(m, 5)
        assert s.fplus(5) == 0.0
        assert s.fminus(5) == pytest.approx(5.0)

    def test_increasing_f_gives_pure_positive_parts(self):
        m = linear(1.0)
        s = rate_sums(m, 7)
        assert s.fplus(7) == pytest.approx(7.0)
        assert s.fminus(7) == 0.0

    def test_logistic_n3_against_direct_summation(self):
        m = logistic(1.0, 1.0)
        s = rate_sums(m, 3)
        fp, fm = brute_sums(lambda v: v - v * v, 3)
        assert s.fplus(3) == pytest.approx(fp) == 0.0
        assert s.fminus(3) == pytest.approx(fm) == pytest.approx(6.0)

    def test_identity_and_bounds_for_builtins(self):
        models = [logistic(1.0, 1.0), logistic(2.0, 0.5), power_log(1.5, 1.0),
                  power_log(0.5, 0.0), linear(-2.0), linear(1.0)]
        n = np.arange(1, 10_001, dtype=float)
        for m in models:
            s = rate_sums(m, 10_000)
            fp = s.fplus_table(10_000)[1:]
            fm = s.fminus_table(10_000)[1:]
            fn = np.asarray(m.f(n))
            np.testing.assert_allclose(fm - fp, -fn, rtol=1e-9, atol=1e-9)
            assert np.all(fp <= m.theta * n + 1e-9 * (1 + m.theta * n))
            assert np.all(fm >= -fn - 1e-9 * (1 + np.abs(fn)))
            assert np.all(fm <= m.theta * n - fn + 1e-9 * (1 + np.abs(fn)))
            assert np.all(np.diff(fp) >= 0) and np.all(np.diff(fm) >= 0)

    def test_identity_and_bounds_for_random_models(self, random_models):
        n = np.arange(1, 10_001, dtype=float)
        for m in random_models:
            s = rate_sums(m, 10_000)
            fp = s.fplus_table(10_000)[1:]
            fm = s.fminus_table(10_000)[1:]
            fn = np.asarray(m.f(n))
            np.testing.assert_allclose(fm - fp, -fn, rtol=1e-9, atol=1e-9)
            scale = 1 + m.theta * n
            assert np.all(fp <= m.theta * n + 1e-9 * scale)
            assert np.all(fm <= m.theta * n - fn + 1e-9 * (scale + np.abs(fn)))

    def test_monotone_f_matches_positive_negative_parts(self, random_models):
        # for monotone drifts the cumulative parts collapse to f+ / f-
        for a in (-1.5, 2.0):
            m = linear(a)
            s = rate_sums(m, 50)
            for n in range(1, 51):
                fn = float(m.f(float(n)))
                assert s.fplus(n) == pytest.approx(max(fn, 0.0))
                assert s.fminus(n) == pytest.approx(max(-fn, 0.0))

    def test_lazy_extension_beyond_initial_cap(self):
        m = logistic(1.0, 1.0)
        s = rate_sums(m, 8)
        assert s.fminus(2_000) == pytest.approx(2_000.0 ** 2 - 2_000.0)
        assert s.n_max >= 2_000

    def test_prefix_views_match_scalars(self):
        m = power_log(1.5, 0.5)
        s = rate_sums(m, 64)
        pref = s.fminus_prefix(30)
        assert pref.shape == (30,)
        assert pref[9] == pytest.approx(s.fminus(10))


class TestRateSumsOverX:
    def test_quadratic_reduces_to_linear(self):
        m = build_model(lambda x: -np.asarray(x, float) ** 2, theta=0.0, a0=1.0)
        s1 = rate_sums_over_x(m, 4)
        assert s1.fplus(4) == 0.0
        assert s1.fminus(4) == pytest.approx(4.0)

    def test_logistic_per_capita_sums(self):
        m = logistic(1.0, 1.0)
        s1 = rate_sums_over_x(m, 3)
        # f(x)/x = 1 - x with the 0-at-0 convention: first increment is 0
        assert s1.fplus(3) == 0.0
        assert s1.fminus(3) == pytest.approx(2.0)

    def test_linear_growth_first_increment_only(self):
        m = linear(1.0)
        s1 = rate_sums_over_x(m, 5)
        assert s1.fplus(5) == pytest.approx(1.0)
        assert s1.fminus(5) == 0.0

    def test_per_capita_bounds_quadratic_in_n(self, random_models):
        n = np.arange(1, 10_001, dtype=float)
        checked = 0
        for m in random_models:
            try:
                s1 = rate_sums_over_x(m, 10_000)
            except H1Violation:
                continue
            checked += 1
            th1 = s1.theta
            s = rate_sums(m, 10_000)
            fp = s.fplus_table(10_000)[1:]
            fm = s.fminus_table(10_000)[1:]
            fn = np.asarray(m.f(n))
            bound = 2.0 * th1 * n * n
            slack = 1e-9 * (1 + bound)
            assert np.all(fp <= bound + slack)
            assert np.all(fm <= bound - fn + slack + 1e-9 * np.abs(fn))
        assert checked >= 5  # the family should mostly pass the per-capita check

    def test_per_capita_bounds_for_builtins(self):
        n = np.arange(1, 10_001, dtype=float)
        for m in [logistic(1.0, 1.0), power_log(2.0, 1.0), power_log(0.5, 0.0)]:
            s1 = rate_sums_over_x(m, 16)
            s = rate_sums(m, 10_000)
            fp = s.fplus_table(10_000)[1:]
            fm = s.fminus_table(10_000)[1:]
            fn = np.asarray(m.f(n))
            bound = 2.0 * s1.theta * n * n
            slack = 1e-9 * (1 + bound + np.abs(fn))
            assert np.all(fp <= bound + slack)
            assert np.all(fm >= -fn - slack)
            assert np.all(fm <= bound - fn + slack)


class TestScaledModel:
    def test_scaling_preserves_constants(self):
        m = logistic(1.0, 1.0)
        sm = scaled_model(m, 10)
        assert sm.theta == m.theta
        assert sm.a0 == pytest.approx(10.0)
        assert sm.f(10.0) == pytest.approx(10.0 * m.f(1.0))
        assert sm.f(5.0) == pytest.approx(10.0 * m.f(0.5))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(0.0, 3.0))
def test_identity_holds_for_random_quadratics(a, b):
    f = lambda x: a * np.asarray(x, float) - b * np.asarray(x, float) ** 2
    m = build_model(f, theta=max(a, 0.0) + 1e-9, a0=100.0)
    s = rate_sums(m, 200)
    n = np.arange(1, 201, dtype=float)
    fn = a * n - b * n * n
    np.testing.assert_allclose(
        s.fminus_table(200)[1:] - s.fplus_table(200)[1:], -fn,
        rtol=1e-9, atol=1e-9)
