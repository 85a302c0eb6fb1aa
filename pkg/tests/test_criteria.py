import math

import numpy as np
import pytest

from popforest.criteria import (
    EntranceVerdict,
    H3Verdict,
    IntegralVerdict,
    Target,
    Verdict,
    bd_rates,
    classify,
    diffusion_drifts,
    h3_check,
    integral_criterion,
    j_function,
    kolmogorov_Q,
    series_criterion,
)
from popforest.errors import (
    H2Violation,
    NoEntranceBoundary,
    NoSignStabilization,
    ZeroCrossing,
)
from popforest.interaction import (
    build_model,
    linear,
    logistic,
    power_log,
    rate_sums,
    rate_sums_over_x,
    zero_fn,
)


def quadratic_competition():
    return build_model(lambda x: -np.asarray(x, float) ** 2, theta=0.0, a0=1.0)


class TestBdRates:
    def test_no_interaction(self):
        bd = bd_rates(rate_sums(zero_fn(), 16), 1.0, 1.0)
        assert bd.lambda_n(7) == 7.0
        assert bd.mu_n(7) == 7.0

    def test_quadratic_death_pressure(self):
        bd = bd_rates(rate_sums(quadratic_competition(), 16), 1.0, 1.0)
        assert bd.lambda_n(5) == 5.0
        assert bd.mu_n(5) == pytest.approx(5.0 + 25.0)

    def test_increasing_interaction_boosts_births(self):
        bd = bd_rates(rate_sums(linear(1.0), 16), 2.0, 1.0)
        assert bd.lambda_n(4) == pytest.approx(3.0 * 4)
        assert bd.mu_n(4) == pytest.approx(4.0)

    def test_pure_death_allowed_but_not_for_series(self):
        bd = bd_rates(rate_sums(zero_fn(), 16), 0.0, 1.0)
        assert bd.lambda_n(3) == 0.0
        with pytest.raises(ValueError):
            series_criterion(bd, 100)


class TestSeriesCriterion:
    def test_critical_no_interaction_is_not_entrance(self):
        bd = bd_rates(rate_sums(zero_fn(), 16), 1.0, 1.0)
        d = series_criterion(bd, 5000)
        assert d.verdict is EntranceVerdict.NOT_ENTRANCE
        # potential coefficients are identically 1
        np.testing.assert_allclose(d.log_pi[:50], 0.0, atol=1e-12)

    def test_quadratic_drift_gives_entrance_with_factorial_decay(self):
        bd = bd_rates(rate_sums(quadratic_competition(), 64), 1.0, 1.0)
        d = series_criterion(bd, 2000)
        assert d.verdict is EntranceVerdict.ENTRANCE
        for n in range(1, 31):
            exact = math.log(2.0) - math.lgamma(n + 2)
            assert d.log_pi[n - 1] == pytest.approx(exact, rel=1e-9, abs=1e-9)

    def test_square_root_drift_is_not_entrance(self):
        m = build_model(lambda x: -np.sqrt(np.asarray(x, float)),
                        theta=0.0, a0=1.0)
        bd = bd_rates(rate_sums(m, 64), 1.0, 1.0)
        assert series_criterion(bd, 10_000).verdict is EntranceVerdict.NOT_ENTRANCE

    def test_recursion_matches_direct_product(self):
        for model in (logistic(1.0, 1.0), power_log(1.5, 0.5)):
            bd = bd_rates(rate_sums(model, 64), 1.3, 0.7)
            d = series_criterion(bd, 100)
            prod = 1.0
            for n in range(2, 31):
                prod *= bd.lambda_n(n) / bd.mu_n(n)
                assert d.log_pi[n - 1] == pytest.approx(math.log(prod), rel=1e-9)

    def test_partial_sums_monotone_in_truncation(self):
        bd = bd_rates(rate_sums(logistic(1.0, 1.0), 64), 1.0, 1.0)
        d = series_criterion(bd, 500)
        assert np.all(np.diff(d.log_a_partials) >= 0)
        assert np.all(np.diff(d.log_s_partials) >= -1e-15)


class TestJFunction:
    def test_bounded_increasing_and_identity(self):
        bd = bd_rates(rate_sums(quadratic_competition(), 300), 1.0, 1.0)
        jt = j_function(bd, 1.0, 200)
        vals = jt.values
        assert np.all(np.diff(vals) >= 0)
        assert vals[-1] <= 1.0
        assert jt(jt.n_a) == 0.0
        for n in range(jt.n_a + 1, 199):
            gen = bd.lambda_n(n) * (jt(n + 1) - jt(n)) \
                + bd.mu_n(n) * (jt(n - 1) - jt(n))
            assert gen == pytest.approx(-1.0, rel=1e-8)

    def test_threshold_index_monotone_in_a(self):
        bd = bd_rates(rate_sums(quadratic_competition(), 300), 1.0, 1.0)
        n_as = [j_function(bd, a, 200).n_a for a in (0.5, 1.0, 5.0, 50.0)]
        assert n_as == sorted(n_as)

    def test_no_entrance_boundary_raises(self):
        bd = bd_rates(rate_sums(zero_fn(), 16), 1.0, 1.0)
        with pytest.raises(NoEntranceBoundary):
            j_function(bd, 1.0, 500)


class TestIntegralCriterion:
    def test_logistic_closed_form_and_ladder_agree(self):
        m = logistic(1.0, 1.0)
        h = integral_criterion(m, Target.HEIGHT)
        s = integral_criterion(m, Target.MASS)
        assert h.verdict is IntegralVerdict.CONVERGES
        assert h.numeric.verdict is IntegralVerdict.CONVERGES
        assert h.provenance == "closed-form:logistic"
        assert s.verdict is IntegralVerdict.DIVERGES
        assert s.numeric.verdict is IntegralVerdict.DIVERGES

    def test_powerlog_mass_convergence_edge(self):
        assert integral_criterion(power_log(2.0, 2.0), Target.MASS).verdict \
            is IntegralVerdict.CONVERGES
        assert integral_criterion(power_log(2.0, 1.0), Target.MASS).verdict \
            is IntegralVerdict.DIVERGES

    def test_harmonic_tail_diverges(self):
        assert integral_criterion(linear(-1.0), Target.HEIGHT).verdict \
            is IntegralVerdict.DIVERGES

    def test_custom_quadratic_converges_numerically(self):
        rep = integral_criterion(quadratic_competition(), Target.HEIGHT)
        assert rep.provenance == "integral-ladder"
        assert rep.closed_form is None
        assert rep.verdict is IntegralVerdict.CONVERGES

    def test_custom_harmonic_diverges_numerically(self):
        m = build_model(lambda x: -np.asarray(x, float), theta=0.0, a0=1.0,
                        family="custom")
        assert integral_criterion(m, Target.HEIGHT).verdict \
            is IntegralVerdict.DIVERGES

    def test_zero_crossing_beyond_supplied_threshold(self):
        f = lambda x: np.asarray(x, float) - np.asarray(x, float) ** 2
        m = build_model(f, theta=1.0, a0=0.25, family="custom")
        with pytest.raises(ZeroCrossing):
            integral_criterion(m, Target.HEIGHT)

    def test_requires_sign_threshold(self):
        with pytest.raises(NoSignStabilization):
            integral_criterion(zero_fn(), Target.HEIGHT)

    def test_shifted_drift_keeps_the_verdict(self):
        # adding a*x with |a| <= 2*theta + 2 does not change finiteness,
        # and the per-capita drift falls below any bound along the ladder
        base = quadratic_competition()
        verdict0 = integral_criterion(base, Target.HEIGHT).verdict
        assert verdict0 is IntegralVerdict.CONVERGES
        for a in (-2.0, 1.0, 2.0):
            g = lambda x, a=a: a * np.asarray(x, float) - np.asarray(x, float) ** 2
            shifted = build_model(g, theta=max(a, 0.0), a0=max(a, 0.0) + 1.0,
                                  family="custom")
            rep = integral_criterion(shifted, Target.HEIGHT)
            assert rep.verdict is verdict0
        per_capita = np.asarray(base.f(np.asarray([1e2, 1e4]))) / np.asarray([1e2, 1e4])
        assert per_capita[0] < -10 and per_capita[1] < -100

    def test_shifted_divergent_stays_divergent(self):
        base = build_model(lambda x: -np.asarray(x, float), theta=0.0, a0=1.0)
        assert integral_criterion(base, Target.HEIGHT).verdict \
            is IntegralVerdict.DIVERGES
        g = lambda x: 2.0 * np.asarray(x, float) - np.asarray(x, float)
        shifted = build_model(g, theta=1.0, a0=1.0, family="custom")
        assert integral_criterion(shifted, Target.HEIGHT).verdict \
            is IntegralVerdict.DIVERGES


class TestKolmogorovQ:
    def test_linear_drift(self):
        q = lambda x: -x
        assert kolmogorov_Q(q, 2.0) == pytest.approx(1.0 - 4.0, rel=1e-8)
        assert kolmogorov_Q(q, 0.5) == pytest.approx(1.0 - 0.25, rel=1e-8)

    def test_quadratic_drift(self):
        q = lambda x: -x * x
        assert kolmogorov_Q(q, 3.0) == pytest.approx((2.0 / 3.0) * (1 - 27.0),
                                                     rel=1e-8)

    def test_constant_drift(self):
        q = lambda x: -1.0 + 0.0 * np.asarray(x, float)
        assert kolmogorov_Q(q, 5.0) == pytest.approx(2.0 * (1.0 - 5.0), rel=1e-8)


class TestH3Check:
    @pytest.mark.parametrize("alpha,expected", [
        (0.5, H3Verdict.FAILS),
        (1.0, H3Verdict.FAILS),
        (1.5, H3Verdict.HOLDS),
        (2.0, H3Verdict.HOLDS),
    ])
    def test_power_drift_threshold(self, alpha, expected):
        q = lambda x, a=alpha: -np.power(np.asarray(x, float), a)
        assert h3_check(q, 1.0).verdict is expected

    def test_h2_violation_for_positive_drift(self):
        with pytest.raises(H2Violation):
            h3_check(lambda x: np.asarray(x, float), 1.0)

    def test_h2_violation_for_origin_blowup(self):
        with pytest.raises(H2Violation):
            h3_check(lambda x: 1.0 / np.asarray(x, float) - x, 2.0)

    def test_double_integral_agrees_with_swapped_form(self):
        drifts = []
        for model in (logistic(1.0, 1.0), power_log(2.5, 0.0), power_log(1.5, 1.0)):
            qh, qm = diffusion_drifts(model)
            a0 = model.a0
            drifts.append((qh, max(math.sqrt(a0) * 1.05, 1e-3)))
            drifts.append((qm, max(a0 / 2.0 * 1.05, 1e-3)))
        for q, x0 in drifts:
            direct = h3_check(q, x0, full=True)
            swapped = h3_check(q, x0, full=True, swapped=True)
            assert direct.double_integral.verdict is swapped.double_integral.verdict
            assert direct.verdict is swapped.verdict

    def test_branch_margin_reported(self):
        q = lambda x: -np.asarray(x, float) ** 2
        rep = h3_check(q, 1.0)
        assert "liminf_margin_over_minus2" in rep.diagnostics
        assert rep.diagnostics["liminf_margin_over_minus2"] > 0


class TestDiffusionDrifts:
    def test_no_interaction(self):
        qh, qm = diffusion_drifts(zero_fn())
        assert qh(2.0) == pytest.approx(-0.25)
        assert qm(3.0) == pytest.approx(0.0)

    def test_linear_decay(self):
        qh, qm = diffusion_drifts(linear(-1.0))
        assert qh(2.0) == pytest.approx((-4.0 - 1.0) / 4.0)
        assert qm(5.0) == pytest.approx(-0.5)

    def test_logistic_mass_drift_is_affine(self):
        _, qm = diffusion_drifts(logistic(1.0, 1.0))
        for u in (0.25, 1.0, 7.0):
            assert qm(u) == pytest.approx(0.5 - u)


class TestClassify:
    def test_logistic(self):
        rep = classify(logistic(1.0, 1.0), 1.0, 1.0)
        assert rep.height_verdict is Verdict.FINITE_EXP_MOMENT
        assert rep.mass_verdict is Verdict.DIVERGES
        assert rep.provenance["height"]["resolution"] == "agreement"
        assert rep.provenance["mass"]["routes"]["series"] == "DIVERGES"

    def test_powerlog_both_finite(self):
        rep = classify(power_log(2.5, 0.0), 1.0, 1.0)
        assert rep.height_verdict is Verdict.FINITE_EXP_MOMENT
        assert rep.mass_verdict is Verdict.FINITE_EXP_MOMENT

    def test_powerlog_both_divergent(self):
        rep = classify(power_log(0.5, 0.0), 1.0, 1.0)
        assert rep.height_verdict is Verdict.DIVERGES
        assert rep.mass_verdict is Verdict.DIVERGES

    def test_zero_model_refused(self):
        with pytest.raises(NoSignStabilization):
            classify(zero_fn(), 1.0, 1.0)

    def test_pure_death_skips_series_routes(self):
        rep = classify(logistic(1.0, 1.0), 0.0, 1.0)
        assert rep.series_height is None
        assert "series_height" in rep.provenance["skipped"]
        assert rep.height_verdict is Verdict.FINITE_EXP_MOMENT

    def test_report_serializes(self):
        import json
        rep = classify(power_log(1.5, 0.0), 1.0, 1.0)
        blob = json.dumps(rep.to_dict(), sort_keys=True)
        assert "height_verdict" in blob
