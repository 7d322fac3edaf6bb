"""Averaged model: break-evens, equilibria, winner prediction, decomposition."""

import numpy as np
import pytest

from chemostat.aggregated import (
    aggregate,
    aggregated_vector_field,
    break_even,
    concentrate_uptake,
    concentration_reversal,
    covariance_check,
    covariance_comparison,
    decompose_strength,
    equilibria,
    predict_cep,
)
from chemostat.errors import (
    CepAssumptionUnmet,
    LocalBreakEvenInfinite,
    NotLinear,
    TiedRStar,
)
from chemostat.model import (
    AveragedCurve,
    CompetitionModel,
    LinearConsumption,
    MonodConsumption,
)
from chemostat.scenario import load_scenario
from helpers import random_decomposable_model, random_model, two_patch_operator

SEC52_M1 = (0.38 + 34 / 41) / 2
SEC52_M2 = (0.75 + 20 / 21) / 2


class TestAggregate:
    def test_sec52_mortality_means(self):
        agg = aggregate(load_scenario("sec52").model)
        assert agg.mortality_means[0] == pytest.approx(SEC52_M1, rel=1e-14)
        assert agg.mortality_means[1] == pytest.approx(SEC52_M2, rel=1e-14)
        assert agg.mortality_means[0] == pytest.approx(0.604634, abs=5e-7)
        assert agg.mortality_means[1] == pytest.approx(0.851190, abs=5e-7)

    def test_sec51_mortality_means(self):
        agg = aggregate(load_scenario("sec51").model)
        assert np.allclose(agg.mortality_means, [0.5, 0.5, 0.4], atol=1e-15)

    def test_homogeneous_averaging_is_identity(self):
        rng = np.random.default_rng(0)
        from helpers import random_homogeneous_model

        model = random_homogeneous_model(rng)
        agg = aggregate(model)
        for f, curve, m, mbar in zip(
            model.consumptions, agg.curves, model.mortalities, agg.mortality_means
        ):
            r = rng.uniform(0.1, 5.0)
            assert float(curve(r)) == pytest.approx(float(f.rate(np.full(f.site_count, r))[0]))
            assert mbar == pytest.approx(m[0])

    def test_case_detection(self):
        assert aggregate(load_scenario("sec51").model).cep_cases == ("proportional_uptake",)
        assert aggregate(load_scenario("sec52").model).cep_cases == ("monod_family",)
        rng = np.random.default_rng(1)
        equal = random_model(rng, kinds="equal")
        assert "equal_mortalities" in aggregate(equal).cep_cases


class TestBreakEven:
    def test_sec52_values(self):
        agg = aggregate(load_scenario("sec52").model)
        assert agg.break_evens[1] == pytest.approx(SEC52_M1 / (1 - SEC52_M1), rel=1e-12)
        assert agg.break_evens[1] == pytest.approx(1.5293, abs=5e-5)
        assert agg.break_evens[2] == pytest.approx(0.25 * SEC52_M2 / (1 - SEC52_M2), rel=1e-12)
        assert agg.break_evens[2] == pytest.approx(1.43, abs=1e-6)

    def test_root_matches_curve_value(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            model = random_model(rng)
            agg = aggregate(model)
            for i, (curve, m) in enumerate(zip(agg.curves, agg.mortality_means), start=1):
                r = agg.break_evens[i]
                if np.isfinite(r):
                    assert abs(float(curve(r)) - m) <= 1e-12 * m

    def test_saturation_below_mortality_gives_infinity(self):
        curve = AveragedCurve(kind="monod", c=1.0, k=1.0)
        assert break_even(curve, 1.0) == np.inf
        assert break_even(curve, 1.3) == np.inf
        assert np.isfinite(break_even(curve, 0.99))

    def test_washout_scenario_sentinel(self):
        agg = aggregate(load_scenario("washout").model)
        assert agg.break_evens[0] == pytest.approx(0.4)
        assert agg.break_evens[1] == pytest.approx(0.7)
        assert agg.break_evens[2] == np.inf


class TestEquilibria:
    def test_sec51_winner_equilibrium(self):
        agg = aggregate(load_scenario("sec51").model)
        eqs = {e.surviving_index: e for e in equilibria(agg)}
        assert set(eqs) == {0, 1, 2, 3}
        # direct-substitution oracle: f~_3(r) = m~_3 at r = 0.4, then
        # u_3 = (I~ - m~_0 r)/f~_3(r) = (1 - 0.4)/0.4 = 1.5
        assert np.allclose(eqs[3].point, [0.4, 0.0, 0.0, 1.5], atol=1e-12)
        assert eqs[3].stable and eqs[3].hyperbolic
        assert not eqs[1].hyperbolic and not eqs[2].hyperbolic  # tied losers

    def test_washout_only_when_no_species_survivable(self):
        agg = aggregate(load_scenario("washout").model)
        eqs = equilibria(agg)
        assert len(eqs) == 1
        assert eqs[0].surviving_index == 0
        assert eqs[0].stable

    def test_two_species_closed_form(self):
        # N = 1, linear curve r, mean mortality 0.5, input = loss = 1:
        # direct substitution gives the rest point (0.5, 1.0)
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.5, 0.5]),),
            consumptions=(LinearConsumption(slopes=np.ones(2)),),
        )
        agg = aggregate(model)
        eqs = {e.surviving_index: e for e in equilibria(agg)}
        assert np.allclose(eqs[1].point, [0.5, 1.0], atol=1e-14)
        closed = np.roots([1.0, 2.0, 0.5])  # lambda^2 + 2 lambda + 0.5
        assert np.allclose(np.sort(eqs[1].eigenvalues.real), np.sort(closed), atol=1e-12)
        assert np.all(eqs[1].eigenvalues.real < 0)

    def test_residuals_and_count_and_single_stability(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            model = random_model(rng)
            agg = aggregate(model)
            eqs = equilibria(agg)
            survivable = sum(
                1 for i in range(1, agg.species_count + 1)
                if agg.break_evens[i] < agg.break_evens[0]
            )
            assert len(eqs) == survivable + 1
            for eq in eqs:
                residual = np.abs(aggregated_vector_field(agg, eq.point)).max()
                assert residual <= 1e-12
            finite = agg.break_evens[np.isfinite(agg.break_evens)]
            if len(np.unique(np.round(finite, 9))) == finite.size:
                assert sum(eq.stable for eq in eqs) == 1


class TestPredictCep:
    def test_sec51_all_present(self):
        agg = aggregate(load_scenario("sec51").model)
        pred = predict_cep(agg, np.array([1.0, 1.0, 1.0, 1.0]))
        assert pred.contenders == (0, 1, 2, 3)
        assert pred.r_hat == pytest.approx(0.4)
        assert pred.winner == 3
        assert np.allclose(pred.limit_point, [0.4, 0, 0, 1.5], atol=1e-12)
        assert pred.warnings  # the 0.5/0.5 tie among losers is reported

    def test_sec52_winner_is_species_two(self):
        agg = aggregate(load_scenario("sec52").model)
        pred = predict_cep(agg, np.array([1.0, 1.0, 1.0]))
        assert pred.winner == 2
        assert pred.r_hat == pytest.approx(1.43, abs=1e-6)

    def test_absent_species_do_not_contend(self):
        agg = aggregate(load_scenario("sec51").model)
        pred = predict_cep(agg, np.array([1.0, 0.0, 0.0, 0.0]))
        assert pred.contenders == (0,)
        assert pred.winner == 0
        assert np.allclose(pred.limit_point, [1.0, 0, 0, 0])

    def test_winner_invariant_under_relabeling(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            model = random_model(rng, kinds="monod", N=3)
            agg = aggregate(model)
            try:
                pred = predict_cep(agg, np.ones(4))
            except TiedRStar:
                continue
            perm = rng.permutation(3)
            permuted = CompetitionModel(
                domain=model.domain,
                migration=model.migration,
                input_rate=model.input_rate,
                resource_loss=model.resource_loss,
                mortalities=tuple(model.mortalities[j] for j in perm),
                consumptions=tuple(model.consumptions[j] for j in perm),
            )
            pred_p = predict_cep(aggregate(permuted), np.ones(4))
            if pred.winner == 0:
                assert pred_p.winner == 0
            else:
                assert perm[pred_p.winner - 1] == pred.winner - 1

    def test_tied_minimum_raises(self):
        op = two_patch_operator(3)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.4, 0.6]), np.array([0.6, 0.4])),
            consumptions=(
                LinearConsumption(slopes=np.ones(2)),
                LinearConsumption(slopes=np.ones(2)),
            ),
        )
        with pytest.raises(TiedRStar):
            predict_cep(aggregate(model), np.array([1.0, 1.0, 1.0]))

    def test_no_structural_case_raises(self):
        op = two_patch_operator(3)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.4, 0.5]), np.array([0.3, 0.2])),
            consumptions=(
                LinearConsumption(slopes=np.array([1.0, 2.0])),
                MonodConsumption(capacities=np.ones(2), half_saturation=1.0),
            ),
        )
        agg = aggregate(model)
        assert not agg.cep_valid
        with pytest.raises(CepAssumptionUnmet):
            predict_cep(agg, np.ones(3))


class TestStrengthDecomposition:
    def test_sec52_species_one(self):
        model = load_scenario("sec52").model
        d = decompose_strength(model, aggregate(model))[0]
        local = np.array([0.38 / 0.62, (34 / 41) / (1 - 34 / 41)])
        assert d.local_mean == pytest.approx(local.mean(), rel=1e-12)
        assert d.local_mean == pytest.approx(2.7350, abs=5e-5)
        assert d.nonlinearity == pytest.approx(-1.2057, abs=5e-5)
        assert d.heterogeneity == 0.0
        assert abs(d.residual) <= 1e-10

    def test_sec52_species_two_jensen_formula(self):
        model = load_scenario("sec52").model
        d = decompose_strength(model, aggregate(model))[1]
        m = np.array([0.75, 20 / 21])
        jensen = 0.25 * (m.mean() / (1 - m.mean()) - np.mean(m / (1 - m)))
        assert d.nonlinearity == pytest.approx(jensen, rel=1e-12)
        assert d.nonlinearity == pytest.approx(0.25 * (5.72 - 11.5), abs=1e-10)
        assert d.local_mean == pytest.approx(2.875, rel=1e-12)
        assert d.break_even == pytest.approx(1.43, abs=1e-6)
        assert abs(d.residual) <= 1e-10

    def test_linear_constant_slopes_have_trivial_corrections(self):
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.3, 0.7]),),
            consumptions=(LinearConsumption(slopes=np.array([2.0, 2.0])),),
        )
        d = decompose_strength(model, aggregate(model))[0]
        assert d.nonlinearity == pytest.approx(0.0, abs=1e-14)
        assert d.heterogeneity == pytest.approx(0.0, abs=1e-14)
        assert d.break_even == pytest.approx(d.local_mean, rel=1e-12)

    def test_monod_jensen_term_is_nonpositive(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            model = random_decomposable_model(rng, kinds="monod")
            for d in decompose_strength(model, aggregate(model)):
                assert d.nonlinearity <= 0.0
                assert abs(d.residual) <= 1e-10

    def test_averaged_ceiling_below_site_mortality_reports_site(self):
        # heterogeneous Monod capacities: site 0 mortality is feasible
        # locally (C = 3) but above the averaged ceiling E(C) = 1.75
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([2.0, 0.2]),),
            consumptions=(MonodConsumption(capacities=np.array([3.0, 0.5]), half_saturation=1.0),),
        )
        with pytest.raises(LocalBreakEvenInfinite) as err:
            decompose_strength(model, aggregate(model))
        assert err.value.site == 0

    def test_infinite_local_break_even_reports_site(self):
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            # mortality above the Monod ceiling at site 1 only
            mortalities=(np.array([0.5, 1.5]),),
            consumptions=(MonodConsumption(capacities=np.ones(2), half_saturation=1.0),),
        )
        with pytest.raises(LocalBreakEvenInfinite) as err:
            decompose_strength(model, aggregate(model))
        assert err.value.species == 1
        assert err.value.site == 1


class TestCovariance:
    def test_frozen_arithmetic_example(self):
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.3, 0.3]),),
            consumptions=(LinearConsumption(slopes=np.array([1.0, 3.0])),),
        )
        rep = covariance_check(model, aggregate(model))[0]
        assert rep.local_mean == pytest.approx(0.2, rel=1e-14)  # mean of (0.3, 0.1)
        assert rep.break_even == pytest.approx(0.15, rel=1e-12)  # 0.3 / 2
        assert rep.covariance == pytest.approx(-0.05, rel=1e-12)
        assert abs(rep.residual) <= 1e-12

    def test_constant_slopes_give_zero_covariance(self):
        op = two_patch_operator(2)
        model = CompetitionModel(
            domain=op.domain,
            migration=op,
            input_rate=np.ones(2),
            resource_loss=np.ones(2),
            mortalities=(np.array([0.2, 0.6]),),
            consumptions=(LinearConsumption(slopes=np.array([1.5, 1.5])),),
        )
        rep = covariance_check(model, aggregate(model))[0]
        assert rep.covariance == pytest.approx(0.0, abs=1e-14)
        assert rep.break_even == pytest.approx(rep.local_mean, rel=1e-12)

    def test_identity_on_random_linear_models(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            model = random_model(rng, kinds="linear")
            for rep in covariance_check(model, aggregate(model)):
                assert abs(rep.residual) <= 1e-12

    def test_comparison_equivalence(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            model = random_model(rng, kinds="linear", N=2)
            r1, r2 = covariance_check(model, aggregate(model))
            cmp = covariance_comparison(r1, r2)
            assert cmp["covariance_side"] == cmp["break_even_side"]

    def test_non_linear_rejected(self):
        model = load_scenario("sec52").model
        with pytest.raises(NotLinear):
            covariance_check(model, aggregate(model))


class TestConcentration:
    def test_concentration_drives_break_even_to_target_site(self):
        rng = np.random.default_rng(8)
        w = np.full(3, 1.0 / 3)
        targets = rng.uniform(0.5, 3.0, size=3)
        for site in range(3):
            slopes, mort = concentrate_uptake(targets, site, ratio=1e3)
            r_star = float((slopes * targets) @ w / (slopes @ w))
            assert abs(r_star - targets[site]) / targets[site] < 0.01

    def test_sec53_reversal(self):
        # species 1 dominates at every site, yet averages worse
        model = load_scenario("sec53").model
        agg = aggregate(model)
        reps = covariance_check(model, agg)
        local_1 = model.mortalities[0] / model.consumptions[0].slopes
        local_2 = model.mortalities[1] / model.consumptions[1].slopes
        assert np.all(local_1 < local_2)
        assert agg.break_evens[2] < agg.break_evens[1]
        for rep in reps:
            assert abs(rep.residual) <= 1e-12

    def test_reversal_report_flags(self):
        R1 = np.array([1.0, 4.0])
        R2 = np.array([2.0, 5.0])
        rep = concentration_reversal(R1, R2, ratio=100.0)
        assert rep.pointwise_dominance
        assert rep.operative_condition  # min R2 < max R1
        assert not rep.printed_condition  # contradicts dominance, never holds here
        assert rep.reversal_achieved
        assert rep.break_even_1 == pytest.approx(4.0, rel=0.02)
        assert rep.break_even_2 == pytest.approx(2.0, rel=0.02)

    def test_reversal_impossible_without_overlap(self):
        # R2 uniformly above max R1: no concentration can reverse the order
        rep = concentration_reversal(np.array([1.0, 1.2]), np.array([2.0, 2.2]), ratio=1e6)
        assert not rep.operative_condition
        assert not rep.reversal_achieved
