"""
Tests for the single-apparatus measurement model
"""
import math

import numpy as np
import pytest

from ssb_measurement.engine import EnsembleRunner
from ssb_measurement.exceptions import (
    DimensionError,
    DivergenceError,
    DomainError,
    StepSizeError,
)
from ssb_measurement.measurement import (
    bath_rates,
    bias_signal,
    drift_phi,
    ensemble_readouts,
    evolve_density_matrix,
    fixed_points,
    measurement_ensemble,
    measurement_time,
    p_plus_erf,
    run_measurement,
    run_measurement_ensemble,
)
from ssb_measurement.models import ApparatusParams, Readout
from ssb_measurement.quantum import (
    make_pure_spin,
    make_singlet,
    maximally_mixed,
    spin_expectation,
    validate_density_matrix,
)

SPIN_UP = make_pure_spin(0.0, 0.0)
SPIN_DOWN = make_pure_spin(math.pi, 0.0)
SPIN_X = make_pure_spin(math.pi / 2, 0.0)


@pytest.fixture
def apparatus():
    """
    Unit double well (phi_plus = 1) with weak noise and no spin bath
    """
    return ApparatusParams(gamma=1.0, lam=6.0, mu=1.0, epsilon=0.01, field=(0.0, 0.0, 1.0))


class TestMeterDrift:
    """
    Test cases for the meter equation and its wells
    """

    def test_symmetric_point(self, apparatus):
        """
        Test zero drift at phi = 0 without spin polarization
        """
        assert drift_phi(0.0, 0.0, apparatus) == 0.0

    def test_well_minimum(self, apparatus):
        """
        Test zero drift at phi_plus
        """
        assert drift_phi(apparatus.phi_plus, 0.0, apparatus) == pytest.approx(0.0, abs=1e-12)

    def test_formula_value(self, apparatus):
        """
        Test 0.5 - 0.125 + 1 for phi = 0.5 and a fully polarized spin
        """
        assert drift_phi(0.5, 1.0, apparatus) == pytest.approx(1.375)

    def test_drift_is_elementwise(self, apparatus):
        """
        Test that arrays of meter values are accepted
        """
        values = drift_phi(np.array([-1.0, 0.0, 1.0]), 0.0, apparatus)
        np.testing.assert_allclose(values, [0.0, 0.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize(
        "gamma,lam,expected",
        [(1.0, 6.0, 1.0), (2.0, 3.0, 2.0), (0.5, 6.0, 1.0 / math.sqrt(2.0))],
    )
    def test_fixed_points(self, gamma, lam, expected):
        """
        Test phi_plus = sqrt(6 gamma / lam) and its mirror
        """
        plus, minus = fixed_points(ApparatusParams(gamma=gamma, lam=lam))
        assert plus == pytest.approx(expected)
        assert minus == pytest.approx(-expected)


class TestBathRates:
    """
    Test cases for the phi-dependent spin bath
    """

    def test_detailed_balance_ratio(self):
        """
        Test a / b = exp(-mu phi |B| / kT)
        """
        p = ApparatusParams(mu=2.0, field=(0.0, 0.0, 0.5), temperature=0.5, transition_rate=3.0)
        a, b, c = bath_rates(0.3, p)
        assert float(a / b) == pytest.approx(math.exp(-2.0 * 0.3 * 0.5 / 0.5))
        assert float(b) == 3.0
        assert float(c) == 0.0

    def test_extreme_meter_values_stay_finite(self):
        """
        Test that the exponent is clipped instead of overflowing
        """
        p = ApparatusParams(transition_rate=1.0, temperature=1e-3)
        a, _, _ = bath_rates(np.array([-1e6, 1e6]), p)
        assert np.all(np.isfinite(a))


class TestEvolveDensityMatrix:
    """
    Test cases for one step of the spin master equation
    """

    def test_mixed_state_is_stationary_at_zero(self):
        """
        Test that I/2 is stationary when a = b and omega = 0
        """
        p = ApparatusParams(transition_rate=1.0)
        rho = evolve_density_matrix(maximally_mixed(2), 0.0, 0.01, p)
        np.testing.assert_allclose(rho.entries, np.eye(2) / 2, atol=1e-12)

    def test_stationary_population_ratio(self):
        """
        Test rho_down/rho_up = a/b = 1/2 when mu phi |B| / kT = ln 2
        """
        p = ApparatusParams(mu=1.0, temperature=1.0, transition_rate=1.0)
        rho = SPIN_DOWN
        for _ in range(2000):
            rho = evolve_density_matrix(rho, math.log(2.0), 0.01, p)
        up, down = np.real(rho.entries[0, 0]), np.real(rho.entries[1, 1])
        assert down / up == pytest.approx(0.5, abs=1e-9)

    def test_pure_dephasing(self):
        """
        Test that coherences decay as exp(-4 c t) while populations stay put
        """
        c0 = 0.5
        p = ApparatusParams(dephasing_rate=c0)
        rho = SPIN_X
        for _ in range(100):
            rho = evolve_density_matrix(rho, 0.3, 0.01, p)
        assert abs(rho.entries[0, 1]) == pytest.approx(0.5 * math.exp(-4.0 * c0), rel=1e-10)
        assert np.real(rho.entries[0, 0]) == pytest.approx(0.5, abs=1e-12)

    def test_larmor_precession_keeps_length(self):
        """
        Test that omega rotates the coherence without shrinking it
        """
        p = ApparatusParams(omega=2.0)
        rho = evolve_density_matrix(SPIN_X, 0.0, 0.05, p)
        assert abs(rho.entries[0, 1]) == pytest.approx(0.5, abs=1e-12)
        assert np.angle(rho.entries[0, 1]) != pytest.approx(0.0)

    def test_invariants_preserved(self):
        """
        Test trace, Hermiticity and positivity along a tilted-field relaxation
        """
        p = ApparatusParams(
            field=(0.6, 0.0, 0.8), transition_rate=2.0, dephasing_rate=0.3, omega=1.0
        )
        rho = make_pure_spin(2.5, 1.0)
        for step in range(300):
            rho = evolve_density_matrix(rho, 0.8 * math.sin(step / 30.0), 0.01, p)
            assert abs(np.trace(rho.entries) - 1.0) < 1e-12
            assert validate_density_matrix(rho) == []

    def test_relaxes_towards_field_direction(self):
        """
        Test that a positive meter aligns the spin with a tilted field
        """
        axis = np.array([0.6, 0.0, 0.8])
        p = ApparatusParams(field=tuple(axis), transition_rate=1.0, temperature=0.1)
        rho = maximally_mixed(2)
        for _ in range(1000):
            rho = evolve_density_matrix(rho, 1.0, 0.01, p)
        assert spin_expectation(rho, axis) > 0.99

    def test_step_bound(self):
        """
        Test that dt * max rate >= 0.1 is refused
        """
        p = ApparatusParams(transition_rate=20.0)
        with pytest.raises(StepSizeError, match="reduce dt"):
            evolve_density_matrix(SPIN_UP, 0.0, 0.01, p)

    def test_input_checks(self, apparatus):
        """
        Test dimension and step validation
        """
        with pytest.raises(DimensionError):
            evolve_density_matrix(make_singlet(), 0.0, 0.01, apparatus)
        with pytest.raises(DomainError):
            evolve_density_matrix(SPIN_UP, 0.0, 0.0, apparatus)


class TestFormulas:
    """
    Test cases for the decision time scale and the erf readout law
    """

    def test_measurement_time_value(self):
        """
        Test t0 = 2 for gamma = g = 0.5 and delta^2 + eps/gamma = e^-2
        """
        p = ApparatusParams(gamma=0.5, epsilon=0.5 * math.exp(-2.0), time_scale_prefactor=0.5)
        assert measurement_time(p, 0.0) == pytest.approx(2.0, abs=1e-12)

    def test_measurement_time_log_of_one(self):
        """
        Test t0 = 0 when the logarithm's argument is exactly 1
        """
        p = ApparatusParams(gamma=1.0, epsilon=1.0)
        assert measurement_time(p, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_measurement_time_domain(self):
        """
        Test that a vanishing argument is a domain error
        """
        with pytest.raises(DomainError, match="positive log argument"):
            measurement_time(ApparatusParams(epsilon=0.0), 0.0)

    def test_p_plus_values(self):
        """
        Test the unbiased, saturated and unit-argument values
        """
        assert p_plus_erf(0.0, 0.1) == 0.5
        assert p_plus_erf(100.0, 0.1) == pytest.approx(1.0)
        assert p_plus_erf(1.0, 0.5) == pytest.approx((1.0 + math.erf(1.0)) / 2.0)
        assert p_plus_erf(1.0, 0.5) == pytest.approx(0.92135, abs=1e-5)

    def test_p_plus_domain(self):
        """
        Test that a non-positive effective variance is rejected
        """
        with pytest.raises(DomainError):
            p_plus_erf(0.1, 0.0)

    def test_bias_signal(self, apparatus):
        """
        Test delta = (mu/gamma) <S>.B
        """
        p = apparatus.model_copy(update={"mu": 2.0, "gamma": 4.0})
        assert bias_signal(SPIN_UP, p) == pytest.approx(0.5)
        assert bias_signal(SPIN_X, p) == pytest.approx(0.0, abs=1e-15)


class TestRunMeasurement:
    """
    Test cases for single trials
    """

    def test_outcome_fields(self, apparatus):
        """
        Test readout, decision time, seed and final state of one trial
        """
        outcome = run_measurement(SPIN_UP, apparatus, T_end=12.0, dt=0.01, seed=4)
        assert outcome.readout is Readout.PLUS
        # the polarized spin shifts the well beyond phi_plus
        assert apparatus.phi_plus < outcome.final_phi < 1.5 * apparatus.phi_plus
        assert 0.0 < outcome.decision_time < 12.0
        assert outcome.seed == 4
        assert validate_density_matrix(outcome.final_rho) == []

    def test_reproducible(self, apparatus):
        """
        Test that a seed fixes the trial
        """
        first = run_measurement(SPIN_X, apparatus, 12.0, 0.01, seed=21)
        second = run_measurement(SPIN_X, apparatus, 12.0, 0.01, seed=21)
        assert first.final_phi == second.final_phi
        assert first.readout is second.readout

    def test_mirror_symmetry(self, apparatus):
        """
        Test that flipping spin and noise flips the meter exactly
        """
        for seed in range(5):
            plain = run_measurement(SPIN_UP, apparatus, 12.0, 0.01, seed=seed)
            mirrored = run_measurement(SPIN_DOWN, apparatus, 12.0, 0.01, seed=seed, mirror=True)
            assert mirrored.final_phi == -plain.final_phi
            assert mirrored.readout.value_int == -plain.readout.value_int

    def test_symmetric_state_mirror_flips_readout(self, apparatus):
        """
        Test that for <S>.B = 0 mirrored noise alone flips the readout
        """
        unpolarized = maximally_mixed(2)
        for seed in range(5):
            plain = run_measurement(unpolarized, apparatus, 12.0, 0.01, seed=seed)
            mirrored = run_measurement(unpolarized, apparatus, 12.0, 0.01, seed=seed, mirror=True)
            assert mirrored.final_phi == -plain.final_phi
            assert mirrored.readout.value_int == -plain.readout.value_int

    def test_equator_state_mirror_flips_readout(self, apparatus):
        """
        Test the flip for a pure equator state, whose polarization is zero only to roundoff
        """
        for seed in range(5):
            plain = run_measurement(SPIN_X, apparatus, 12.0, 0.01, seed=seed)
            mirrored = run_measurement(SPIN_X, apparatus, 12.0, 0.01, seed=seed, mirror=True)
            assert mirrored.readout.value_int == -plain.readout.value_int
            assert mirrored.final_phi == pytest.approx(-plain.final_phi, rel=1e-9)

    def test_undecided_when_too_short(self, apparatus):
        """
        Test that a run stopped before the well is reached stays undecided
        """
        outcome = run_measurement(SPIN_X, apparatus, T_end=0.05, dt=0.01, seed=1)
        assert outcome.readout is Readout.UNDECIDED
        assert outcome.decision_time is None

    def test_two_spin_state_rejected(self, apparatus):
        """
        Test that a single apparatus measures a single spin
        """
        with pytest.raises(DimensionError):
            run_measurement(make_singlet(), apparatus, 1.0, 0.01, seed=0)

    def test_large_step_diverges(self):
        """
        Test that an unstable step size is reported as divergence
        """
        p = ApparatusParams(epsilon=0.0)
        with pytest.raises(DivergenceError):
            run_measurement(SPIN_UP, p, T_end=50.0, dt=2.5, seed=0)


class TestMeasurementEnsembles:
    """
    Test cases for readout statistics
    """

    def test_spin_up_reads_plus(self, apparatus):
        """
        Test that a spin along the field is read as +1
        """
        summary = run_measurement_ensemble(SPIN_UP, apparatus, 12.0, 0.01, 2000, master_seed=1)
        assert summary.p_plus > 0.99
        assert summary.warnings == []

    def test_spin_down_reads_minus(self, apparatus):
        """
        Test the mirror case
        """
        summary = run_measurement_ensemble(SPIN_DOWN, apparatus, 12.0, 0.01, 2000, master_seed=1)
        assert summary.p_minus > 0.99

    def test_born_rule_symmetry(self, apparatus):
        """
        Test P+ = 0.5 within three standard errors for <S>.B = 0 at n = 1e4
        """
        n = 10_000
        summary = run_measurement_ensemble(SPIN_X, apparatus, 12.0, 0.01, n, master_seed=2024)
        assert abs(summary.p_plus - 0.5) < 3 * 0.5 / math.sqrt(n)
        assert summary.p_undecided < 0.01
        assert summary.p_plus + summary.p_minus + summary.p_undecided == pytest.approx(1.0)

    def test_erf_law_and_monotonicity(self, apparatus):
        """
        Test Monte Carlo P+ against the erf formula over a bias sweep
        """
        estimates = []
        for delta in (0.0, 0.02, 0.04, 0.06, 0.08):
            rho = make_pure_spin(math.acos(delta), 0.0)
            summary = run_measurement_ensemble(rho, apparatus, 12.0, 0.01, 4000, master_seed=7)
            predicted = p_plus_erf(bias_signal(rho, apparatus), apparatus.readout_variance)
            assert summary.p_plus == pytest.approx(predicted, rel=0.1)
            estimates.append(summary.p_plus)
        assert estimates == sorted(estimates)

    @pytest.mark.parametrize(
        "gamma,epsilon", [(1.0, 0.01), (1.0, 0.001), (2.0, 0.01), (2.0, 0.001)]
    )
    def test_decision_time_scale(self, gamma, epsilon):
        """
        Test that the median decision time is within a factor 2 of t0
        """
        p = ApparatusParams(gamma=gamma, lam=1.5, epsilon=epsilon)
        summary = run_measurement_ensemble(SPIN_X, p, 20.0, 0.01, 1000, master_seed=3)
        t0 = measurement_time(p, 0.0)
        assert t0 / 2 <= summary.median_decision_time <= 2 * t0

    def test_feedback_aligns_spin_with_readout(self):
        """
        Test that the final spin state follows the meter for kT << mu phi_plus |B|
        """
        p = ApparatusParams(temperature=0.2, transition_rate=1.0)
        summary = run_measurement_ensemble(SPIN_X, p, 10.0, 0.01, 2000, master_seed=5)
        assert summary.up_population_given_plus > 0.99
        assert summary.up_population_given_minus < 0.01

    def test_short_run_warnings(self, apparatus):
        """
        Test quality warnings for short runs
        """
        summary = run_measurement_ensemble(SPIN_X, apparatus, 1.0, 0.01, 200, master_seed=1)
        assert any("5 t0" in w for w in summary.warnings)
        assert any("Undecided fraction" in w for w in summary.warnings)

    def test_rows_and_summary_agree(self, apparatus):
        """
        Test per-trial readouts against the reduced probabilities
        """
        summary, result = measurement_ensemble(SPIN_X, apparatus, 12.0, 0.01, 500, 9)
        readouts = ensemble_readouts(result)
        assert np.mean(readouts == 1) == pytest.approx(summary.p_plus)
        assert np.mean(readouts == -1) == pytest.approx(summary.p_minus)

    def test_worker_count_independence(self, apparatus):
        """
        Test identical summaries for one and three workers
        """
        serial = run_measurement_ensemble(
            SPIN_X, apparatus, 12.0, 0.01, 600, 13, runner=EnsembleRunner(1, 128)
        )
        threaded = run_measurement_ensemble(
            SPIN_X, apparatus, 12.0, 0.01, 600, 13, runner=EnsembleRunner(3, 128)
        )
        assert serial == threaded

    def test_trial_rerun_from_provenance(self, apparatus):
        """
        Test that a single row can be re-run from its seed
        """
        _, result = measurement_ensemble(SPIN_X, apparatus, 12.0, 0.01, 20, 9)
        single = run_measurement(SPIN_X, apparatus, 12.0, 0.01, seed=int(result.seeds[13]))
        assert single.final_phi == result.final_states[13, 0]
