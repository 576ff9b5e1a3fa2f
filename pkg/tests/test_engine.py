"""
Tests for the stochastic engine: noise sampling, integration and ensembles
"""
import math

import numpy as np
import pytest

from ssb_measurement.engine import (
    CorrelatedGaussian,
    DecisionTracker,
    EnsembleRunner,
    NoiseSpec,
    SdeProblem,
    gaussian_factor,
    integrate_sde,
    run_ensemble,
    sample_static_noise,
)
from ssb_measurement.exceptions import (
    ConfigurationError,
    CovarianceError,
    DivergenceError,
    DomainError,
)
from ssb_measurement.interfaces import IAuxiliaryProcess, IDriftField
from ssb_measurement.metrics import EnsembleMetrics
from ssb_measurement.seeding import derive_seed, derive_seeds, generator_for

SINGLET_PAIR_COVARIANCE = np.block([[np.eye(3), -np.eye(3)], [-np.eye(3), np.eye(3)]])


def zero_drift(state, time):
    return np.zeros_like(state)


def decay_drift(state, time):
    return -state


def cubic_drift(state, time):
    return state**3


class ConstantPush:
    """Side process adding a constant drift and counting its own steps."""

    def __init__(self, push: float):
        self.push = push

    def initial(self, batch, quenched):
        return np.zeros(batch)

    def drift(self, aux, state, time):
        return np.full_like(state, self.push)

    def advance(self, aux, state, time, dt):
        return aux + 1

    def finalize(self, aux):
        return aux.copy()


@pytest.fixture
def white_noise_problem():
    """
    Zero drift with unit white noise over one time unit
    """
    return SdeProblem(
        drift=zero_drift,
        initial_state=np.zeros(1),
        t_end=1.0,
        dt=0.01,
        noise=NoiseSpec(white_amplitude=1.0),
    )


class TestSeeding:
    """
    Test cases for counter-based seed derivation
    """

    def test_derivation_is_deterministic(self):
        """
        Test that equal inputs give equal seeds
        """
        assert derive_seed(42, 3) == derive_seed(42, 3)
        assert derive_seed(42, 3) != derive_seed(42, 4)
        assert derive_seed(42, 3) != derive_seed(43, 3)
        assert derive_seed(42, 0, 1) != derive_seed(42, 1, 0)

    def test_seed_range(self):
        """
        Test that seeds are unsigned 64-bit integers
        """
        for index in range(20):
            assert 0 <= derive_seed(7, index) < 2**64

    def test_seed_arrays_match_scalar_derivation(self):
        """
        Test derive_seeds against derive_seed, with and without a prefix
        """
        seeds = derive_seeds(9, 5, 2)
        assert seeds.dtype == np.uint64
        assert [int(s) for s in seeds] == [derive_seed(9, 2, i) for i in range(5)]

    def test_generator_streams_are_reproducible(self):
        """
        Test that a seed fully determines the generator stream
        """
        first = generator_for(derive_seed(1, 0)).standard_normal(4)
        second = generator_for(derive_seed(1, 0)).standard_normal(4)
        np.testing.assert_array_equal(first, second)


class TestGaussianFactor:
    """
    Test cases for covariance factorization and static noise
    """

    def test_positive_definite_factor(self):
        """
        Test that F F^T reproduces a positive definite covariance
        """
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        factor = gaussian_factor(cov)
        np.testing.assert_allclose(factor @ factor.T, cov, atol=1e-12)

    def test_semidefinite_singlet_factor(self):
        """
        Test the pivoted fallback on the rank-3 singlet pair covariance
        """
        factor = gaussian_factor(SINGLET_PAIR_COVARIANCE)
        np.testing.assert_allclose(factor @ factor.T, SINGLET_PAIR_COVARIANCE, atol=1e-12)

    def test_zero_covariance_gives_zero_vector(self):
        """
        Test the degenerate Gaussian
        """
        np.testing.assert_array_equal(sample_static_noise(np.zeros((3, 3)), 5), np.zeros(3))

    def test_singlet_pair_is_exactly_anticorrelated(self):
        """
        Test that the second 3-vector is the exact negation of the first
        """
        for index in range(25):
            xi = sample_static_noise(SINGLET_PAIR_COVARIANCE, derive_seed(11, index))
            np.testing.assert_array_equal(xi[3:], -xi[:3])

    def test_sampling_is_deterministic(self):
        """
        Test that a fixed seed gives a fixed vector
        """
        cov = np.eye(3)
        np.testing.assert_array_equal(sample_static_noise(cov, 99), sample_static_noise(cov, 99))

    def test_sample_covariance_converges(self):
        """
        Test the sample covariance of 1e5 identity draws
        """
        draws = CorrelatedGaussian(np.eye(3)).sample_many(generator_for(2024), 100_000)
        sample_cov = np.cov(draws, rowvar=False)
        np.testing.assert_allclose(sample_cov, np.eye(3), atol=0.02)

    def test_negative_eigenvalue_rejected(self):
        """
        Test that an indefinite matrix is not a covariance
        """
        with pytest.raises(CovarianceError, match="positive semidefinite"):
            gaussian_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_matrix_rejected(self):
        """
        Test that asymmetry is reported
        """
        with pytest.raises(CovarianceError, match="symmetric"):
            gaussian_factor(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_tiny_negative_eigenvalue_tolerated(self):
        """
        Test that eigenvalues down to -1e-10 are clipped, not rejected
        """
        cov = np.diag([1.0, -5e-11])
        factor = gaussian_factor(cov)
        np.testing.assert_allclose(factor @ factor.T, np.diag([1.0, 0.0]), atol=1e-10)


class TestProblemValidation:
    """
    Test cases for SdeProblem and NoiseSpec construction
    """

    def test_non_positive_step_rejected(self):
        """
        Test that dt must be positive
        """
        with pytest.raises(DomainError, match="dt"):
            SdeProblem(drift=zero_drift, initial_state=[0.0], t_end=1.0, dt=0.0)

    def test_empty_time_span_rejected(self):
        """
        Test that t_end must exceed t0
        """
        with pytest.raises(DomainError, match="t_end"):
            SdeProblem(drift=zero_drift, initial_state=[0.0], t_end=1.0, dt=0.1, t0=1.0)

    def test_negative_amplitude_rejected(self):
        """
        Test that the white-noise variance density is non-negative
        """
        with pytest.raises(DomainError):
            NoiseSpec(white_amplitude=-1.0)

    def test_loading_shape_checked(self):
        """
        Test that the static loading must map the quenched vector into the state
        """
        with pytest.raises(DomainError, match="Static loading"):
            SdeProblem(
                drift=zero_drift,
                initial_state=[0.0, 0.0],
                t_end=1.0,
                dt=0.1,
                noise=NoiseSpec(static_covariance=np.eye(3)),
                static_loading=np.eye(2),
            )

    def test_time_grid(self):
        """
        Test the uniform time grid
        """
        problem = SdeProblem(drift=zero_drift, initial_state=[1.0], t_end=1.0, dt=0.25)
        assert problem.n_steps == 4
        np.testing.assert_allclose(problem.times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_stand_ins_satisfy_protocols(self):
        """
        Test that plain callables and side processes match the engine protocols
        """
        assert isinstance(zero_drift, IDriftField)
        assert isinstance(ConstantPush(1.0), IAuxiliaryProcess)


class TestIntegrateSde:
    """
    Test cases for single-trajectory Euler-Maruyama integration
    """

    def test_no_dynamics_is_constant(self):
        """
        Test that zero drift and zero noise keep the initial state
        """
        problem = SdeProblem(drift=zero_drift, initial_state=[1.0], t_end=1.0, dt=0.1)
        trajectory = integrate_sde(problem, seed=1)
        np.testing.assert_array_equal(trajectory.states[:, 0], np.ones(11))
        assert trajectory.seed == 1

    def test_linear_decay(self):
        """
        Test dx/dt = -x against exp(-1) within O(dt)
        """
        problem = SdeProblem(drift=decay_drift, initial_state=[1.0], t_end=1.0, dt=1e-3)
        final = integrate_sde(problem, seed=0).final_state[0]
        assert final == pytest.approx(math.exp(-1.0), abs=1e-3)

    def test_first_order_convergence(self):
        """
        Test that halving dt halves the deterministic error
        """

        def error(dt):
            problem = SdeProblem(drift=decay_drift, initial_state=[1.0], t_end=1.0, dt=dt)
            return abs(integrate_sde(problem, seed=0).final_state[0] - math.exp(-1.0))

        ratio = error(0.01) / error(0.005)
        assert 1.8 < ratio < 2.2

    def test_white_noise_step_variance(self):
        """
        Test that single-step increments have variance epsilon * dt
        """
        epsilon, dt = 0.5, 0.01
        problem = SdeProblem(
            drift=zero_drift,
            initial_state=[0.0],
            t_end=250_000 * dt,
            dt=dt,
            noise=NoiseSpec(white_amplitude=epsilon),
        )
        increments = np.diff(integrate_sde(problem, seed=5).states[:, 0])
        assert increments.var() == pytest.approx(epsilon * dt, rel=0.01)

    def test_reproducible_for_fixed_seed(self, white_noise_problem):
        """
        Test bit-reproducibility
        """
        first = integrate_sde(white_noise_problem, seed=17)
        second = integrate_sde(white_noise_problem, seed=17)
        np.testing.assert_array_equal(first.states, second.states)

    def test_mirrored_noise_negates_path(self, white_noise_problem):
        """
        Test that a mirrored run from zero is the exact mirror image
        """
        mirrored = SdeProblem(
            drift=zero_drift,
            initial_state=np.zeros(1),
            t_end=1.0,
            dt=0.01,
            noise=NoiseSpec(white_amplitude=1.0, mirrored=True),
        )
        plain = integrate_sde(white_noise_problem, seed=3).states
        flipped = integrate_sde(mirrored, seed=3).states
        np.testing.assert_array_equal(flipped, -plain)

    def test_quenched_loading_acts_as_constant_bias(self):
        """
        Test that the quenched vector enters as a constant drift
        """
        cov = np.eye(2)
        problem = SdeProblem(
            drift=zero_drift,
            initial_state=[0.0, 0.0],
            t_end=1.0,
            dt=0.01,
            noise=NoiseSpec(static_covariance=cov),
            static_loading=np.eye(2),
        )
        trajectory = integrate_sde(problem, seed=8)
        expected = sample_static_noise(cov, 8)
        np.testing.assert_array_equal(trajectory.quenched, expected)
        np.testing.assert_allclose(trajectory.final_state, expected, rtol=1e-12)

    def test_auxiliary_process_runs_in_lock_step(self):
        """
        Test that a side process adds drift and is advanced once per step
        """
        problem = SdeProblem(
            drift=zero_drift,
            initial_state=[0.0],
            t_end=1.0,
            dt=0.1,
            auxiliary=ConstantPush(2.0),
        )
        trajectory = integrate_sde(problem, seed=0)
        assert trajectory.final_state[0] == pytest.approx(2.0)
        assert trajectory.auxiliary == 10

    def test_divergence_reports_time(self):
        """
        Test that a runaway cubic drift raises with the blow-up time
        """
        problem = SdeProblem(drift=cubic_drift, initial_state=[2.0], t_end=10.0, dt=0.1)
        with pytest.raises(DivergenceError) as excinfo:
            integrate_sde(problem, seed=0)
        assert excinfo.value.time is not None
        assert 0.0 < excinfo.value.time < 10.0
        assert excinfo.value.trajectory_index is None


class TestDecisionTracker:
    """
    Test cases for the decision bookkeeping
    """

    def test_sign_change_resets_decision_time(self):
        """
        Test first crossing without later sign change, and undecided finals
        """
        tracker = DecisionTracker(0.5, (1, 2))
        path = [
            (0.1, 0.6),
            (0.6, 0.2),
            (0.7, 0.3),
            (-0.6, 0.1),
            (-0.8, 0.2),
            (0.9, 0.3),
        ]
        for step, values in enumerate(path, start=1):
            tracker.update(np.array([values]), float(step))
        decided, times = tracker.finalize(np.array([path[-1]]))
        assert decided.tolist() == [[True, False]]
        assert times[0, 0] == 6.0
        assert math.isnan(times[0, 1])

    def test_decision_through_problem(self):
        """
        Test that a decision threshold yields decided flags and times
        """
        problem = SdeProblem(
            drift=lambda state, time: np.ones_like(state),
            initial_state=[0.0],
            t_end=1.0,
            dt=0.1,
            decision_threshold=0.45,
        )
        trajectory = integrate_sde(problem, seed=0)
        assert trajectory.decided_flag
        assert trajectory.decision_times[0] == pytest.approx(0.5)


class TestEnsembles:
    """
    Test cases for ensemble execution and its determinism contract
    """

    def test_singleton_ensemble_matches_single_run(self, white_noise_problem):
        """
        Test that n = 1 reproduces integrate_sde with the derived seed
        """
        result = run_ensemble(white_noise_problem, 1, master_seed=77)
        single = integrate_sde(white_noise_problem, derive_seed(77, 0))
        np.testing.assert_array_equal(result.final_states[0], single.final_state)
        assert int(result.seeds[0]) == derive_seed(77, 0)

    def test_repeat_runs_are_identical(self, white_noise_problem):
        """
        Test bit-identical reruns
        """
        first = run_ensemble(white_noise_problem, 300, master_seed=5)
        second = run_ensemble(white_noise_problem, 300, master_seed=5)
        np.testing.assert_array_equal(first.final_states, second.final_states)

    def test_worker_count_does_not_change_results(self, white_noise_problem):
        """
        Test that threads only change the schedule, not the numbers
        """
        serial = run_ensemble(
            white_noise_problem, 500, 12, runner=EnsembleRunner(workers=1, chunk_size=64)
        )
        threaded = run_ensemble(
            white_noise_problem, 500, 12, runner=EnsembleRunner(workers=4, chunk_size=64)
        )
        np.testing.assert_array_equal(serial.final_states, threaded.final_states)

    def test_chunk_size_does_not_change_results(self, white_noise_problem):
        """
        Test that each trajectory owns its noise regardless of chunking
        """
        small = run_ensemble(
            white_noise_problem, 100, 12, runner=EnsembleRunner(workers=1, chunk_size=7)
        )
        large = run_ensemble(
            white_noise_problem, 100, 12, runner=EnsembleRunner(workers=1, chunk_size=512)
        )
        np.testing.assert_array_equal(small.final_states, large.final_states)

    def test_brownian_variance(self):
        """
        Test Var = epsilon * t for epsilon = 2 at t = 1
        """
        problem = SdeProblem(
            drift=zero_drift,
            initial_state=[0.0],
            t_end=1.0,
            dt=0.01,
            noise=NoiseSpec(white_amplitude=2.0),
        )
        result = run_ensemble(problem, 10_000, master_seed=31)
        assert result.variance[0] == pytest.approx(2.0, rel=0.05)

    def test_zero_drift_mean(self, white_noise_problem):
        """
        Test that the mean final state is zero within three standard errors
        """
        result = run_ensemble(white_noise_problem, 10_000, master_seed=8)
        assert abs(result.mean[0]) < 3.0 / math.sqrt(10_000)
        assert result.stderr[0] == pytest.approx(
            math.sqrt(result.variance[0] / 10_000), rel=1e-12
        )

    def test_statistics_summary(self, white_noise_problem):
        """
        Test the reduced statistics dictionary
        """
        stats = run_ensemble(white_noise_problem, 50, master_seed=1).statistics()
        assert stats["n_trajectories"] == 50
        assert len(stats["mean"]) == 1

    def test_divergence_carries_trajectory_index(self):
        """
        Test that ensemble failures name the global trajectory index
        """
        problem = SdeProblem(
            drift=cubic_drift,
            initial_state=[2.0],
            t_end=10.0,
            dt=0.1,
        )
        with pytest.raises(DivergenceError) as excinfo:
            run_ensemble(problem, 10, master_seed=0, runner=EnsembleRunner(chunk_size=4))
        assert excinfo.value.trajectory_index == 0
        assert excinfo.value.time is not None
        assert "trajectory=0" in str(excinfo.value)

    def test_metrics_count_chunks(self, white_noise_problem):
        """
        Test that the runner records every chunk
        """
        metrics = EnsembleMetrics()
        runner = EnsembleRunner(workers=2, chunk_size=30, metrics=metrics)
        run_ensemble(white_noise_problem, 100, master_seed=3, runner=runner)
        assert metrics.trajectories == 100
        assert metrics.chunks == 4
        assert metrics.errors == {}

    def test_failed_chunks_are_counted_as_errors(self):
        """
        Test that a diverging chunk is recorded by type
        """
        metrics = EnsembleMetrics()
        problem = SdeProblem(drift=cubic_drift, initial_state=[2.0], t_end=10.0, dt=0.1)
        with pytest.raises(DivergenceError):
            run_ensemble(problem, 3, 0, runner=EnsembleRunner(chunk_size=3, metrics=metrics))
        assert metrics.errors == {"DivergenceError": 1}

    def test_invalid_sizes(self, white_noise_problem):
        """
        Test that empty ensembles and invalid runners are configuration errors
        """
        with pytest.raises(ConfigurationError):
            run_ensemble(white_noise_problem, 0, master_seed=1)
        with pytest.raises(ConfigurationError):
            EnsembleRunner(workers=0)
        with pytest.raises(ConfigurationError):
            EnsembleRunner(chunk_size=0)
