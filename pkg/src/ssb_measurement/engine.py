"""
Stochastic engine: seeded noise, Euler-Maruyama integration and parallel ensembles.

Two noise species are supported: white bath noise with variance density
epsilon (per-step variance epsilon * dt) and quenched Gaussian vectors drawn
once per trajectory from a prescribed covariance. Trajectories are
integrated in vectorized chunks; every trajectory owns its generator, so a
trajectory's values never depend on which chunk or worker integrated it.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TypeVar

import numpy as np
from scipy.linalg import lapack

from .config import SimulationSettings
from .exceptions import ConfigurationError, CovarianceError, DivergenceError, DomainError
from .interfaces import IAuxiliaryProcess, IDriftField
from .metrics import EnsembleMetrics, MetricsCollector
from .seeding import derive_seeds, generator_for

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10
SYMMETRY_TOLERANCE = 1e-12
DEFAULT_DIVERGENCE_BOUND = 1e6
# steps of white noise drawn per generator call
NOISE_BLOCK_STEPS = 256

T = TypeVar("T")


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """
    Square factor F with F @ F.T equal to ``cov``.

    Plain Cholesky is used for positive definite matrices. Semidefinite
    matrices (the singlet pair covariance is exactly rank 3) fall back to
    LAPACK's pivoted Cholesky; columns beyond the numerical rank are zero, so
    eigenvalues down to -1e-10 are clipped to zero.

    Raises:
        CovarianceError: If the matrix is not square, not finite, not
            symmetric, or has an eigenvalue below -1e-10
    """
    matrix = np.asarray(cov, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise CovarianceError(f"Covariance must be a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise CovarianceError("Covariance contains non-finite entries")
    dimension = matrix.shape[0]
    if dimension == 0:
        return np.zeros((0, 0))

    scale = max(1.0, float(np.max(np.abs(matrix))))
    asymmetry = float(np.max(np.abs(matrix - matrix.T)))
    if asymmetry > SYMMETRY_TOLERANCE * scale:
        raise CovarianceError(f"Covariance is not symmetric (max asymmetry {asymmetry:.3g})")

    symmetric = (matrix + matrix.T) / 2
    min_eigenvalue = float(np.min(np.linalg.eigvalsh(symmetric)))
    if min_eigenvalue < -PSD_TOLERANCE * scale:
        raise CovarianceError(
            f"Covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:.3g})"
        )

    try:
        return np.linalg.cholesky(symmetric)
    except np.linalg.LinAlgError:
        return _pivoted_factor(symmetric)


def _pivoted_factor(matrix: np.ndarray) -> np.ndarray:
    dimension = matrix.shape[0]
    if not np.any(matrix):
        return np.zeros((dimension, dimension))
    packed, pivots, rank, info = lapack.dpstrf(matrix, lower=1)
    if info < 0:
        raise CovarianceError(f"Pivoted Cholesky failed (LAPACK info {info})")
    lower = np.tril(packed)
    lower[:, rank:] = 0.0
    # P^T A P = L L^T with P selecting rows pivots - 1
    factor = np.zeros_like(lower)
    factor[pivots - 1, :] = lower
    return factor


class CorrelatedGaussian:
    """
    Zero-mean Gaussian vectors with a fixed covariance.

    The factorization happens once; every draw consumes exactly
    ``dimension`` standard normals from the caller's generator.
    """

    def __init__(self, cov: np.ndarray):
        self.covariance = np.asarray(cov, dtype=float)
        self.factor = gaussian_factor(self.covariance)

    @property
    def dimension(self) -> int:
        return int(self.factor.shape[0])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.factor @ rng.standard_normal(self.dimension)

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent draws as rows of a (size, dimension) array."""
        return rng.standard_normal((size, self.dimension)) @ self.factor.T


def sample_static_noise(cov: np.ndarray, seed: int) -> np.ndarray:
    """One quenched Gaussian vector with covariance ``cov``, deterministic in ``seed``."""
    return CorrelatedGaussian(cov).sample(generator_for(seed))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """
    Noise acting on an SDE.

    Attributes:
        white_amplitude: Variance density epsilon of the white noise, so the
            per-step increment has variance epsilon * dt
        static_covariance: Covariance of the quenched vector drawn once per
            trajectory (None for no quenched noise)
        component_weights: Per-component factor on the white increment
            (default 1 for every component)
        schedule: Time profile multiplying epsilon, evaluated at the start
            of each step
        mirrored: Flip the sign of every white increment (seed-paired mirror runs)
    """

    white_amplitude: float = 0.0
    static_covariance: Optional[np.ndarray] = None
    component_weights: Optional[np.ndarray] = None
    schedule: Optional[Callable[[float], float]] = None
    mirrored: bool = False
    gaussian: Optional[CorrelatedGaussian] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if not np.isfinite(self.white_amplitude) or self.white_amplitude < 0:
            raise DomainError(f"White noise amplitude must be >= 0, got {self.white_amplitude}")
        if self.static_covariance is not None:
            object.__setattr__(self, "gaussian", CorrelatedGaussian(self.static_covariance))
        if self.component_weights is not None:
            weights = np.asarray(self.component_weights, dtype=float)
            if weights.ndim != 1 or not np.all(np.isfinite(weights)):
                raise DomainError("Component weights must be a finite 1-D array")
            object.__setattr__(self, "component_weights", weights)

    @property
    def quenched_dimension(self) -> int:
        return self.gaussian.dimension if self.gaussian is not None else 0

    def weights(self, dimension: int) -> np.ndarray:
        if self.component_weights is None:
            return np.ones(dimension)
        if self.component_weights.shape != (dimension,):
            raise DomainError(
                f"Component weights have shape {self.component_weights.shape}, "
                f"state dimension is {dimension}"
            )
        return self.component_weights


@dataclass(frozen=True, eq=False)
class SdeProblem:
    """
    An SDE dx = drift(x, t) dt + sqrt(epsilon dt) eta with optional extras.

    Intent:
    Describes everything the integrator needs and nothing about how it is
    executed. Beyond the plain drift the problem can carry:
    - a quenched vector (from ``noise.static_covariance``) mapped into a
      constant additive drift by ``static_loading`` (shape (d, m))
    - an auxiliary deterministic process contributing drift
    - a decision threshold: a component is decided at the first time its
      magnitude reaches the threshold with no later sign change

    Raises:
        DomainError: On inconsistent shapes or a non-positive step/time span
    """

    drift: IDriftField
    initial_state: np.ndarray
    t_end: float
    dt: float
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    t0: float = 0.0
    static_loading: Optional[np.ndarray] = None
    auxiliary: Optional[IAuxiliaryProcess] = None
    divergence_bound: float = DEFAULT_DIVERGENCE_BOUND
    decision_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        initial = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
        if initial.ndim != 1 or not np.all(np.isfinite(initial)):
            raise DomainError("Initial state must be a finite 1-D vector")
        object.__setattr__(self, "initial_state", initial)
        if not self.dt > 0:
            raise DomainError(f"Step dt must be positive, got {self.dt}")
        if not self.t_end > self.t0:
            raise DomainError(f"t_end must exceed t0, got ({self.t0}, {self.t_end})")
        if self.static_loading is not None:
            loading = np.asarray(self.static_loading, dtype=float)
            expected = (initial.shape[0], self.noise.quenched_dimension)
            if loading.shape != expected:
                raise DomainError(f"Static loading has shape {loading.shape}, expected {expected}")
            object.__setattr__(self, "static_loading", loading)
        if self.decision_threshold is not None and not self.decision_threshold > 0:
            raise DomainError("Decision threshold must be positive")

    @property
    def state_dimension(self) -> int:
        return int(self.initial_state.shape[0])

    @property
    def n_steps(self) -> int:
        return max(1, int(round((self.t_end - self.t0) / self.dt)))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


class DecisionTracker:
    """
    Online bookkeeping of decision times for a batch of components.

    A component's candidate decision time is the first time its magnitude
    reaches the threshold since its last sign change; a sign change clears
    the candidate. At the end a component is decided when its final
    magnitude is at or above the threshold.
    """

    def __init__(self, threshold: float, shape: tuple[int, ...]):
        self.threshold = threshold
        self.sign = np.zeros(shape)
        self.candidate = np.full(shape, np.nan)

    def update(self, state: np.ndarray, time: float) -> None:
        sign = np.sign(state)
        flipped = (sign != 0) & (self.sign != 0) & (sign != self.sign)
        self.candidate[flipped] = np.nan
        self.sign = np.where(sign != 0, sign, self.sign)
        reached = (np.abs(state) >= self.threshold) & np.isnan(self.candidate)
        self.candidate[reached] = time

    def finalize(self, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        decided = np.abs(state) >= self.threshold
        return decided, np.where(decided, self.candidate, np.nan)


@dataclass(eq=False)
class Trajectory:
    """Full time series of one trajectory with its seed provenance."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    decided: Optional[np.ndarray] = None
    decision_times: Optional[np.ndarray] = None
    quenched: Optional[np.ndarray] = None
    auxiliary: Optional[np.ndarray] = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def decided_flag(self) -> bool:
        return bool(self.decided is not None and np.all(self.decided))


@dataclass(eq=False)
class EnsembleResult:
    """
    Per-trajectory summaries of an ensemble plus reduced statistics.

    Row i always belongs to the trajectory seeded with
    ``derive_seed(master_seed, i)``.
    """

    seeds: np.ndarray
    final_states: np.ndarray
    decided: Optional[np.ndarray] = None
    decision_times: Optional[np.ndarray] = None
    quenched: Optional[np.ndarray] = None
    auxiliary: Optional[np.ndarray] = None

    @property
    def n_trajectories(self) -> int:
        return int(self.final_states.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return self.final_states.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        if self.n_trajectories < 2:
            return np.zeros(self.final_states.shape[1])
        return self.final_states.var(axis=0, ddof=1)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n_trajectories)

    def statistics(self) -> dict[str, Any]:
        stats: dict[str, Any] = {
            "n_trajectories": self.n_trajectories,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "stderr": self.stderr.tolist(),
        }
        if self.decided is not None:
            stats["decided"] = self.decided.sum(axis=0).astype(int).tolist()
        return stats


@dataclass
class _ChunkOutcome:
    final_states: np.ndarray
    decided: Optional[np.ndarray]
    decision_times: Optional[np.ndarray]
    quenched: Optional[np.ndarray]
    auxiliary: Optional[np.ndarray]
    path: Optional[np.ndarray]


def _check_finite(
    state: np.ndarray, time: float, bound: float, first_index: Optional[int]
) -> None:
    runaway = ~np.all(np.isfinite(state), axis=1) | (np.max(np.abs(state), axis=1) > bound)
    if np.any(runaway):
        local = int(np.argmax(runaway))
        error = DivergenceError(
            f"State left the confining region |x| <= {bound:.3g}; reduce dt", time=time
        )
        raise error if first_index is None else error.with_trajectory(first_index + local)


def _integrate_chunk(
    problem: SdeProblem, seeds: np.ndarray, first_index: Optional[int], record: bool
) -> _ChunkOutcome:
    batch = len(seeds)
    dimension = problem.state_dimension
    n_steps = problem.n_steps
    dt = problem.dt
    noise = problem.noise
    rngs = [generator_for(int(seed)) for seed in seeds]

    quenched = None
    bias = None
    if noise.gaussian is not None:
        quenched = np.stack([noise.gaussian.sample(rng) for rng in rngs])
        if problem.static_loading is not None:
            bias = quenched @ problem.static_loading.T

    process = problem.auxiliary
    aux = process.initial(batch, quenched) if process is not None else None

    state = np.tile(problem.initial_state, (batch, 1))
    weights = noise.weights(dimension)
    sign = -1.0 if noise.mirrored else 1.0
    has_white = noise.white_amplitude > 0
    tracker = (
        DecisionTracker(problem.decision_threshold, state.shape)
        if problem.decision_threshold is not None
        else None
    )
    path = np.empty((n_steps + 1, batch, dimension)) if record else None
    if path is not None:
        path[0] = state

    for block_start in range(0, n_steps, NOISE_BLOCK_STEPS):
        block = min(NOISE_BLOCK_STEPS, n_steps - block_start)
        eta = (
            np.stack([rng.standard_normal((block, dimension)) for rng in rngs], axis=1)
            if has_white
            else None
        )
        for offset in range(block):
            step = block_start + offset
            t = problem.t0 + step * dt
            increment = np.asarray(problem.drift(state, t), dtype=float)
            if increment.shape != state.shape:
                raise DomainError(
                    f"Drift returned shape {increment.shape}, expected {state.shape}"
                )
            if bias is not None:
                increment = increment + bias
            if process is not None:
                increment = increment + process.drift(aux, state, t)
            new_state = state + increment * dt
            if eta is not None:
                amplitude = noise.white_amplitude
                if noise.schedule is not None:
                    amplitude = amplitude * noise.schedule(t)
                new_state = new_state + (sign * np.sqrt(amplitude * dt)) * weights * eta[offset]
            if process is not None:
                aux = process.advance(aux, state, t, dt)
            state = new_state
            t_next = problem.t0 + (step + 1) * dt
            _check_finite(state, t_next, problem.divergence_bound, first_index)
            if tracker is not None:
                tracker.update(state, t_next)
            if path is not None:
                path[step + 1] = state

    decided = decision_times = None
    if tracker is not None:
        decided, decision_times = tracker.finalize(state)
    return _ChunkOutcome(
        final_states=state,
        decided=decided,
        decision_times=decision_times,
        quenched=quenched,
        auxiliary=process.finalize(aux) if process is not None else None,
        path=path,
    )


def integrate_sde(problem: SdeProblem, seed: int) -> Trajectory:
    """
    Integrate one trajectory with Euler-Maruyama and keep its full path.

    x[n+1] = x[n] + drift(x[n], t[n]) dt + sqrt(epsilon dt) eta[n], with
    eta[n] standard normal from the generator seeded by ``seed``.
    Bit-reproducible for fixed (seed, dt).

    Raises:
        DivergenceError: If the state becomes non-finite or exceeds the
            problem's divergence bound; the error carries the time
    """
    outcome = _integrate_chunk(problem, np.array([seed], dtype=np.uint64), None, record=True)
    assert outcome.path is not None
    return Trajectory(
        times=problem.times,
        states=outcome.path[:, 0, :],
        seed=int(seed),
        decided=None if outcome.decided is None else outcome.decided[0],
        decision_times=None if outcome.decision_times is None else outcome.decision_times[0],
        quenched=None if outcome.quenched is None else outcome.quenched[0],
        auxiliary=None if outcome.auxiliary is None else outcome.auxiliary[0],
    )


class EnsembleRunner:
    """
    Executes ensembles in fixed-size chunks on a thread pool.

    Intent:
    Separates execution policy (worker count, chunk size) from the numerics.
    Chunks are cut from the seed list in index order and results come back
    in the same order, so reductions never depend on which thread finished
    first. Threads are used because trajectory kernels are vectorized numpy
    code and the work items close over unpicklable callables.

    Key design decisions:
    - Chunk boundaries depend only on chunk_size, never on the worker count
    - The first failing chunk in index order determines the raised error
    - Metrics are collected per chunk and logged at debug level
    """

    def __init__(
        self,
        workers: Optional[int] = None,
        chunk_size: Optional[int] = None,
        settings: Optional[SimulationSettings] = None,
        metrics: Optional[EnsembleMetrics] = None,
    ):
        settings = settings or SimulationSettings()
        self.workers = workers if workers is not None else settings.workers
        self.chunk_size = chunk_size if chunk_size is not None else settings.chunk_size
        if self.workers < 1:
            raise ConfigurationError(f"Worker count must be at least 1, got {self.workers}")
        if self.chunk_size < 1:
            raise ConfigurationError(f"Chunk size must be at least 1, got {self.chunk_size}")
        self.metrics = metrics or EnsembleMetrics()

    def map(self, work: Callable[[np.ndarray, int], T], seeds: np.ndarray) -> list[T]:
        """
        Apply ``work(chunk_seeds, first_index)`` to consecutive chunks of ``seeds``.

        Returns:
            One result per chunk, in chunk order
        """
        spans = [
            (start, seeds[start : start + self.chunk_size])
            for start in range(0, len(seeds), self.chunk_size)
        ]

        def run(span: tuple[int, np.ndarray]) -> T:
            start, chunk_seeds = span
            with MetricsCollector(self.metrics, len(chunk_seeds)):
                return work(chunk_seeds, start)

        if self.workers == 1 or len(spans) <= 1:
            results = [run(span) for span in spans]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, spans))
        logger.debug(f"[ENSEMBLE] {len(spans)} chunks done: {self.metrics.to_dict()}")
        return results


def _concatenate(parts: list[Optional[np.ndarray]]) -> Optional[np.ndarray]:
    if any(part is None for part in parts):
        return None
    return np.concatenate(parts, axis=0)  # type: ignore[arg-type]


def run_ensemble(
    problem: SdeProblem,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
    seed_prefix: tuple[int, ...] = (),
) -> EnsembleResult:
    """
    Integrate ``n`` independent trajectories of ``problem``.

    Trajectory i uses ``derive_seed(master_seed, *seed_prefix, i)``; results
    are assembled in index order, so the outcome is bit-identical for any
    worker count or chunk size.

    Raises:
        ConfigurationError: If n < 1
        DivergenceError: With the failing trajectory's index attached
    """
    if n < 1:
        raise ConfigurationError(f"Ensemble size must be at least 1, got {n}")
    runner = runner or EnsembleRunner()
    seeds = derive_seeds(master_seed, n, *seed_prefix)
    logger.debug(
        f"[ENSEMBLE] n={n} steps={problem.n_steps} dim={problem.state_dimension} "
        f"workers={runner.workers} chunk={runner.chunk_size}"
    )

    chunks = runner.map(
        lambda chunk_seeds, start: _integrate_chunk(problem, chunk_seeds, start, record=False),
        seeds,
    )

    decided = _concatenate([chunk.decided for chunk in chunks])
    if decided is not None:
        n_decided = int(np.all(decided, axis=1).sum())
        runner.metrics.record_decisions(n_decided, n - n_decided)
    return EnsembleResult(
        seeds=seeds,
        final_states=np.concatenate([chunk.final_states for chunk in chunks], axis=0),
        decided=decided,
        decision_times=_concatenate([chunk.decision_times for chunk in chunks]),
        quenched=_concatenate([chunk.quenched for chunk in chunks]),
        auxiliary=_concatenate([chunk.auxiliary for chunk in chunks]),
    )
