"""
Two separated apparatuses measuring an entangled spin pair.

Each meter obeys the single-apparatus equation with an extra quenched bias
xi_i.B_i, where (xi_1, xi_2) is drawn once per trial from the Gaussian
whose cross-covariance is the two-spin correlation matrix of the shared
state. For the singlet this covariance is -identity, so xi_2 = -xi_1 and
parallel fields produce opposite readouts.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate
from scipy.special import erf

from .engine import (
    EnsembleResult,
    EnsembleRunner,
    NoiseSpec,
    SdeProblem,
    integrate_sde,
    run_ensemble,
    sample_static_noise,
)
from .exceptions import ConfigurationError, CovarianceError, DimensionError, InvalidStateError
from .measurement import DECISION_FRACTION, UNDECIDED_WARNING_FRACTION, bath_rates, relax_in_frame
from .models import ApparatusParams, ChshResult, CorrelationEstimate, Readout
from .quantum import (
    PAULI,
    DensityMatrix,
    field_basis,
    spin_correlation_matrix,
    two_spin_covariance,
    validate_density_matrix,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

MIN_CORRELATION_TRIALS = 1000
FIELD_PRODUCT_TOLERANCE = 1e-10
SINGLET_TOLERANCE = 1e-10
ORACLE_TOLERANCE = 1e-12
CLASSICAL_CHSH_BOUND = 2.0
STANDARD_CHSH_ANGLES = ((90.0, 0.0), (45.0, 135.0))

# Tr(rho S_i(1) S_j(2)) operators, row-major over (i, j)
_PAIR_OPERATORS = np.stack([np.kron(si, sj) for si in PAULI for sj in PAULI])
_FIRST_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])
_SECOND_SIGNS = np.array([1.0, -1.0, 1.0, -1.0])


class EprConfig(BaseModel):
    """
    One EPR experiment: two apparatuses sharing a two-spin state.

    Intent:
    Bundles everything a trial needs so a configuration can be handed to
    worker threads or rebuilt from a config file. The field of each
    apparatus lives inside its ApparatusParams.

    Key design decisions:
    - `covariance_mode="frozen"` draws the quenched pair once from the
      covariance of the initial state; "tracking" keeps the per-trial
      standard normals and re-maps them through the covariance of rho(t)
    - `feedback=False` drops the mu Tr[rho S.B] term and the spin bath
    - `enforce_field_product` checks |B1||B2| = gamma
    """

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    apparatus1: ApparatusParams = Field(default_factory=ApparatusParams)
    apparatus2: ApparatusParams = Field(default_factory=ApparatusParams)
    shared_rho0: DensityMatrix
    enforce_field_product: bool = False
    t_end: float = Field(default=12.0, gt=0)
    dt: float = Field(default=0.01, gt=0)
    feedback: bool = True
    covariance_mode: Literal["frozen", "tracking"] = "frozen"
    label: str = ""

    @field_validator("shared_rho0")
    @classmethod
    def validate_rho(cls, v: DensityMatrix) -> DensityMatrix:
        if v.dim != 4:
            raise ValueError(f"Shared state must be a two-spin state, got dim {v.dim}")
        violations = validate_density_matrix(v)
        if violations:
            raise ValueError(
                "Shared state is not a density matrix: " + ", ".join(x.name for x in violations)
            )
        return v

    @model_validator(mode="after")
    def check_field_product(self) -> "EprConfig":
        if self.enforce_field_product:
            product = self.apparatus1.field_strength * self.apparatus2.field_strength
            for params in (self.apparatus1, self.apparatus2):
                if abs(product - params.gamma) > FIELD_PRODUCT_TOLERANCE:
                    raise ValueError(f"|B1||B2| = {product:.12g} must equal gamma = {params.gamma}")
        return self

    @property
    def apparatuses(self) -> tuple[ApparatusParams, ApparatusParams]:
        return self.apparatus1, self.apparatus2

    @property
    def cos_angle(self) -> float:
        """Cosine of the angle between the two fields."""
        return float(np.clip(self.apparatus1.field_axis @ self.apparatus2.field_axis, -1.0, 1.0))

    def with_fields(
        self, field1: Sequence[float], field2: Sequence[float], label: str = ""
    ) -> "EprConfig":
        return self.model_copy(
            update={
                "apparatus1": self.apparatus1.with_field(field1),
                "apparatus2": self.apparatus2.with_field(field2),
                "label": label or self.label,
            }
        )


@dataclass
class PairOutcome:
    """Readouts of one EPR trial with the quenched noise that produced them."""

    readout1: Readout
    readout2: Readout
    xi1: np.ndarray
    xi2: np.ndarray
    seed: int
    final_phi: tuple[float, float]
    decision_times: tuple[Optional[float], Optional[float]]

    @property
    def decided(self) -> bool:
        return Readout.UNDECIDED not in (self.readout1, self.readout2)

    @property
    def product(self) -> int:
        return self.readout1.value_int * self.readout2.value_int


def _pair_covariance(rho: DensityMatrix) -> np.ndarray:
    if rho.dim != 4:
        raise DimensionError(f"EPR noise needs a two-spin state, got dim {rho.dim}")
    violations = validate_density_matrix(rho)
    if violations:
        raise InvalidStateError(
            "Shared state is not a density matrix: " + ", ".join(v.name for v in violations)
        )
    return two_spin_covariance(rho)


def sample_epr_noise(rho: DensityMatrix, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw the quenched pair (xi1, xi2) induced by a two-spin state.

    The draw is the same one run_epr_trial makes with the same seed in the
    default frozen mode.

    Raises:
        DimensionError: If rho is not a two-spin state
        InvalidStateError: If rho is not a density matrix or its covariance
            is not positive semidefinite
    """
    covariance = _pair_covariance(rho)
    try:
        xi = sample_static_noise(covariance, seed)
    except CovarianceError as e:
        raise InvalidStateError(f"State induces an invalid noise covariance: {e}") from e
    return xi[:3], xi[3:]


def _symmetric_sqrt(covariance: np.ndarray) -> np.ndarray:
    """Batched principal square root of (batch, 6, 6) PSD matrices."""
    values, vectors = np.linalg.eigh(covariance)
    root = np.sqrt(np.clip(values, 0.0, None))
    return np.einsum("bij,bj,bkj->bik", vectors, root, vectors)


class PairDrift:
    """Independent double wells for the state (phi1, phi2)."""

    def __init__(self, config: EprConfig):
        self.gamma = np.array([p.gamma for p in config.apparatuses])
        self.cubic = np.array([p.lam / 6.0 for p in config.apparatuses])

    def __call__(self, state: np.ndarray, time: float) -> np.ndarray:
        return self.gamma * state - self.cubic * state**3


@dataclass
class _PairSide:
    rho: np.ndarray
    normals: Optional[np.ndarray]


class PairFeedback:
    """
    Two-spin density matrix carried alongside both meters.

    Intent:
    Stores the shared state in the product of the two field frames, so each
    local bath acts on one tensor factor and <S.B_hat> of either spin is a
    signed sum of populations. In tracking mode it also owns the per-trial
    standard normals and turns them into the quenched biases using the
    covariance of the current state.
    """

    def __init__(self, config: EprConfig):
        self.params = config.apparatuses
        self.feedback = config.feedback
        self.tracking = config.covariance_mode == "tracking"
        self.basis = np.kron(
            field_basis(config.apparatus1.field_axis), field_basis(config.apparatus2.field_axis)
        )
        self.initial_frame = self.basis.conj().T @ config.shared_rho0.entries @ self.basis
        self.coupling = np.array([p.mu * p.field_strength for p in self.params])
        self.fields = np.stack([p.field_vector for p in self.params])
        self.static = not self.feedback or all(
            p.transition_rate == 0.0 and p.dephasing_rate == 0.0 and p.omega == 0.0
            for p in self.params
        )

    def initial(self, batch: int, quenched: Optional[np.ndarray]) -> _PairSide:
        return _PairSide(rho=np.tile(self.initial_frame, (batch, 1, 1)), normals=quenched)

    def polarizations(self, rho: np.ndarray) -> np.ndarray:
        populations = np.real(np.diagonal(rho, axis1=1, axis2=2))
        return np.stack([populations @ _FIRST_SIGNS, populations @ _SECOND_SIGNS], axis=1)

    def quenched_biases(self, rho: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """xi_i.B_i with xi drawn through the covariance of the current state."""
        lab = np.einsum("ij,bjk,lk->bil", self.basis, rho, self.basis.conj())
        cross = np.real(np.einsum("bkl,mlk->bm", lab, _PAIR_OPERATORS)).reshape(-1, 3, 3)
        covariance = np.zeros((rho.shape[0], 6, 6))
        covariance[:, :3, :3] = np.eye(3)
        covariance[:, 3:, 3:] = np.eye(3)
        covariance[:, :3, 3:] = cross
        covariance[:, 3:, :3] = np.transpose(cross, (0, 2, 1))
        xi = np.einsum("bij,bj->bi", _symmetric_sqrt(covariance), normals)
        return np.stack([xi[:, :3] @ self.fields[0], xi[:, 3:] @ self.fields[1]], axis=1)

    def drift(self, aux: _PairSide, state: np.ndarray, time: float) -> np.ndarray:
        total = np.zeros_like(state)
        if self.feedback:
            total = total + self.coupling * self.polarizations(aux.rho)
        if self.tracking and aux.normals is not None:
            total = total + self.quenched_biases(aux.rho, aux.normals)
        return total

    def advance(self, aux: _PairSide, state: np.ndarray, time: float, dt: float) -> _PairSide:
        if self.static:
            return aux
        rho = aux.rho
        for position, params in enumerate(self.params):
            a, b, c = bath_rates(state[:, position], params)
            rho = relax_in_frame(rho, position, 2, a, b, c, params.omega, dt)
        return _PairSide(rho=rho, normals=aux.normals)

    def finalize(self, aux: _PairSide) -> np.ndarray:
        return np.einsum("ij,bjk,lk->bil", self.basis, aux.rho, self.basis.conj())


def epr_problem(config: EprConfig) -> SdeProblem:
    """SDE problem for both meters, started at phi = 0."""
    first, second = config.apparatuses
    if config.covariance_mode == "tracking":
        covariance = np.eye(6)
        loading = None
    else:
        covariance = _pair_covariance(config.shared_rho0)
        loading = np.zeros((2, 6))
        loading[0, :3] = first.field_vector
        loading[1, 3:] = second.field_vector

    needs_side_process = config.feedback or config.covariance_mode == "tracking"
    try:
        noise = NoiseSpec(
            white_amplitude=1.0,
            static_covariance=covariance,
            component_weights=np.sqrt([first.epsilon, second.epsilon]),
        )
    except CovarianceError as e:
        raise InvalidStateError(f"State induces an invalid noise covariance: {e}") from e
    return SdeProblem(
        drift=PairDrift(config),
        initial_state=np.zeros(2),
        t_end=config.t_end,
        dt=config.dt,
        noise=noise,
        static_loading=loading,
        auxiliary=PairFeedback(config) if needs_side_process else None,
        divergence_bound=1e6 * max(first.phi_plus, second.phi_plus, 1.0),
        # decision times refer to the smaller well when the apparatuses differ
        decision_threshold=DECISION_FRACTION * min(first.phi_plus, second.phi_plus),
    )


def pair_readouts(final_phi: np.ndarray, config: EprConfig) -> tuple[np.ndarray, np.ndarray]:
    """Signed readouts (+1, -1, 0 for undecided) and the decided mask, per meter."""
    thresholds = np.array([DECISION_FRACTION * p.phi_plus for p in config.apparatuses])
    decided = np.abs(final_phi) >= thresholds
    return np.where(decided, np.sign(final_phi), 0.0), decided


def run_epr_trial(config: EprConfig, seed: int) -> PairOutcome:
    """
    Integrate one EPR trial: quenched pair drawn once, both meters stepped jointly.

    Raises:
        InvalidStateError: If the shared state induces an invalid covariance
        DivergenceError: If a meter runs away
    """
    trajectory = integrate_sde(epr_problem(config), seed)
    final_phi = trajectory.final_state
    signs, decided = pair_readouts(final_phi[None, :], config)

    assert trajectory.quenched is not None
    xi = trajectory.quenched
    if config.covariance_mode == "tracking":
        covariance = _pair_covariance(config.shared_rho0)
        xi = _symmetric_sqrt(covariance[None])[0] @ xi

    times: list[Optional[float]] = [None, None]
    if trajectory.decision_times is not None:
        for i in range(2):
            if decided[0, i] and np.isfinite(trajectory.decision_times[i]):
                times[i] = float(trajectory.decision_times[i])
    return PairOutcome(
        readout1=Readout.from_int(int(signs[0, 0])),
        readout2=Readout.from_int(int(signs[0, 1])),
        xi1=xi[:3],
        xi2=xi[3:],
        seed=int(seed),
        final_phi=(float(final_phi[0]), float(final_phi[1])),
        decision_times=(times[0], times[1]),
    )


def correlation_ensemble(
    config: EprConfig,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
) -> tuple[CorrelationEstimate, EnsembleResult]:
    """
    Monte Carlo estimate of C = P++ + P-- - P+- - P-+ over decided trials.

    Trial i uses derive_seed(master_seed, i). Trials where either meter is
    undecided are excluded from C and counted; above 10% a quality warning
    is attached.

    Raises:
        ConfigurationError: If n < 1000
    """
    if n < MIN_CORRELATION_TRIALS:
        raise ConfigurationError(
            f"Correlation estimates need n >= {MIN_CORRELATION_TRIALS} trials, got {n}"
        )
    result = run_ensemble(epr_problem(config), n, master_seed, runner)
    signs, decided = pair_readouts(result.final_states, config)
    both = decided.all(axis=1)
    n_decided = int(both.sum())
    n_undecided = n - n_decided

    warnings: list[str] = []
    if n_decided == 0:
        message = "No trial decided at both detectors"
        logger.warning(f"[EPR] {config.label}: {message}")
        estimate = CorrelationEstimate(
            label=config.label,
            correlation=0.0,
            stderr=0.0,
            n_decided=0,
            n_undecided=n_undecided,
            marginal_plus=(0.0, 0.0),
            warnings=[message],
        )
        return estimate, result

    products = signs[both, 0] * signs[both, 1]
    correlation = float(products.mean())
    stderr = float(np.std(products, ddof=1) / math.sqrt(n_decided)) if n_decided > 1 else 0.0
    marginal = (signs[both] > 0).mean(axis=0)

    if n_undecided:
        logger.info(f"[EPR] {config.label}: excluded {n_undecided} undecided trials")
    if n_undecided / n > UNDECIDED_WARNING_FRACTION:
        message = f"Undecided fraction {n_undecided / n:.3f} exceeds {UNDECIDED_WARNING_FRACTION}"
        logger.warning(f"[EPR] {config.label}: {message}")
        warnings.append(message)

    estimate = CorrelationEstimate(
        label=config.label,
        correlation=correlation,
        stderr=stderr,
        n_decided=n_decided,
        n_undecided=n_undecided,
        marginal_plus=(float(marginal[0]), float(marginal[1])),
        warnings=warnings,
    )
    return estimate, result


def estimate_correlation(
    config: EprConfig,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
) -> CorrelationEstimate:
    """Monte Carlo estimate of the readout-product mean; see correlation_ensemble."""
    estimate, _ = correlation_ensemble(config, n, master_seed, runner)
    return estimate


def readout_sharpness(params: ApparatusParams) -> float:
    """
    a = |B| / (gamma sqrt(2 eps_eff)), so that E[readout | xi] = erf(a xi.B_hat).

    Infinite when the effective variance vanishes (the readout is then the
    sign of the bias).
    """
    variance = params.readout_variance
    if variance == 0.0:
        return math.inf if params.field_strength > 0 else 0.0
    return params.field_strength / (params.gamma * math.sqrt(2.0 * variance))


def _saturation(a: float) -> float:
    # 2a / sqrt(1 + 2a^2), with its limit sqrt(2)
    return math.sqrt(2.0) if math.isinf(a) else 2.0 * a / math.sqrt(1.0 + 2.0 * a * a)


def correlation_arcsine(a1: float, a2: float, cos_theta: float) -> float:
    """
    Closed form of -E[erf(a1 z.n1) erf(a2 z.n2)] for a standard normal 3-vector z.

    Equals -(2/pi) arcsin(2 a1 a2 cos(theta) / sqrt((1 + 2 a1^2)(1 + 2 a2^2))).
    """
    argument = _saturation(a1) * _saturation(a2) * cos_theta / 2.0
    return -2.0 / math.pi * math.asin(max(-1.0, min(1.0, argument)))


def _scaled_erf(a: float, u: float) -> float:
    if math.isinf(a):
        return math.copysign(1.0, u) if u != 0 else 0.0
    return float(erf(a * u))


def correlation_quadrature_oracle(config: EprConfig) -> float:
    """
    Exact erf-model correlation for the singlet by deterministic quadrature.

    With xi2 = -xi1 = -z the model gives C = -E[erf(a1 z.n1) erf(a2 z.n2)].
    Writing z.n2 = c u + s w with u = z.n1 the Gaussian average over w is
    analytic, E[erf(alpha + beta w)] = erf(alpha / sqrt(1 + 2 beta^2)),
    leaving one even integral over u done with adaptive quadrature.

    Raises:
        InvalidStateError: If the shared state is not singlet-correlated
    """
    correlations = spin_correlation_matrix(config.shared_rho0)
    deviation = float(np.max(np.abs(correlations + np.eye(3))))
    if deviation > SINGLET_TOLERANCE:
        raise InvalidStateError(
            f"Quadrature oracle needs singlet correlations (-identity), off by {deviation:.3g}"
        )

    a1 = readout_sharpness(config.apparatus1)
    a2 = readout_sharpness(config.apparatus2)
    if a1 == 0.0 or a2 == 0.0:
        return 0.0
    c = config.cos_angle
    s = math.sqrt(max(0.0, 1.0 - c * c))
    if math.isinf(a2):
        inner = c / (math.sqrt(2.0) * s) if s > 0 else math.copysign(math.inf, c)
    else:
        inner = a2 * c / math.sqrt(1.0 + 2.0 * a2 * a2 * s * s)
    if inner == 0.0:
        return 0.0

    def integrand(u: float) -> float:
        density = math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
        return _scaled_erf(a1, u) * _scaled_erf(inner, u) * density

    half, _ = integrate.quad(
        integrand, 0.0, math.inf, epsabs=ORACLE_TOLERANCE, epsrel=ORACLE_TOLERANCE, limit=200
    )
    return -2.0 * half


def ideal_correlation(theta: float) -> float:
    """Singlet correlation -cos(theta) of ideal projective measurements."""
    return -math.cos(theta)


def chsh_from_correlations(correlations: Sequence[float]) -> float:
    """|C(B1,B2) + C(B1',B2) + C(B1,B2') - C(B1',B2')|."""
    if len(correlations) != 4:
        raise ConfigurationError(f"CHSH needs four correlations, got {len(correlations)}")
    c0, c1, c2, c3 = correlations
    return abs(c0 + c1 + c2 - c3)


def field_in_xz_plane(strength: float, degrees: float) -> tuple[float, float, float]:
    angle = math.radians(degrees)
    return (strength * math.sin(angle), 0.0, strength * math.cos(angle))


def chsh_configs(
    base: EprConfig,
    detector1_angles: tuple[float, float] = STANDARD_CHSH_ANGLES[0],
    detector2_angles: tuple[float, float] = STANDARD_CHSH_ANGLES[1],
) -> list[EprConfig]:
    """
    The four field settings of a CHSH run, in degrees from z in the x-z plane.

    ``detector1_angles`` is (B1, B1') and ``detector2_angles`` is (B2, B2');
    the returned order is (B1,B2), (B1',B2), (B1,B2'), (B1',B2'). Field
    strengths are taken from ``base``.
    """
    strength1 = base.apparatus1.field_strength
    strength2 = base.apparatus2.field_strength
    first, first_prime = detector1_angles
    second, second_prime = detector2_angles
    settings = [
        (first, second),
        (first_prime, second),
        (first, second_prime),
        (first_prime, second_prime),
    ]
    return [
        base.with_fields(
            field_in_xz_plane(strength1, angle1),
            field_in_xz_plane(strength2, angle2),
            label=f"B1={angle1:g},B2={angle2:g}",
        )
        for angle1, angle2 in settings
    ]


def chsh_oracle(configs: Sequence[EprConfig]) -> float:
    """Erf-model CHSH value of four singlet configurations."""
    return chsh_from_correlations([correlation_quadrature_oracle(c) for c in configs])


def chsh_statistic(
    configs: Sequence[EprConfig],
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
) -> ChshResult:
    """
    Monte Carlo CHSH statistic with a 3-sigma violation verdict.

    Configuration i is estimated with master seed derive_seed(master_seed, i).
    The erf-model oracle value is attached when the shared state is a
    singlet; the verdict is reported as measured, whichever side of 2 it falls.

    Raises:
        ConfigurationError: Unless there are four configurations sharing one state
    """
    if len(configs) != 4:
        raise ConfigurationError(f"CHSH needs four configurations, got {len(configs)}")
    if any(c.shared_rho0 != configs[0].shared_rho0 for c in configs[1:]):
        raise ConfigurationError("CHSH configurations must share the initial state")

    estimates = []
    for index, config in enumerate(configs):
        logger.info(f"[CHSH] setting {index}: {config.label or 'unlabelled'}")
        estimates.append(estimate_correlation(config, n, derive_seed(master_seed, index), runner))

    statistic = chsh_from_correlations([e.correlation for e in estimates])
    stderr = math.sqrt(sum(e.stderr**2 for e in estimates))
    violation = statistic - 3.0 * stderr > CLASSICAL_CHSH_BOUND

    try:
        oracle: Optional[float] = chsh_oracle(configs)
    except InvalidStateError:
        oracle = None
    warnings = [w for e in estimates for w in e.warnings]
    logger.info(
        f"[CHSH] S={statistic:.4f}±{stderr:.4f} violation={violation} oracle={oracle}"
    )
    return ChshResult(
        estimates=estimates,
        statistic=statistic,
        stderr=stderr,
        violation=violation,
        oracle_statistic=oracle,
        warnings=warnings,
    )
