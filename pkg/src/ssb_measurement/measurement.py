"""
Single-apparatus measurement as spontaneous symmetry breaking.

The meter phi obeys the overdamped double-well equation

    dphi/dt = gamma phi - (lam/6) phi^3 + mu <S.B> + xi

while the spin density matrix relaxes under a bath whose rates depend on
phi. A positive phi makes the spin state along +B the ground state and a
spin polarized along +B pushes phi towards the positive well: the feedback
that turns a symmetric law into a definite readout.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from scipy.special import erf

from .engine import (
    EnsembleResult,
    EnsembleRunner,
    NoiseSpec,
    SdeProblem,
    integrate_sde,
    run_ensemble,
)
from .exceptions import DimensionError, DomainError, InvalidStateError, StepSizeError
from .models import ApparatusParams, MeasurementSummary, Readout
from .quantum import (
    DensityMatrix,
    bloch_vector,
    field_basis,
    validate_density_matrix,
)

logger = logging.getLogger(__name__)

DECISION_FRACTION = 0.5
MAX_RATE_STEP = 0.1
POSITIVITY_FLOOR = -1e-8
UNDECIDED_WARNING_FRACTION = 0.1
# exp overflows near 709
RATE_EXPONENT_CLIP = 300.0


def drift_phi(phi: Any, spin_exp_along_B: Any, p: ApparatusParams) -> Any:
    """
    Meter drift gamma phi - (lam/6) phi^3 + mu <S.B_hat> |B|.

    Works element-wise on arrays as well as on scalars.
    """
    return p.gamma * phi - (p.lam / 6.0) * phi**3 + p.mu * spin_exp_along_B * p.field_strength


def fixed_points(p: ApparatusParams) -> tuple[float, float]:
    """Stable wells (phi_plus, phi_minus) = (+sqrt(6 gamma/lam), -sqrt(6 gamma/lam))."""
    return p.phi_plus, -p.phi_plus


def bath_rates(phi: Any, p: ApparatusParams) -> tuple[Any, Any, Any]:
    """
    Rates (a, b, c) of the spin bath at meter value ``phi``.

    a drives the aligned (up along B) state down, b drives it back up and c
    dephases. Detailed balance fixes a/b = exp(-mu phi |B| / kT).
    """
    exponent = np.clip(
        -p.mu * np.asarray(phi, dtype=float) * p.field_strength / p.temperature,
        -RATE_EXPONENT_CLIP,
        RATE_EXPONENT_CLIP,
    )
    b = np.full_like(exponent, p.transition_rate)
    a = b * np.exp(exponent)
    c = np.full_like(exponent, p.dephasing_rate)
    return a, b, c


def relax_in_frame(
    rho: np.ndarray,
    position: int,
    n_spins: int,
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    omega: float,
    dt: float,
) -> np.ndarray:
    """
    Propagate the local bath of spin ``position`` over ``dt`` with frozen rates.

    ``rho`` is a batch (batch, D, D) of states written in the field frames of
    the spins (basis index 0 = aligned with the local field). The generator

        -i omega [S3, rho] + sum_k r_k (2 L rho L^+ - L^+ L rho - rho L^+ L)

    with (L, r) in {(S-, a), (S+, b), (S3, c)} is solved exactly for constant
    rates: populations relax at 2(a + b) towards b / (a + b) and coherences
    decay at a + b + 4c while rotating at 2 omega. The map is completely
    positive and trace preserving for any dt.
    """
    batch = rho.shape[0]
    row, col = 1 + position, 1 + n_spins + position
    tensor = np.moveaxis(rho.reshape((batch,) + (2,) * (2 * n_spins)), (row, col), (1, 2))
    spread = (slice(None),) + (None,) * (tensor.ndim - 3)

    total = a + b
    relax = np.exp(-2.0 * total * dt)[spread]
    p_aligned = np.divide(b, total, out=np.full_like(total, 0.5), where=total > 0)[spread]
    coherence = np.exp(-(2j * omega + total + 4.0 * c) * dt)[spread]

    up, down = tensor[:, 0, 0], tensor[:, 1, 1]
    population = up + down
    updated = np.empty_like(tensor)
    updated[:, 0, 0] = relax * up + (1.0 - relax) * p_aligned * population
    updated[:, 1, 1] = relax * down + (1.0 - relax) * (1.0 - p_aligned) * population
    updated[:, 0, 1] = coherence * tensor[:, 0, 1]
    updated[:, 1, 0] = np.conj(coherence) * tensor[:, 1, 0]
    return np.moveaxis(updated, (1, 2), (row, col)).reshape(rho.shape)


def _min_eigenvalue(matrix: np.ndarray) -> float:
    if matrix.shape == (2, 2):
        # closed form for a Hermitian 2x2
        mean = np.real(matrix[0, 0] + matrix[1, 1]) / 2
        gap = math.hypot(np.real(matrix[0, 0] - matrix[1, 1]) / 2, abs(matrix[0, 1]))
        return float(mean - gap)
    return float(np.min(np.linalg.eigvalsh(matrix)))


def evolve_density_matrix(
    rho: DensityMatrix, phi: float, dt: float, p: ApparatusParams
) -> DensityMatrix:
    """
    Advance a single-spin state by one step of the bath master equation.

    In the field frame the generator is -i omega [S3, rho] plus
    r (2 L rho L^dag - L^dag L rho - rho L^dag L) for the jump pairs
    (L, r) = (S-, a), (S+, b) and (S3, c), so a lowers and b raises the spin
    along B. The rates are frozen at phi and the step uses the exact
    propagator of that generator.

    Raises:
        DimensionError: If rho is not a single-spin state
        DomainError: If dt is not positive
        StepSizeError: If dt * max(a, b, c) >= 0.1 or positivity is lost
    """
    if rho.dim != 2:
        raise DimensionError(f"evolve_density_matrix needs a single-spin state, got dim {rho.dim}")
    if not dt > 0:
        raise DomainError(f"Step dt must be positive, got {dt}")
    a, b, c = (np.atleast_1d(r) for r in bath_rates(phi, p))
    fastest = float(max(a[0], b[0], c[0]))
    if dt * fastest >= MAX_RATE_STEP:
        raise StepSizeError(
            f"dt * max rate = {dt * fastest:.3g} >= {MAX_RATE_STEP}; reduce dt below "
            f"{MAX_RATE_STEP / fastest:.3g}"
        )

    basis = field_basis(p.field_axis)
    framed = basis.conj().T @ rho.entries @ basis
    stepped = relax_in_frame(framed[None], 0, 1, a, b, c, p.omega, dt)[0]
    result = basis @ stepped @ basis.conj().T
    result = (result + result.conj().T) / 2

    lowest = _min_eigenvalue(result)
    if lowest < POSITIVITY_FLOOR:
        raise StepSizeError(f"Density matrix lost positivity (min eigenvalue {lowest:.3g})")
    return DensityMatrix(result)


class MeterDrift:
    """Double-well part of the meter drift for a (batch, 1) state."""

    def __init__(self, p: ApparatusParams):
        self.gamma = p.gamma
        self.cubic = p.lam / 6.0

    def __call__(self, state: np.ndarray, time: float) -> np.ndarray:
        return self.gamma * state - self.cubic * state**3


class SpinFeedback:
    """
    Spin density matrix carried alongside the meter.

    Intent:
    Implements the two directions of the feedback. The spin polarization
    along B enters the meter drift as mu <S.B>, and the meter value sets the
    bath rates that relax the spin. The state is stored in the field frame,
    so <S.B_hat> is the population difference.

    When the bath is switched off (b0 = c0 = omega = 0) the spin state is
    constant and advancing is skipped.
    """

    def __init__(self, params: ApparatusParams, rho0: DensityMatrix):
        self.params = params
        self.basis = field_basis(params.field_axis)
        self.initial_frame = self.basis.conj().T @ rho0.entries @ self.basis
        self.coupling = params.mu * params.field_strength
        self.static = (
            params.transition_rate == 0.0
            and params.dephasing_rate == 0.0
            and params.omega == 0.0
        )

    def initial(self, batch: int, quenched: Optional[np.ndarray]) -> np.ndarray:
        return np.tile(self.initial_frame, (batch, 1, 1))

    def drift(self, aux: np.ndarray, state: np.ndarray, time: float) -> np.ndarray:
        polarization = np.real(aux[:, 0, 0] - aux[:, 1, 1])
        return (self.coupling * polarization)[:, None]

    def advance(self, aux: np.ndarray, state: np.ndarray, time: float, dt: float) -> np.ndarray:
        if self.static:
            return aux
        a, b, c = bath_rates(state[:, 0], self.params)
        return relax_in_frame(aux, 0, 1, a, b, c, self.params.omega, dt)

    def finalize(self, aux: np.ndarray) -> np.ndarray:
        """Final states back in the standard basis, shape (batch, 2, 2)."""
        return np.einsum("ij,bjk,lk->bil", self.basis, aux, self.basis.conj())


@dataclass
class MeasurementOutcome:
    """Result of one measurement trial."""

    readout: Readout
    final_phi: float
    final_rho: DensityMatrix
    decision_time: Optional[float]
    seed: int


def polarization_along_field(rho: DensityMatrix, p: ApparatusParams) -> float:
    """<S.B_hat> of a single-spin state."""
    if rho.dim != 2:
        raise DimensionError(f"Expected a single-spin state, got dim {rho.dim}")
    return float(bloch_vector(rho) @ p.field_axis)


def bias_signal(rho: DensityMatrix, p: ApparatusParams) -> float:
    """delta = (mu / gamma) <S>.B for the initial spin state."""
    return p.mu / p.gamma * polarization_along_field(rho, p) * p.field_strength


def measurement_time(p: ApparatusParams, delta: float) -> float:
    """
    Leading-log time scale t0 = ln[(g/gamma)(delta^2 + eps/gamma)]^(-1) / (2 gamma).

    A result <= 0 signals an instantaneous decision (the logarithm's argument
    is at least 1).

    Raises:
        DomainError: If (g/gamma)(delta^2 + eps/gamma) <= 0
    """
    argument = p.time_scale_prefactor / p.gamma * (delta**2 + p.epsilon / p.gamma)
    if not argument > 0:
        raise DomainError(
            f"Measurement time needs a positive log argument, got {argument:.3g} "
            "(delta = 0 and epsilon = 0 never decide)"
        )
    return math.log(1.0 / argument) / (2.0 * p.gamma)


def p_plus_erf(delta: float, eps_eff: float) -> float:
    """
    Probability of reading +1 for a static bias delta: (1 + erf(delta / sqrt(2 eps_eff))) / 2.

    Raises:
        DomainError: If eps_eff is not positive
    """
    if not eps_eff > 0:
        raise DomainError(f"Effective variance must be positive, got {eps_eff}")
    return float(0.5 * (1.0 + erf(delta / math.sqrt(2.0 * eps_eff))))


def _check_single_spin(rho0: DensityMatrix) -> None:
    if rho0.dim != 2:
        raise DimensionError(f"A single apparatus measures one spin, got dim {rho0.dim}")
    violations = validate_density_matrix(rho0)
    if violations:
        names = ", ".join(v.name for v in violations)
        raise InvalidStateError(f"Initial spin state is not a density matrix ({names})")


def measurement_problem(
    rho0: DensityMatrix,
    p: ApparatusParams,
    T_end: float,
    dt: float,
    mirror: bool = False,
) -> SdeProblem:
    """SDE problem for the meter started at phi = 0 with the spin feedback attached."""
    _check_single_spin(rho0)
    return SdeProblem(
        drift=MeterDrift(p),
        initial_state=np.zeros(1),
        t_end=T_end,
        dt=dt,
        noise=NoiseSpec(white_amplitude=p.epsilon, mirrored=mirror),
        auxiliary=SpinFeedback(p, rho0),
        divergence_bound=1e6 * max(p.phi_plus, 1.0),
        decision_threshold=DECISION_FRACTION * p.phi_plus,
    )


def _check_duration(rho0: DensityMatrix, p: ApparatusParams, T_end: float) -> list[str]:
    try:
        t0 = measurement_time(p, bias_signal(rho0, p))
    except DomainError:
        return []
    if T_end < 5.0 * t0:
        message = (
            f"T_end={T_end:g} is shorter than 5 t0 (t0={t0:.3g}); many runs may stay undecided"
        )
        logger.warning(f"[MEASURE] {message}")
        return [message]
    return []


def run_measurement(
    rho0: DensityMatrix,
    p: ApparatusParams,
    T_end: float,
    dt: float,
    seed: int,
    mirror: bool = False,
) -> MeasurementOutcome:
    """
    Run one measurement: meter and spin stepped jointly from phi = 0.

    The readout is sign(final phi) when |final phi| >= 0.5 phi_plus and
    undecided otherwise; the decision time is the first threshold crossing
    not followed by a sign change.

    Args:
        mirror: Flip the sign of every bath-noise increment (seed-paired
            mirror runs)

    Raises:
        DimensionError / InvalidStateError: If rho0 is not a valid single-spin state
        DivergenceError: If the meter runs away (dt too large)
    """
    problem = measurement_problem(rho0, p, T_end, dt, mirror)
    _check_duration(rho0, p, T_end)
    trajectory = integrate_sde(problem, seed)

    final_phi = float(trajectory.final_state[0])
    decided = trajectory.decided_flag
    readout = Readout.from_int(int(np.sign(final_phi))) if decided else Readout.UNDECIDED
    decision_time = None
    if decided and trajectory.decision_times is not None:
        decision_time = float(trajectory.decision_times[0])
    assert trajectory.auxiliary is not None
    return MeasurementOutcome(
        readout=readout,
        final_phi=final_phi,
        final_rho=DensityMatrix(trajectory.auxiliary),
        decision_time=decision_time,
        seed=int(trajectory.seed),
    )


def measurement_ensemble(
    rho0: DensityMatrix,
    p: ApparatusParams,
    T_end: float,
    dt: float,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
    mirror: bool = False,
) -> tuple[MeasurementSummary, EnsembleResult]:
    """
    Readout statistics of ``n`` independent measurements plus the per-trial rows.

    Trial i uses seed derive_seed(master_seed, i), so any single trial can be
    re-run with run_measurement. Undecided trials count towards n but not
    towards p_plus or p_minus.
    """
    problem = measurement_problem(rho0, p, T_end, dt, mirror)
    warnings = _check_duration(rho0, p, T_end)
    logger.info(f"[MEASURE] n={n} T_end={T_end:g} dt={dt:g} seed={master_seed}")
    result = run_ensemble(problem, n, master_seed, runner)

    phi = result.final_states[:, 0]
    assert result.decided is not None and result.decision_times is not None
    decided = result.decided[:, 0]
    plus = decided & (phi > 0)
    minus = decided & (phi < 0)
    p_plus = float(plus.mean())
    stderr = float(np.std(plus.astype(float), ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    undecided_fraction = 1.0 - float(decided.mean())
    if undecided_fraction > UNDECIDED_WARNING_FRACTION:
        message = (
            f"Undecided fraction {undecided_fraction:.3f} exceeds {UNDECIDED_WARNING_FRACTION}"
        )
        logger.warning(f"[MEASURE] {message}")
        warnings.append(message)

    times = result.decision_times[decided, 0]
    aligned = None
    if result.auxiliary is not None:
        basis = field_basis(p.field_axis)
        up = basis[:, 0]
        aligned = np.real(np.einsum("i,bij,j->b", up.conj(), result.auxiliary, up))

    def conditional_mean(mask: np.ndarray) -> Optional[float]:
        if aligned is None or not mask.any():
            return None
        return float(aligned[mask].mean())

    summary = MeasurementSummary(
        n=n,
        p_plus=p_plus,
        p_minus=float(minus.mean()),
        p_undecided=undecided_fraction,
        stderr=stderr,
        median_decision_time=float(np.median(times)) if times.size else None,
        up_population_given_plus=conditional_mean(plus),
        up_population_given_minus=conditional_mean(minus),
        warnings=warnings,
    )
    logger.info(
        f"[MEASURE] p_plus={summary.p_plus:.4f}±{summary.stderr:.4f} "
        f"undecided={summary.p_undecided:.4f}"
    )
    return summary, result


def run_measurement_ensemble(
    rho0: DensityMatrix,
    p: ApparatusParams,
    T_end: float,
    dt: float,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
    mirror: bool = False,
) -> MeasurementSummary:
    """Readout statistics of ``n`` independent measurements; see measurement_ensemble."""
    summary, _ = measurement_ensemble(rho0, p, T_end, dt, n, master_seed, runner, mirror)
    return summary


def ensemble_readouts(result: EnsembleResult) -> np.ndarray:
    """Signed readout per trajectory: +1, -1, or 0 when undecided."""
    assert result.decided is not None
    return np.where(result.decided[:, 0], np.sign(result.final_states[:, 0]), 0.0)
