"""
Inflationary mode functions and reheating-era density fluctuations.

Works in conformal time eta < 0 with a(eta) = -1/(H eta). Modes obey
v'' + (k^2 - 2/eta^2) v = 0 (the pump a''/a vanishes for H = 0). At
reheating a mode at horizon crossing is kicked by a stochastic force whose
variance density comes from the statistical kernel, phi_k'' = xi_k, which
gives a scale-free spectrum proportional to lam^2 (dt phi0)^4 (H/2pi)^2.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .engine import EnsembleRunner, NoiseSpec, SdeProblem, run_ensemble
from .exceptions import ConfigurationError, DomainError, StepSizeError
from .models import InflationParams, ReheatingParams, SpectrumResult

logger = logging.getLogger(__name__)

WRONSKIAN_TOLERANCE = 1e-8
SUB_HORIZON_START = 10.0
MIN_K_SPAN = 100.0
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14


def _check_wavenumber(k: float) -> None:
    if not (math.isfinite(k) and k > 0):
        raise DomainError(f"Wavenumber must be positive, got {k}")


def _check_conformal(eta: float) -> None:
    if not eta < 0:
        raise DomainError(f"Conformal time must be negative, got {eta}")


def analytic_mode(k: float, eta: float, H: float) -> complex:
    """
    k^(-1/2) (1 - i/(k eta)) e^(-i k eta), the de Sitter vacuum mode.

    For H = 0 the pump is off and the mode is the plane wave k^(-1/2) e^(-i k eta).
    """
    _check_wavenumber(k)
    _check_conformal(eta)
    phase = complex(math.cos(k * eta), -math.sin(k * eta))
    if H == 0:
        return phase / math.sqrt(k)
    return (1.0 - 1j / (k * eta)) * phase / math.sqrt(k)


def analytic_mode_derivative(k: float, eta: float, H: float) -> complex:
    """Conformal-time derivative of analytic_mode."""
    _check_wavenumber(k)
    _check_conformal(eta)
    phase = complex(math.cos(k * eta), -math.sin(k * eta))
    if H == 0:
        return -1j * math.sqrt(k) * phase
    return (1j / (k * eta**2) - 1j * k - 1.0 / eta) * phase / math.sqrt(k)


@dataclass(frozen=True)
class ModeState:
    """Mode amplitude and its conformal-time derivative at one instant."""

    k: float
    eta: float
    v: complex
    dv: complex

    @property
    def wronskian(self) -> complex:
        """v conj(dv) - conj(v) dv, purely imaginary (2i for the vacuum mode)."""
        return self.v * self.dv.conjugate() - self.v.conjugate() * self.dv


@dataclass
class ModeTrajectory:
    """A mode sampled on a uniform conformal-time grid."""

    k: float
    eta: np.ndarray
    v: np.ndarray
    dv: np.ndarray

    def state(self, index: int) -> ModeState:
        return ModeState(
            self.k, float(self.eta[index]), complex(self.v[index]), complex(self.dv[index])
        )

    @property
    def final(self) -> ModeState:
        return self.state(-1)

    @property
    def wronskian(self) -> np.ndarray:
        return self.v * np.conj(self.dv) - np.conj(self.v) * self.dv

    @property
    def wronskian_drift(self) -> float:
        """Largest relative departure of the Wronskian from its initial value."""
        w = self.wronskian
        return float(np.max(np.abs(w - w[0])) / abs(w[0]))


def integrate_mode(
    k: float,
    params: InflationParams,
    d_eta: float,
    initial: Literal["plane_wave", "bunch_davies"] = "plane_wave",
) -> ModeTrajectory:
    """
    Integrate v'' + (k^2 - a''/a) v = 0 across the conformal window.

    Starts from the plane wave k^(-1/2) e^(-i k eta_start) (or the full
    vacuum mode) and samples the solution every ``d_eta``; the last sample
    is eta_end. Uses DOP853 at rtol 1e-12.

    Raises:
        DomainError: If k or d_eta is not positive
        StepSizeError: If the Wronskian drifts by more than 1e-8 relative
    """
    _check_wavenumber(k)
    if not d_eta > 0:
        raise DomainError(f"Sampling step must be positive, got {d_eta}")
    start, end = params.eta_start, params.eta_end
    if k * abs(start) < SUB_HORIZON_START:
        logger.warning(
            f"[MODE] k|eta_start| = {k * abs(start):.3g} is not deep inside the horizon"
        )

    if initial == "bunch_davies":
        v0 = analytic_mode(k, start, params.hubble)
        dv0 = analytic_mode_derivative(k, start, params.hubble)
    else:
        v0 = analytic_mode(k, start, 0.0)
        dv0 = analytic_mode_derivative(k, start, 0.0)

    pumped = params.hubble != 0

    def rhs(eta: float, y: np.ndarray) -> np.ndarray:
        frequency = k * k - (2.0 / (eta * eta) if pumped else 0.0)
        return np.array([y[1], -frequency * y[0]])

    samples = np.arange(start, end, d_eta)
    samples = np.append(samples[samples < end], end)
    solution = solve_ivp(
        rhs,
        (start, end),
        np.array([v0, dv0], dtype=complex),
        method="DOP853",
        t_eval=samples,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    if not solution.success:
        raise StepSizeError(f"Mode integration failed: {solution.message}")

    trajectory = ModeTrajectory(k=k, eta=solution.t, v=solution.y[0], dv=solution.y[1])
    drift = trajectory.wronskian_drift
    if drift > WRONSKIAN_TOLERANCE:
        raise StepSizeError(f"Wronskian drifted by {drift:.3g} (tolerance {WRONSKIAN_TOLERANCE})")
    logger.debug(f"[MODE] k={k:g} samples={len(samples)} wronskian drift={drift:.3g}")
    return trajectory


def evaluate_kernels(eta: float, eta_prime: float) -> tuple[float, float]:
    """
    Leading-order brackets of the retarded and statistical kernels.

    g_ret = (eta'^3 - eta^3) / (3 eta' eta) and
    g_stat = -1/eta'^2 - (eta/eta' + eta'/eta) / 2.
    """
    _check_conformal(eta)
    _check_conformal(eta_prime)
    g_ret = (eta_prime**3 - eta**3) / (3.0 * eta_prime * eta)
    g_stat = -1.0 / eta_prime**2 - 0.5 * (eta / eta_prime + eta_prime / eta)
    return g_ret, g_stat


def standard_spectrum(H: float) -> float:
    """(H / 2 pi)^2, the textbook inflationary spectrum at horizon crossing."""
    if not H > 0:
        raise DomainError(f"Hubble rate must be positive, got {H}")
    return (H / (2.0 * math.pi)) ** 2


def predicted_power(rp: ReheatingParams, ip: InflationParams) -> float:
    """Leading estimate lam^2 (dt phi0)^4 (H/2pi)^2 / 3 with the kernel frozen at crossing."""
    if ip.hubble == 0:
        return 0.0
    return rp.lam**2 * (rp.duration * rp.phi0) ** 4 * standard_spectrum(ip.hubble) / 3.0


def _crossing_coordinate(rp: ReheatingParams, ip: InflationParams) -> Callable[[float], float]:
    """x(t) = k eta(t) = -r exp(-H t) for a mode at k/(aH) = r when reheating starts."""
    ratio, hubble = rp.crossing_ratio, ip.hubble
    return lambda t: -ratio * math.exp(-hubble * t)


def _mode_prefactor(k: float, ip: InflationParams) -> float:
    return ip.hubble**2 / (2.0 * k**3)


def noise_density(k: float, rp: ReheatingParams, ip: InflationParams) -> Callable[[float], float]:
    """
    Variance density q(t) of the stochastic force on mode k.

    q(t) = lam^2 phi0^4 |g_stat(x, x)| / 2 tau_c H^2 / (2 k^3), with the mode
    coordinate x(t) = k eta(t) moving towards zero across the window.
    """
    coordinate = _crossing_coordinate(rp, ip)
    strength = rp.lam**2 * rp.phi0**4 * rp.force_correlation_time * _mode_prefactor(k, ip)

    def density(t: float) -> float:
        _, g_stat = evaluate_kernels(coordinate(t), coordinate(t))
        return strength * abs(g_stat) / 2.0

    return density


class AccelerationDrift:
    """(phi, v) -> (v, -w^2 phi) for the two quadratures of a complex mode."""

    def __init__(self, stiffness: float = 0.0):
        self.stiffness = stiffness

    def __call__(self, state: np.ndarray, time: float) -> np.ndarray:
        velocity = state[:, 2:]
        force = -self.stiffness * state[:, :2]
        return np.concatenate([velocity, force], axis=1)


@dataclass
class _History:
    times: list[float]
    values: list[np.ndarray]


class RetardedMemory:
    """
    Retarded force -kappa sum_m G_ret(t, t_m) phi(t_m) dt from the stored past.

    The side state is the list of past mode values; each step appends the
    value at the start of the step.
    """

    def __init__(self, k: float, rp: ReheatingParams, ip: InflationParams):
        self.coordinate = _crossing_coordinate(rp, ip)
        self.kappa = rp.lam**2 * rp.phi0**4 * _mode_prefactor(k, ip)
        self.dt = rp.dt

    def initial(self, batch: int, quenched: Optional[np.ndarray]) -> _History:
        return _History(times=[], values=[])

    def drift(self, aux: _History, state: np.ndarray, time: float) -> np.ndarray:
        force = np.zeros_like(state)
        if not aux.values:
            return force
        now = self.coordinate(time)
        weights = np.array(
            [evaluate_kernels(now, self.coordinate(past))[0] for past in aux.times]
        )
        past = np.stack(aux.values)
        force[:, 2:] = -self.kappa * self.dt * np.einsum("m,mbj->bj", weights, past)
        return force

    def advance(self, aux: _History, state: np.ndarray, time: float, dt: float) -> _History:
        return _History(times=aux.times + [time], values=aux.values + [state[:, :2].copy()])

    def finalize(self, aux: _History) -> Optional[np.ndarray]:
        return None


def random_acceleration_problem(
    q: float,
    duration: float,
    dt: float,
    schedule: Optional[Callable[[float], float]] = None,
    stiffness: float = 0.0,
    memory: Optional[RetardedMemory] = None,
) -> SdeProblem:
    """
    phi'' = -stiffness phi + xi for a complex phi starting at rest at zero.

    Each quadrature receives half the density q (times ``schedule(t)`` when
    given), so <|phi|^2> = q duration^3 / 3 for a constant density.
    """
    if q < 0:
        raise DomainError(f"Noise density must be non-negative, got {q}")
    return SdeProblem(
        drift=AccelerationDrift(stiffness),
        initial_state=np.zeros(4),
        t_end=duration,
        dt=dt,
        noise=NoiseSpec(
            white_amplitude=q,
            component_weights=np.array([0.0, 0.0, math.sqrt(0.5), math.sqrt(0.5)]),
            schedule=schedule,
        ),
        auxiliary=memory,
    )


@dataclass
class FluctuationEstimate:
    """Ensemble mean of |phi_k|^2 at the end of reheating."""

    k: float
    mean_square: float
    stderr: float
    n: int


def reheating_problem(k: float, rp: ReheatingParams, ip: InflationParams) -> SdeProblem:
    """The reheating Langevin equation for mode k, with the optional comparison terms."""
    _check_wavenumber(k)
    stiffness = 0.0
    if rp.include_potential:
        stiffness = (rp.crossing_ratio * ip.hubble) ** 2 + rp.lam * rp.phi0**2 / 2.0
    memory = RetardedMemory(k, rp, ip) if rp.include_memory else None
    return random_acceleration_problem(
        q=1.0,
        duration=rp.duration,
        dt=rp.dt,
        schedule=noise_density(k, rp, ip),
        stiffness=stiffness,
        memory=memory,
    )


def reheating_langevin(
    k: float,
    rp: ReheatingParams,
    ip: InflationParams,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
    stream: Sequence[int] = (),
) -> FluctuationEstimate:
    """
    Ensemble estimate of |phi_k|^2 after the reheating window.

    Trajectory i uses derive_seed(master_seed, *stream, i). The estimate is
    linear in the noise density, so for a fixed seed doubling lam multiplies
    it by 4 and doubling phi0 by 16.

    Raises:
        ConfigurationError: If n < 1
        DivergenceError: If the comparison terms make the mode run away
    """
    problem = reheating_problem(k, rp, ip)
    result = run_ensemble(problem, n, master_seed, runner, seed_prefix=tuple(stream))
    squares = np.sum(result.final_states[:, :2] ** 2, axis=1)
    stderr = float(np.std(squares, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return FluctuationEstimate(k=k, mean_square=float(squares.mean()), stderr=stderr, n=n)


def power_spectrum(
    k_grid: Sequence[float],
    rp: ReheatingParams,
    ip: InflationParams,
    n: int,
    master_seed: int,
    runner: Optional[EnsembleRunner] = None,
) -> SpectrumResult:
    """
    P(k) = k^3 / (2 pi^2) <|phi_k|^2> on a wavenumber grid.

    Mode j uses the seed stream derive_seed(master_seed, j, i).

    Raises:
        ConfigurationError: If the grid spans less than two decades
    """
    ks = [float(k) for k in k_grid]
    if len(ks) < 2:
        raise ConfigurationError("A spectrum needs at least two wavenumbers")
    for k in ks:
        _check_wavenumber(k)
    if max(ks) / min(ks) < MIN_K_SPAN:
        raise ConfigurationError(
            f"Wavenumber grid spans {max(ks) / min(ks):.3g}, needs at least {MIN_K_SPAN:g}"
        )

    logger.info(f"[SPECTRUM] {len(ks)} modes, n={n} each, seed={master_seed}")
    power, errors = [], []
    for index, k in enumerate(ks):
        estimate = reheating_langevin(k, rp, ip, n, master_seed, runner, stream=(index,))
        scale = k**3 / (2.0 * math.pi**2)
        power.append(scale * estimate.mean_square)
        errors.append(scale * estimate.stderr)
        logger.debug(f"[SPECTRUM] k={k:g} P={power[-1]:.4g}±{errors[-1]:.2g}")

    reference = standard_spectrum(ip.hubble) if ip.hubble > 0 else 0.0
    warnings: list[str] = []
    if rp.include_memory:
        warnings.append("Retarded memory included; the spectrum is no longer scale free")
    return SpectrumResult(k=ks, power=power, stderr=errors, reference=reference, warnings=warnings)
