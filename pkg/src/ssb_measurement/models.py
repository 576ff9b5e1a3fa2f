"""
Data models for the simulation library: parameters and JSON-friendly results
"""
import math
from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Readout(str, Enum):
    """
    Outcome of a single meter.

    Intent:
    Makes the three possible meter readings explicit instead of encoding
    them as loose integers. `value` gives the signed number used in
    correlation products; an undecided meter contributes nothing.
    """

    PLUS = "+1"
    MINUS = "-1"
    UNDECIDED = "undecided"

    @property
    def value_int(self) -> int:
        return {Readout.PLUS: 1, Readout.MINUS: -1, Readout.UNDECIDED: 0}[self]

    @classmethod
    def from_int(cls, value: int) -> "Readout":
        if value > 0:
            return cls.PLUS
        if value < 0:
            return cls.MINUS
        return cls.UNDECIDED


class ApparatusParams(BaseModel):
    """
    Coefficients of one measurement apparatus.

    Intent:
    Describes the meter's double well (gamma, lam), its coupling to the spin
    (mu, field), the white bath noise (epsilon) and the bath acting on the
    spin (temperature, transition_rate, dephasing_rate, omega). Natural units
    with hbar = k_B = 1.

    Key design decisions:
    - The field is a plain 3-vector; its length is the field strength and its
      direction is the spin quantization axis used by the master equation
    - `effective_variance` overrides the variance entering the erf readout
      probability; by default it is epsilon / (2 gamma)
    - Frozen so one instance can be shared by every worker
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    gamma: float = Field(default=1.0, gt=0, description="Linear instability rate")
    lam: float = Field(default=6.0, gt=0, description="Quartic coupling of the double well")
    mu: float = Field(default=1.0, ge=0, description="Spin-meter coupling")
    epsilon: float = Field(default=0.01, ge=0, description="White bath noise variance density")
    field: tuple[float, float, float] = Field(
        default=(0.0, 0.0, 1.0), description="Applied magnetic field"
    )
    omega: float = Field(default=0.0, description="Larmor frequency")
    temperature: float = Field(default=1.0, gt=0, description="Bath temperature kT")
    transition_rate: float = Field(default=0.0, ge=0, description="Bare spin transition rate b0")
    dephasing_rate: float = Field(default=0.0, ge=0, description="Dephasing rate c0")
    time_scale_prefactor: float = Field(
        default=1.0, gt=0, description="Prefactor g of the measurement-time estimate"
    )
    effective_variance: Optional[float] = Field(
        default=None, gt=0, description="Override for the variance in the erf readout formula"
    )

    @property
    def field_vector(self) -> np.ndarray:
        return np.asarray(self.field, dtype=float)

    @property
    def field_strength(self) -> float:
        return float(np.linalg.norm(self.field_vector))

    @property
    def field_axis(self) -> np.ndarray:
        """Unit vector along the field; z when the field vanishes."""
        strength = self.field_strength
        if strength == 0.0:
            return np.array([0.0, 0.0, 1.0])
        return self.field_vector / strength

    @property
    def phi_plus(self) -> float:
        return math.sqrt(6.0 * self.gamma / self.lam)

    @property
    def readout_variance(self) -> float:
        if self.effective_variance is not None:
            return self.effective_variance
        return self.epsilon / (2.0 * self.gamma)

    def with_field(self, field: Any) -> "ApparatusParams":
        return self.model_copy(update={"field": tuple(float(c) for c in field)})


class InflationParams(BaseModel):
    """
    De Sitter background in conformal time, a(eta) = -1/(H eta).

    A Hubble rate of zero selects the pump-off limit (flat space, a = 1).
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    hubble: float = Field(default=1.0, ge=0, description="Constant Hubble rate H")
    eta_start: float = Field(default=-1000.0, description="Start of the conformal window")
    eta_end: float = Field(default=-0.1, description="End of the conformal window")

    @model_validator(mode="after")
    def check_window(self) -> "InflationParams":
        if not self.eta_start < self.eta_end < 0:
            raise ValueError("Conformal window must satisfy eta_start < eta_end < 0")
        return self

    def scale_factor(self, eta: float) -> float:
        if self.hubble == 0.0:
            return 1.0
        return -1.0 / (self.hubble * eta)


class ReheatingParams(BaseModel):
    """
    Parameters of the reheating-era Langevin equation for one mode.

    Intent:
    Carries the quartic coupling, the order-parameter amplitude phi0 and the
    duration of the reheating window, plus the integration grid and the
    switches for the comparison terms (potential curvature and retarded
    memory) that the reduced equation drops.

    `correlation_time` is the time over which the stochastic force stays
    correlated; by default the whole window.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    lam: float = Field(default=0.5, ge=0, description="Quartic coupling")
    phi0: float = Field(default=10.0, description="Order-parameter amplitude at reheating")
    duration: float = Field(default=0.2, gt=0, description="Reheating time scale delta_t")
    steps: int = Field(default=400, ge=10, description="Integrator steps across the window")
    crossing_ratio: float = Field(
        default=1.0, gt=0, description="k/(aH) at which the mode is evaluated"
    )
    correlation_time: Optional[float] = Field(
        default=None, gt=0, description="Force correlation time (default: duration)"
    )
    include_potential: bool = Field(default=False, description="Add the -V' restoring force")
    include_memory: bool = Field(default=False, description="Add the retarded memory term")

    @property
    def force_correlation_time(self) -> float:
        return self.correlation_time if self.correlation_time is not None else self.duration

    @property
    def dt(self) -> float:
        return self.duration / self.steps

    @classmethod
    def from_rollover(
        cls, lam: float, phi0: float, phi0_dot: float, **overrides: Any
    ) -> "ReheatingParams":
        """Window set by the roll-over time phi0 / phi0_dot."""
        if phi0_dot == 0:
            raise ValueError("phi0_dot must be non-zero")
        return cls(lam=lam, phi0=phi0, duration=abs(phi0 / phi0_dot), **overrides)

    @classmethod
    def from_energy_balance(cls, lam: float, phi0: float, **overrides: Any) -> "ReheatingParams":
        """
        Roll-over window for a field that has converted its quartic energy
        lam phi0^4 / 4 into kinetic energy, so the potential at phi0 is negligible.
        """
        phi0_dot = math.sqrt(lam / 2.0) * phi0**2
        return cls.from_rollover(lam, phi0, phi0_dot, **overrides)


class MeasurementSummary(BaseModel):
    """Readout statistics of a single-apparatus ensemble."""

    n: int
    p_plus: float
    p_minus: float
    p_undecided: float
    stderr: float = Field(description="Standard error of p_plus")
    median_decision_time: Optional[float] = None
    up_population_given_plus: Optional[float] = None
    up_population_given_minus: Optional[float] = None
    warnings: list[str] = Field(default_factory=list)


class CorrelationEstimate(BaseModel):
    """
    Monte Carlo estimate of the readout-product mean for one field configuration.

    Undecided trials are excluded from the mean and counted separately.
    """

    label: str = ""
    correlation: float
    stderr: float
    n_decided: int
    n_undecided: int
    marginal_plus: tuple[float, float] = Field(
        description="Fraction of decided trials reading +1 at each detector"
    )
    warnings: list[str] = Field(default_factory=list)

    @property
    def undecided_fraction(self) -> float:
        total = self.n_decided + self.n_undecided
        return self.n_undecided / total if total else 0.0


class ChshResult(BaseModel):
    """
    CHSH combination of four correlation estimates.

    `estimates` are ordered (B1, B2), (B1', B2), (B1, B2'), (B1', B2');
    `violation` is true only when the statistic exceeds 2 by more than three
    standard errors.
    """

    estimates: list[CorrelationEstimate]
    statistic: float
    stderr: float
    violation: bool
    oracle_statistic: Optional[float] = None
    warnings: list[str] = Field(default_factory=list)

    @field_validator("estimates")
    @classmethod
    def validate_estimates(cls, v: list[CorrelationEstimate]) -> list[CorrelationEstimate]:
        if len(v) != 4:
            raise ValueError("CHSH needs exactly four correlation estimates")
        return v


class SpectrumResult(BaseModel):
    """Power per logarithmic wavenumber interval on a k grid, with (H/2pi)^2 as reference."""

    k: list[float]
    power: list[float]
    stderr: list[float]
    reference: float
    warnings: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_lengths(self) -> "SpectrumResult":
        if not len(self.k) == len(self.power) == len(self.stderr):
            raise ValueError("k, power and stderr must have the same length")
        if any(p < 0 for p in self.power):
            raise ValueError("Power estimates must be non-negative")
        return self
