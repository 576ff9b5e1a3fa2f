"""
Finite-volume Fokker-Planck solver for the meter distribution.

Solves dP/dt = -d/dphi[(gamma phi - lam phi^3/6 + bias) P] + (eps/2) d^2P/dphi^2
on a symmetric cell-centered grid with Scharfetter-Gummel fluxes and
zero-flux walls. The fluxes telescope, so total mass is conserved to
roundoff, and the explicit step is bounded so the update matrix stays
non-negative.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import DomainError, StepSizeError
from .models import ApparatusParams

logger = logging.getLogger(__name__)

DEFAULT_CELLS = 801
WELL_SPAN = 3.0
OU_SPAN = 8.0
INITIAL_WIDTH_CELLS = 2.0
STABILITY_FACTOR = 0.9
NEGATIVE_DENSITY_FLOOR = -1e-8


class DriftShape(BaseModel):
    """
    Drift and diffusion of the one-dimensional meter equation.

    Unlike ApparatusParams the linear rate may be negative, which turns the
    double well into a stable Ornstein-Uhlenbeck well when lam = 0.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    gamma: float
    lam: float = Field(default=0.0, ge=0)
    epsilon: float = Field(gt=0)

    @classmethod
    def from_apparatus(cls, p: ApparatusParams) -> "DriftShape":
        if p.epsilon <= 0:
            raise DomainError("The Fokker-Planck solver needs epsilon > 0")
        return cls(gamma=p.gamma, lam=p.lam, epsilon=p.epsilon)

    @property
    def diffusion(self) -> float:
        return self.epsilon / 2.0

    def drift(self, phi: np.ndarray, bias: float) -> np.ndarray:
        return self.gamma * phi - (self.lam / 6.0) * phi**3 + bias

    def natural_half_width(self) -> float:
        """Grid half width: 3 phi_plus for a double well, 8 stationary deviations for OU."""
        if self.lam > 0 and self.gamma > 0:
            return WELL_SPAN * math.sqrt(6.0 * self.gamma / self.lam)
        if self.lam == 0 and self.gamma < 0:
            return OU_SPAN * math.sqrt(self.epsilon / (2.0 * abs(self.gamma)))
        raise DomainError("No natural grid for this drift; pass half_width explicitly")


@dataclass
class PhiDistribution:
    """Probability density of phi on a uniform cell-centered grid."""

    grid: np.ndarray
    density: np.ndarray
    time: float

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.dx)

    def probability_positive(self) -> float:
        """Mass on phi > 0; the cell centered at zero contributes half."""
        positive = self.density[self.grid > 0].sum()
        center = self.density[self.grid == 0].sum()
        return float((positive + center / 2.0) * self.dx)

    @property
    def mean(self) -> float:
        return float(np.sum(self.grid * self.density) * self.dx)

    @property
    def variance(self) -> float:
        return float(np.sum((self.grid - self.mean) ** 2 * self.density) * self.dx)

    def median(self) -> float:
        cumulative = np.cumsum(self.density) * self.dx
        edges = self.grid + self.dx / 2
        return float(np.interp(0.5 * cumulative[-1], cumulative, edges))


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """z / (exp(z) - 1), equal to 1 at z = 0."""
    out = np.ones_like(z)
    nonzero = z != 0
    with np.errstate(over="ignore"):
        out[nonzero] = z[nonzero] / np.expm1(z[nonzero])
    return out


def fokker_planck_solve(
    p: Union[ApparatusParams, DriftShape],
    bias: float,
    t: float,
    *,
    cells: int = DEFAULT_CELLS,
    half_width: Optional[float] = None,
) -> PhiDistribution:
    """
    Evolve a narrow Gaussian at phi = 0 to time ``t``.

    Args:
        p: Apparatus (gamma, lam, epsilon are used) or a bare DriftShape
        bias: Constant added to the drift, e.g. mu <S.B>
        t: Final time (>= 0)
        cells: Number of grid cells; odd counts put a cell center at zero
        half_width: Grid covers [-half_width, half_width]; default 3 phi_plus

    Raises:
        DomainError: On t < 0, too few cells or epsilon = 0
        StepSizeError: If the density turns negative beyond 1e-8
    """
    shape = p if isinstance(p, DriftShape) else DriftShape.from_apparatus(p)
    if t < 0:
        raise DomainError(f"Time must be non-negative, got {t}")
    if cells < 11:
        raise DomainError(f"Need at least 11 cells, got {cells}")

    width = half_width if half_width is not None else shape.natural_half_width()
    dx = 2.0 * width / cells
    offsets = np.arange(cells) - (cells - 1) / 2.0
    grid = offsets * dx
    faces = (offsets[:-1] + 0.5) * dx

    sigma0 = INITIAL_WIDTH_CELLS * dx
    density = np.exp(-0.5 * (grid / sigma0) ** 2)
    density /= density.sum() * dx

    diffusion = shape.diffusion
    peclet = shape.drift(faces, bias) * dx / diffusion
    # face flux J = (D/dx) (forward P_i - backward P_{i+1})
    forward = diffusion / dx * _bernoulli(-peclet)
    backward = diffusion / dx * _bernoulli(peclet)

    outflow = np.zeros(cells)
    outflow[:-1] += forward / dx
    outflow[1:] += backward / dx
    max_rate = float(outflow.max())
    n_steps = max(1, math.ceil(t * max_rate / STABILITY_FACTOR)) if t > 0 else 0
    dt = t / n_steps if n_steps else 0.0
    logger.debug(f"[FOKKER-PLANCK] cells={cells} dx={dx:.3g} steps={n_steps} dt={dt:.3g}")

    flux = np.empty(cells + 1)
    flux[0] = flux[-1] = 0.0
    for step in range(n_steps):
        flux[1:-1] = forward * density[:-1] - backward * density[1:]
        density = density - dt / dx * (flux[1:] - flux[:-1])
        lowest = float(density.min())
        if lowest < NEGATIVE_DENSITY_FLOOR:
            raise StepSizeError(
                f"Fokker-Planck density turned negative ({lowest:.3g}) at t={(step + 1) * dt:.4g}"
            )

    return PhiDistribution(grid=grid, density=density, time=t)
