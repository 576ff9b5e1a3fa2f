"""
Order-of-magnitude astrophysical scales from fundamental constants.

Planets are bodies where gravity balances the electrostatic stiffness of
matter; stars are bodies hot enough at the centre to fuse protons. The
formulas are evaluated literally in SI units (k0 is the Coulomb constant).
"""
import math

from pydantic import BaseModel, ConfigDict
from scipy import constants

G = constants.G
HBAR = constants.hbar
ELEMENTARY_CHARGE = constants.e
COULOMB_CONSTANT = 1.0 / (4.0 * math.pi * constants.epsilon_0)
ELECTRON_MASS = constants.m_e
PROTON_MASS = constants.m_p
BOLTZMANN = constants.k
ELECTRON_VOLT = constants.electron_volt
# empirical prefactor of the stellar radius, in units of sqrt(eV)
STELLAR_RADIUS_PREFACTOR = 39.5

# Figures quoted alongside the formulas; the radius formulas evaluate sqrt(2) higher.
QUOTED_VALUES = {
    "planet_mass": 8.1e26,
    "planet_radius": 1.0e7,
    "star_mass": 2.3e31,
    "star_radius": 3.2e8,
    "fusion_temperature": 5.0e8,
}


class AstroEstimates(BaseModel):
    """SI values of the five characteristic scales."""

    model_config = ConfigDict(frozen=True)

    planet_mass: float
    planet_radius: float
    star_mass: float
    star_radius: float
    fusion_temperature: float


def astro_estimates() -> AstroEstimates:
    """
    Evaluate the planet, star and fusion-temperature scales.

    - planet mass   e^3 k0^(3/2) / (2 sqrt(2) G^(3/2) m_p^2)
    - planet radius hbar^2 / (3 sqrt(2 G k0) e m_e m_p)
    - star mass     e^3 k0^(3/2) / (8 G^(3/2) m_e^(3/2) m_p^(1/2))
    - star radius   39.5 sqrt(eV) hbar^3 / (e^3 sqrt(G) k0^(3/2) m_e^(3/2) m_p)
    - temperature   Coulomb energy at the proton Bohr radius over k_B,
      m_p k0^2 e^4 / (hbar^2 k_B)
    """
    e, k0 = ELEMENTARY_CHARGE, COULOMB_CONSTANT
    m_e, m_p = ELECTRON_MASS, PROTON_MASS

    planet_mass = e**3 * k0**1.5 / (2.0 * math.sqrt(2.0) * G**1.5 * m_p**2)
    planet_radius = HBAR**2 / (3.0 * math.sqrt(2.0 * G * k0) * e * m_e * m_p)
    star_mass = e**3 * k0**1.5 / (8.0 * G**1.5 * m_e**1.5 * m_p**0.5)
    star_radius = (
        STELLAR_RADIUS_PREFACTOR
        * math.sqrt(ELECTRON_VOLT)
        * HBAR**3
        / (e**3 * math.sqrt(G) * k0**1.5 * m_e**1.5 * m_p)
    )
    fusion_temperature = m_p * k0**2 * e**4 / (HBAR**2 * BOLTZMANN)

    return AstroEstimates(
        planet_mass=planet_mass,
        planet_radius=planet_radius,
        star_mass=star_mass,
        star_radius=star_radius,
        fusion_temperature=fusion_temperature,
    )
