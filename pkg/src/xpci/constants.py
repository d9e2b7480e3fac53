"""Physical constants (CODATA 2018; h, c and e are exact in the 2019 SI)."""
import math

SPEED_OF_LIGHT = 299_792_458.0          # m/s
PLANCK = 6.626_070_15e-34               # J s
ELEMENTARY_CHARGE = 1.602_176_634e-19   # C
HBAR = PLANCK / (2 * math.pi)

# lambda[m] = HC_KEV_M / E[keV]
HC_KEV_M = PLANCK * SPEED_OF_LIGHT / ELEMENTARY_CHARGE * 1e-3


def wavelength_from_kev(energy_kev):
    if energy_kev <= 0:
        raise ValueError("photon energy must be positive")
    return HC_KEV_M / energy_kev


def kev_from_wavelength(wavelength):
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return HC_KEV_M / wavelength


def photon_energy(omega):
    """E = hbar * omega, in joules."""
    return HBAR * omega
