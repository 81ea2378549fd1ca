from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class PhysicalConstants:
    """Conversion factors, all expressed as frequencies (energy / h).

    Attributes
    ----------
    mu_B_over_h : float
        Bohr magneton in MHz/mT.
    mu_N_over_h : float
        Nuclear magneton in MHz/mT.
    k_B_over_h : float
        Boltzmann constant in GHz/K.
    """

    mu_B_over_h: float = 13.9962449
    mu_N_over_h: float = 0.00762259
    k_B_over_h: float = 20.836619

    def __post_init__(self):
        for name in ("mu_B_over_h", "mu_N_over_h", "k_B_over_h"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterError(f"{name} must be finite and > 0, got {value!r}")

    @property
    def k_B_MHz_per_K(self):
        return self.k_B_over_h * 1e3


DEFAULT_CONSTANTS = PhysicalConstants()

# speed of light, m/s (exact)
SPEED_OF_LIGHT = 299_792_458.0


def wavelength_to_MHz(wavelength_nm):
    """Vacuum wavelength in nm to optical frequency in MHz."""
    return SPEED_OF_LIGHT / (wavelength_nm * 1e-9) / 1e6
