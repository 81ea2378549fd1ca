"""Defect parameter presets.

This module is the single place where the tabulated site parameters live.
Ground-state values are literature values; the 4H excited-state hyperfine
values come from two-laser spectroscopy.  The sign of the 6H excited-state
hyperfine entries is taken as printed and has not been verified.
"""

import numpy as np

from .constants import wavelength_to_MHz
from .errors import ConfigError
from .hamiltonian import GN_VANADIUM_51, DefectModel, ManifoldParams

ZPL_WAVELENGTH_NM = {
    "4H-alpha": 1278.78,
    "6H-alpha": 1308.56,
}

# (g_xx = g_yy, g_zz), (A_xx, A_yy, A_zz) / MHz
GROUND_G = {"4H-alpha": (0.0, 1.748), "6H-alpha": (0.0, 1.749)}
GROUND_A = {"4H-alpha": (165.0, -165.0, 232.0), "6H-alpha": (165.0, -165.0, 232.0)}

# g_zz, (A_xz, A_zz) / MHz; transverse g and A_xx, A_yy are not tabulated -> 0
EXCITED_G = {"4H-alpha": 2.18, "6H-alpha": 2.24}
EXCITED_A = {"4H-alpha": (75.0, -213.0), "6H-alpha": (20.0, 200.0)}


def excited_hyperfine_tensor(A_xz, A_zz, A_xx=0.0, A_yy=0.0):
    return np.array([[A_xx, 0.0, A_xz],
                     [0.0, A_yy, 0.0],
                     [A_xz, 0.0, A_zz]])


def axial_g(g_perp, g_par):
    return np.diag([g_perp, g_perp, g_par])


def make_preset(name, g_N=GN_VANADIUM_51, ground_g_perp=None):
    """Build a named :class:`DefectModel`.

    Parameters
    ----------
    name : {"4H-alpha", "6H-alpha"}
    g_N : float
        Nuclear g-factor of 51V.
    ground_g_perp : float, optional
        Override for the transverse ground-state g-factor (default 0).
    """
    if name not in ZPL_WAVELENGTH_NM:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(ZPL_WAVELENGTH_NM)}")
    g_perp, g_par = GROUND_G[name]
    if ground_g_perp is not None:
        g_perp = ground_g_perp
    ground = ManifoldParams(axial_g(g_perp, g_par), np.diag(GROUND_A[name]), g_N)
    excited = ManifoldParams(axial_g(0.0, EXCITED_G[name]),
                             excited_hyperfine_tensor(*EXCITED_A[name]), g_N)
    return DefectModel(name, ground, excited, wavelength_to_MHz(ZPL_WAVELENGTH_NM[name]))


PRESET_NAMES = tuple(ZPL_WAVELENGTH_NM)
