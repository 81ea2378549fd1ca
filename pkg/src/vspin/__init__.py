"""Spin Hamiltonian, spectroscopy and optical-pumping toolkit for vanadium in SiC.

The electronic Kramers doublet (effective S = 1/2) couples to the 51V
nuclear spin (I = 7/2), giving 16 levels per orbital manifold.  Energies
are in MHz, fields in mT, rates in 1/s.
"""

from .constants import DEFAULT_CONSTANTS, PhysicalConstants, wavelength_to_MHz
from .errors import VSpinError
from .hamiltonian import (DefectModel, EigenSystem, ManifoldParams, build_manifold_hamiltonian, eigensystem,
                          field_sweep, solve_manifold, zeeman_splitting)
from .presets import PRESET_NAMES, make_preset
from .spectra import (FAMILIES, Transition, TransitionPair, TwoLaserMap, TwoLaserMapSynthesizer,
                      enumerate_transitions, pi_doublet_positions, synthesize_two_laser_map, transition_pairs)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONSTANTS", "FAMILIES", "PRESET_NAMES", "DefectModel", "EigenSystem", "ManifoldParams",
    "PhysicalConstants", "Transition", "TransitionPair", "TwoLaserMap", "TwoLaserMapSynthesizer", "VSpinError",
    "build_manifold_hamiltonian", "eigensystem", "enumerate_transitions", "field_sweep", "make_preset",
    "pi_doublet_positions", "solve_manifold", "synthesize_two_laser_map", "transition_pairs",
    "wavelength_to_MHz", "zeeman_splitting",
]
