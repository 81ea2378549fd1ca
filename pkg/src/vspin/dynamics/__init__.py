"""Optically driven population dynamics of single defects and ensembles."""

from .ensemble import (EnsembleModel, HoleBurningResult, PLESpectrum, absorption_spectrum, depletion_vs_field,
                       optical_splittings, simulate_hole_burning, simulate_ple_sweep)
from .rates import (LEVELS, Drive, LevelSystem, RateParams, build_rate_matrix, evolve, evolve_adaptive, expm,
                    fluorescence_vector, propagators)
from .sequences import (PulseSequence, RecoveryCurve, Segment, SequenceResult, depletion_recovery_scan,
                        default_recovery_delays, simulate_sequence, standard_recovery_sequence)

__all__ = [
    "LEVELS", "Drive", "EnsembleModel", "HoleBurningResult", "LevelSystem", "PLESpectrum", "PulseSequence",
    "RateParams", "RecoveryCurve", "Segment", "SequenceResult", "absorption_spectrum", "build_rate_matrix",
    "depletion_recovery_scan", "depletion_vs_field", "evolve", "evolve_adaptive", "expm", "fluorescence_vector",
    "optical_splittings", "propagators", "simulate_hole_burning", "simulate_ple_sweep", "simulate_sequence",
    "standard_recovery_sequence", "default_recovery_delays",
]
