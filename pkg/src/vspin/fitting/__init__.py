"""Least-squares engine and the domain fitters built on it."""

from .curves import (BiexponentialRecovery, LineshapeTemplate, LorentzianDepletion, MonoExponentialRecovery,
                     PiSlopeGFactor, StretchedExponentialRecovery, ZeemanDoublet, doublet_model, fit_biexponential,
                     fit_lorentzian, fit_monoexponential, fit_stretched_exponential, fit_zeeman_doublet,
                     g_from_pi_slope, one_over_e_rate, spin_temperature)
from .engine import FitResult, least_squares
from .hyperfine import (HyperfineFeature, HyperfineMapFit, RankDeficiencyWarning, fit_hyperfine_from_map,
                        synthesize_features)

__all__ = [
    "BiexponentialRecovery", "FitResult", "HyperfineFeature", "HyperfineMapFit", "LineshapeTemplate",
    "LorentzianDepletion", "MonoExponentialRecovery", "PiSlopeGFactor", "RankDeficiencyWarning",
    "StretchedExponentialRecovery", "ZeemanDoublet", "doublet_model", "fit_biexponential", "fit_hyperfine_from_map",
    "fit_lorentzian", "fit_monoexponential", "fit_stretched_exponential", "fit_zeeman_doublet", "g_from_pi_slope",
    "least_squares", "one_over_e_rate", "spin_temperature", "synthesize_features",
]
