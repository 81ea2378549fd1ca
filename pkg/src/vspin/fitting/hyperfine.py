"""Excited-state hyperfine and g-factor from two-laser map features.

A feature is one resonance observed in a map: a field, a two-photon
detuning and the family of the transition pair.  Features synthesized
from a model also carry the pair's label key, which pins each feature to
one model pair; unkeyed features are matched to the nearest model pair of
their family.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..constants import DEFAULT_CONSTANTS
from ..errors import ArityError, InvalidParameterError
from ..hamiltonian import DefectModel, solve_manifold
from ..spectra import (FAMILIES, LAMBDA, MIN_LABEL_CONFIDENCE, PI, STRENGTH_FLOOR, V, _classify_table,
                       _TransitionTable)
from .engine import FitResult, covariance_from_jacobian, least_squares, numeric_jacobian

log = logging.getLogger(__name__)

PARAMETERS = ("A_xz", "A_zz", "g_e")
UNITS = {"A_xz": "MHz", "A_zz": "MHz", "g_e": ""}
DEFAULT_FEATURE_FIELDS = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 150.0, 300.0, 490.0)
N_STARTS = 8
# Singular values of the column-normalized Jacobian below this fraction of
# the largest mark a direction the features barely resolve.  High-field Pi
# detunings see A_xz and A_zz almost only through sqrt(A_xz^2 + A_zz^2)
# (ratio ~0.05); sets with low-field Lambda/V features sit above 0.2.
IDENTIFIABILITY_RTOL = 0.1


class RankDeficiencyWarning(UserWarning):
    """Feature set does not determine every fitted parameter."""


@dataclass(frozen=True)
class HyperfineFeature:
    field: float
    detuning: float
    family: str
    key: tuple = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameterError(f"unknown family {self.family!r}")
        if not np.isfinite(self.field) or not np.isfinite(self.detuning):
            raise InvalidParameterError("feature field and detuning must be finite")


def _transition_keys(tab):
    return [(bool(gu), float(gn), bool(eu), float(en))
            for gu, gn, eu, en in zip(tab.gs_up, tab.gs_nuclear, tab.es_up, tab.es_nuclear)]


def synthesize_features(model, fields=DEFAULT_FEATURE_FIELDS, families=(LAMBDA, V, PI), per_field=4,
                        c=DEFAULT_CONSTANTS, min_confidence=MIN_LABEL_CONFIDENCE, noise=0.0, seed=0):
    """Pick well-labelled, strong pairs of ``model`` as fit features.

    At each field the ``per_field`` strongest pairs (per family) whose two
    transitions carry unique, confident labels are kept.  Optional Gaussian
    ``noise`` (MHz) is added to the detunings.
    """
    rng = np.random.default_rng(seed)
    out = []
    for B in fields:
        tab = _table(model.ground, model.excited, B, c)
        keys = _transition_keys(tab)
        counts = {}
        for k in keys:
            counts[k] = counts.get(k, 0) + 1
        i, j, code = _classify_table(tab, min_confidence)
        amp = tab.strength[i] * tab.strength[j]
        for fam in families:
            sel = np.nonzero(code == FAMILIES.index(fam))[0]
            sel = sel[np.argsort(-amp[sel], kind="stable")]
            taken = 0
            for s in sel:
                a, b = i[s], j[s]
                if counts[keys[a]] > 1 or counts[keys[b]] > 1:
                    continue
                if min(tab.confidence[a], tab.confidence[b]) < min_confidence:
                    continue
                d = abs(tab.frequency[a] - tab.frequency[b])
                if d < 1.0:
                    continue
                out.append(HyperfineFeature(float(B), float(d), fam, (keys[a], keys[b])))
                taken += 1
                if taken == per_field:
                    break
    if noise:
        out = [HyperfineFeature(f.field, f.detuning + noise * rng.standard_normal(), f.family, f.key)
               for f in out]
    return out


def _table(ground, excited, B, c):
    gs = solve_manifold(ground, B, c)
    es = solve_manifold(excited, B, c)
    return _TransitionTable(gs, es, 0.0, STRENGTH_FLOOR)


def excited_with(excited, A_xz, A_zz, g_e):
    """Copy of ``excited`` with the fitted tensor entries replaced."""
    A = np.array(excited.A_tensor, dtype=float)
    A[0, 2] = A[2, 0] = A_xz
    A[2, 2] = A_zz
    g = np.array(excited.g_tensor, dtype=float)
    g[2, 2] = g_e
    return excited.replace(A_tensor=A, g_tensor=g)


def _split_initial(initial):
    if isinstance(initial, DefectModel):
        return initial.ground, initial.excited
    ground, excited = initial
    return ground, excited


class _FeatureModel:
    """Predicts feature detunings for trial excited-state parameters."""

    def __init__(self, features, ground, excited, c, min_confidence):
        self.features = list(features)
        self.ground, self.excited, self.c = ground, excited, c
        self.min_confidence = min_confidence
        self.fields = sorted({f.field for f in self.features})
        self._gs = {B: solve_manifold(ground, B, c) for B in self.fields}

    def __call__(self, theta):
        exc = excited_with(self.excited, *theta)
        pred = np.empty(len(self.features))
        cache = {}
        for B in self.fields:
            es = solve_manifold(exc, B, self.c)
            cache[B] = _TransitionTable(self._gs[B], es, 0.0, STRENGTH_FLOOR)
        lookups, pairs = {}, {}
        for n, f in enumerate(self.features):
            tab = cache[f.field]
            freq = None
            if f.key is not None:
                if f.field not in lookups:
                    lookup = {}
                    for k, fr, s in zip(_transition_keys(tab), tab.frequency, tab.strength):
                        if k not in lookup or s > lookup[k][1]:
                            lookup[k] = (fr, s)
                    lookups[f.field] = lookup
                lk = lookups[f.field]
                k1, k2 = (tuple(k) for k in f.key)
                if k1 in lk and k2 in lk:
                    freq = abs(lk[k1][0] - lk[k2][0])
            if freq is None:
                if (f.field, f.family) not in pairs:
                    i, j, code = _classify_table(tab, self.min_confidence)
                    sel = code == FAMILIES.index(f.family)
                    pairs[(f.field, f.family)] = np.abs(tab.frequency[i[sel]] - tab.frequency[j[sel]])
                cand = pairs[(f.field, f.family)]
                freq = cand[np.argmin(np.abs(cand - f.detuning))] if cand.size else 0.0
            pred[n] = freq
        return pred


def identifiability(J, names=PARAMETERS, rtol=IDENTIFIABILITY_RTOL):
    """Names of parameters involved in poorly resolved Jacobian directions."""
    scale = np.sqrt(np.sum(J ** 2, axis=0))
    weak = [names[k] for k in np.nonzero(scale == 0)[0]]
    scale[scale == 0] = 1.0
    _, s, vt = np.linalg.svd(J / scale, full_matrices=False)
    for sv, v in zip(s, vt):
        if sv < rtol * s[0]:
            weak.extend(names[k] for k in np.nonzero(np.abs(v) > 0.3)[0])
    return sorted(set(weak), key=list(names).index)


def fit_hyperfine_from_map(features, initial, c=DEFAULT_CONSTANTS, n_starts=N_STARTS, start_spread=0.2,
                           tolerance=1.0, min_confidence=MIN_LABEL_CONFIDENCE, seed=0):
    """Fit ``A_xz``, ``A_zz`` and ``g_e`` of the excited state to map features.

    Parameters
    ----------
    features : sequence of HyperfineFeature
    initial : DefectModel or (ground, excited) ManifoldParams
        Starting point; the ground state is held fixed.
    n_starts : int
        Starts tried when the first one leaves an RMS residual above
        ``tolerance`` MHz.  Extra starts scatter the initial values by
        ``start_spread`` (relative), reproducibly from ``seed``.

    Returns
    -------
    FitResult
        Parameters ``A_xz``, ``A_zz`` (MHz) and ``g_e``.  Poorly determined
        parameters are listed as ``unidentifiable:<name>`` flags and a
        :class:`RankDeficiencyWarning` is emitted.
    """
    features = list(features)
    if len(features) < 10:
        raise ArityError(f"need at least 10 features, got {len(features)}")
    ground, excited = _split_initial(initial)
    fm = _FeatureModel(features, ground, excited, c, min_confidence)
    data = np.array([f.detuning for f in features])
    start = np.array([excited.A_tensor[0, 2], excited.A_tensor[2, 2], excited.g_tensor[2, 2]])
    rng = np.random.default_rng(seed)
    starts = [start] + [start * (1 + start_spread * rng.uniform(-1, 1, 3)) for _ in range(max(0, n_starts - 1))]

    best, evals = None, 0
    for s in starts:
        res = least_squares(fm, dict(zip(PARAMETERS, s)), data, bounds={"g_e": (0, None)},
                            simplex=False, units=UNITS)
        evals += res.evaluations
        if best is None or res.residual_norm < best.residual_norm:
            best = res
        if best.residual_norm / np.sqrt(data.size) <= tolerance:
            break

    theta = np.array([best.parameters[k] for k in PARAMETERS])
    J = numeric_jacobian(lambda t: fm(t), theta)
    weak = identifiability(J)
    flags = tuple(f for f in best.flags if f != "rank-deficient")
    if weak:
        flags += tuple(f"unidentifiable:{n}" for n in weak)
        warnings.warn(f"feature set does not determine {', '.join(weak)}", RankDeficiencyWarning)
    cov, full = covariance_from_jacobian(J, fm(theta) - data)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None)) if full else np.full(3, np.nan)
    for k, n in enumerate(PARAMETERS):
        if n in weak:
            sig[k] = np.nan
    converged = best.converged or (full and "rank-deficient" in best.flags and not weak)
    return FitResult(dict(best.parameters), dict(zip(PARAMETERS, map(float, sig))), UNITS, best.residual_norm,
                     bool(converged and not weak), evals, best.iterations, flags, cov)


class HyperfineMapFit(RegressorMixin, BaseEstimator):
    """Estimator form: ``X`` rows are ``(field_mT, family_index)``, ``y`` the detunings.

    ``keys`` optionally supplies per-row label keys.
    """

    def __init__(self, initial=None, n_starts=N_STARTS, constants=DEFAULT_CONSTANTS):
        self.initial = initial
        self.n_starts = n_starts
        self.constants = constants

    def _features(self, X, y=None, keys=None):
        X = np.asarray(X, dtype=float)
        y = np.zeros(len(X)) if y is None else np.asarray(y, dtype=float)
        keys = [None] * len(X) if keys is None else keys
        return [HyperfineFeature(float(b), float(d), FAMILIES[int(f)], k) for (b, f), d, k in zip(X, y, keys)]

    def fit(self, X, y, keys=None):
        from ..presets import make_preset
        init = make_preset("4H-alpha") if self.initial is None else self.initial
        self.features_ = self._features(X, y, keys)
        self.result_ = fit_hyperfine_from_map(self.features_, init, self.constants, self.n_starts)
        ground, excited = _split_initial(init)
        self.model_ = (ground, excited_with(excited, *(self.result_.parameters[k] for k in PARAMETERS)))
        self.n_features_in_ = 2
        return self

    def predict(self, X, keys=None):
        feats = self._features(X, None, keys)
        fm = _FeatureModel(feats, self.model_[0], self.model_[1], self.constants, MIN_LABEL_CONFIDENCE)
        return fm([self.result_.parameters[k] for k in PARAMETERS])
