"""Optical transitions, two-laser pair classification and map synthesis.

Optical strengths use an electron-spin selection model: the amplitude of a
ground -> excited transition is the overlap of the two eigenvectors (the
nuclear factor is carried along unchanged), and transitions whose electron
branch labels differ are scaled by ``spin_flip_weight``.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .constants import DEFAULT_CONSTANTS
from .errors import ContractViolationError
from .hamiltonian import UP, solve_manifold, zeeman_splitting
from .presets import make_preset
from .validation import as_column, check_fraction, check_grid, check_positive

log = logging.getLogger(__name__)

LAMBDA = "Lambda"
V = "V"
LAMBDA_STAR = "LambdaStar"
V_STAR = "VStar"
PI = "Pi"
X = "X"
OTHER = "Other"
FAMILIES = (LAMBDA, V, LAMBDA_STAR, V_STAR, PI, X, OTHER)

# bright (+1) / dark (-1) rendering of each family
FAMILY_SIGN = {LAMBDA: 1.0, LAMBDA_STAR: 1.0, PI: 1.0, X: 1.0, V: -1.0, V_STAR: -1.0, OTHER: 0.0}

DEFAULT_FIELD_AXIS = (0.0, 61.0)
DEFAULT_DETUNING_AXIS = (0.0, 1499.0)
DEFAULT_KERNEL_FWHM = 10.0
STRENGTH_FLOOR = 1e-6
MIN_LABEL_CONFIDENCE = 0.5
MERGE_TOL = 0.01


@dataclass(frozen=True)
class Transition:
    gs_index: int
    es_index: int
    frequency_offset: float
    strength: float
    gs_branch: str
    es_branch: str
    gs_nuclear: float
    es_nuclear: float
    confidence: float = 1.0

    @property
    def branch_conserving(self):
        return self.gs_branch == self.es_branch

    @property
    def nuclear_conserving(self):
        return self.gs_nuclear == self.es_nuclear

    def key(self):
        """Label-based identity that survives small parameter changes."""
        return (self.gs_branch, self.gs_nuclear, self.es_branch, self.es_nuclear)


@dataclass(frozen=True)
class TransitionPair:
    first: Transition
    second: Transition
    two_photon_detuning: float
    family: str
    signed_amplitude: float

    def key(self):
        return (self.family,) + tuple(sorted([self.first.key(), self.second.key()]))


@dataclass(frozen=True, eq=False)
class TwoLaserMap:
    """Normalized two-laser response over (field, two-photon detuning)."""

    field_axis: np.ndarray
    detuning_axis: np.ndarray
    intensity: np.ndarray
    kernel_fwhm: float

    def __post_init__(self):
        if self.intensity.shape != (self.field_axis.size, self.detuning_axis.size):
            raise ContractViolationError("intensity shape does not match the axes")


# ---------------------------------------------------------------------------
# transitions


class _TransitionTable:
    """Column-oriented transition list used by the vectorized paths."""

    def __init__(self, gs, es, weight, floor, zpl_shift=0.0):
        n_g, n_e = len(gs), len(es)
        if gs.states.shape[0] != es.states.shape[0]:
            raise ContractViolationError("ground and excited Hilbert dimensions differ")
        overlap = np.abs(es.states.conj().T @ gs.states) ** 2     # (n_e, n_g)
        g_up = np.array([b == UP for b in gs.electron_branch])
        e_up = np.array([b == UP for b in es.electron_branch])
        same = e_up[:, None] == g_up[None, :]
        strength = np.where(same, overlap, weight ** 2 * overlap)
        e_idx, g_idx = np.nonzero(strength >= floor)
        order = np.lexsort((e_idx, g_idx))
        self.gs_index = g_idx[order]
        self.es_index = e_idx[order]
        self.strength = strength[self.es_index, self.gs_index]
        self.frequency = es.energies[self.es_index] - gs.energies[self.gs_index] + zpl_shift
        self.gs_up = g_up[self.gs_index]
        self.es_up = e_up[self.es_index]
        self.gs_nuclear = gs.nuclear_label[self.gs_index]
        self.es_nuclear = es.nuclear_label[self.es_index]
        self.confidence = np.minimum(gs.nuclear_weight[self.gs_index], es.nuclear_weight[self.es_index])
        self.n_ground, self.n_excited = n_g, n_e

    def __len__(self):
        return self.gs_index.size

    def transitions(self):
        br = lambda up: UP if up else "down"
        return [
            Transition(int(g), int(e), float(f), float(s), br(gu), br(eu), float(gn), float(en), float(cf))
            for g, e, f, s, gu, eu, gn, en, cf in zip(
                self.gs_index, self.es_index, self.frequency, self.strength, self.gs_up,
                self.es_up, self.gs_nuclear, self.es_nuclear, self.confidence)
        ]


def _solve_pair(model, B, c, gs_prior=None, es_prior=None):
    return (solve_manifold(model.ground, B, c, gs_prior),
            solve_manifold(model.excited, B, c, es_prior))


def enumerate_transitions(model, B, c=DEFAULT_CONSTANTS, spin_flip_weight=0.0,
                          strength_floor=STRENGTH_FLOOR):
    """All ground -> excited optical transitions at field ``B``.

    Parameters
    ----------
    model : DefectModel
    B : float or (3,) array_like
        Field in mT; a scalar is along the c axis.
    spin_flip_weight : float in [0, 1]
        Relative amplitude of electron-branch-flipping transitions.
    strength_floor : float
        Transitions weaker than this are dropped.

    Returns
    -------
    list of Transition
        Sorted by ground index, then excited index.  ``frequency_offset`` is
        relative to the zero-phonon line, in MHz.
    """
    w = check_fraction(spin_flip_weight, "spin_flip_weight")
    gs, es = _solve_pair(model, B, c)
    return _TransitionTable(gs, es, w, strength_floor).transitions()


# ---------------------------------------------------------------------------
# pair classification


def classify_pair(t1, t2, min_confidence=0.0):
    """Assign a transition pair to its two-laser feature family.

    Pairs sharing an excited state are Lambda-type, pairs sharing a ground
    state are V-type; the starred variants join different electron branches.
    Pairs with no common state are Pi (two branch- and nuclear-conserving
    transitions of opposite branch and equal nuclear label) or X (nuclear
    conserving with at least one electron flip).  Everything else is Other.
    The result does not depend on argument order.  Pi/X need trustworthy
    nuclear labels: with ``min_confidence`` > 0 they fall back to Other when
    either transition's label confidence is lower.
    """
    shared_e = t1.es_index == t2.es_index
    shared_g = t1.gs_index == t2.gs_index
    if shared_e and shared_g:
        return OTHER
    if shared_e:
        return LAMBDA if t1.gs_branch == t2.gs_branch else LAMBDA_STAR
    if shared_g:
        return V if t1.es_branch == t2.es_branch else V_STAR
    same_label = (t1.nuclear_conserving and t2.nuclear_conserving
                  and t1.gs_nuclear == t2.gs_nuclear)
    if not same_label or min(t1.confidence, t2.confidence) < min_confidence:
        return OTHER
    if t1.branch_conserving and t2.branch_conserving:
        return PI if t1.gs_branch != t2.gs_branch else OTHER
    return X


_CODE = {name: i for i, name in enumerate(FAMILIES)}


def _classify_table(tab, min_confidence=MIN_LABEL_CONFIDENCE):
    """Vectorized :func:`classify_pair` over all pairs i < j of a table.

    Returns index arrays (i, j) and the family codes.  Pi and X depend on
    nuclear labels and are demoted to Other when either transition's label
    confidence is below ``min_confidence``.
    """
    i, j = np.triu_indices(len(tab), k=1)
    shared_e = tab.es_index[i] == tab.es_index[j]
    shared_g = tab.gs_index[i] == tab.gs_index[j]
    same_gb = tab.gs_up[i] == tab.gs_up[j]
    same_eb = tab.es_up[i] == tab.es_up[j]
    cons_i = tab.gs_up[i] == tab.es_up[i]
    cons_j = tab.gs_up[j] == tab.es_up[j]
    label = ((tab.gs_nuclear[i] == tab.es_nuclear[i]) & (tab.gs_nuclear[j] == tab.es_nuclear[j])
             & (tab.gs_nuclear[i] == tab.gs_nuclear[j]))
    confident = np.minimum(tab.confidence[i], tab.confidence[j]) >= min_confidence
    code = np.full(i.size, _CODE[OTHER])
    disjoint = ~shared_e & ~shared_g
    code[shared_e & ~shared_g & same_gb] = _CODE[LAMBDA]
    code[shared_e & ~shared_g & ~same_gb] = _CODE[LAMBDA_STAR]
    code[shared_g & ~shared_e & same_eb] = _CODE[V]
    code[shared_g & ~shared_e & ~same_eb] = _CODE[V_STAR]
    nuc = disjoint & label & confident
    code[nuc & cons_i & cons_j & ~same_gb] = _CODE[PI]
    code[nuc & ~(cons_i & cons_j)] = _CODE[X]
    return i, j, code


def transition_pairs(model, B, c=DEFAULT_CONSTANTS, spin_flip_weight=0.0,
                     min_confidence=MIN_LABEL_CONFIDENCE, families=None):
    """Classified transition pairs at field ``B`` as :class:`TransitionPair` objects."""
    w = check_fraction(spin_flip_weight, "spin_flip_weight")
    gs, es = _solve_pair(model, B, c)
    tab = _TransitionTable(gs, es, w, STRENGTH_FLOOR)
    trans = tab.transitions()
    i, j, code = _classify_table(tab, min_confidence)
    out = []
    for a, b, k in zip(i, j, code):
        fam = FAMILIES[k]
        if families is not None and fam not in families:
            continue
        t1, t2 = trans[a], trans[b]
        amp = FAMILY_SIGN[fam] * t1.strength * t2.strength
        out.append(TransitionPair(t1, t2, abs(t1.frequency_offset - t2.frequency_offset), fam, amp))
    return out


# ---------------------------------------------------------------------------
# map synthesis


def _cell_edges(grid):
    if grid.size == 1:
        return np.array([grid[0] - 0.5, grid[0] + 0.5])
    mid = (grid[1:] + grid[:-1]) / 2
    return np.concatenate([[2 * grid[0] - mid[0]], mid, [2 * grid[-1] - mid[-1]]])


def lorentzian_cell_kernel(centers, grid, fwhm):
    """Area-normalized Lorentzian averaged over each grid cell.

    Returns an array of shape ``(len(centers), len(grid))``.  Averaging over
    cells (instead of point sampling) gives the correct delta-function limit
    as ``fwhm -> 0``.
    """
    edges = _cell_edges(grid)
    gamma = fwhm / 2
    x = (edges[None, :] - np.asarray(centers)[:, None]) / gamma
    cdf = np.arctan(x)
    return (cdf[:, 1:] - cdf[:, :-1]) / (np.pi * np.diff(edges))[None, :]


def _map_row(model, B, detuning_grid, kernel_fwhm, c, spin_flip_weight, include_x,
             min_confidence, families):
    gs, es = _solve_pair(model, B, c)
    tab = _TransitionTable(gs, es, spin_flip_weight, STRENGTH_FLOOR)
    row = np.zeros(detuning_grid.size)
    if len(tab) == 0:
        log.warning("no optical transitions at B=%s mT; emitting a zero row", B)
        return row
    i, j, code = _classify_table(tab, min_confidence)
    sign = np.array([FAMILY_SIGN[f] for f in FAMILIES])[code]
    if not include_x:
        sign[code == _CODE[X]] = 0.0
    if families is not None:
        allowed = np.isin(code, [_CODE[f] for f in families])
        sign[~allowed] = 0.0
    detuning = np.abs(tab.frequency[i] - tab.frequency[j])
    keep = (sign != 0) & (detuning >= detuning_grid[0]) & (detuning <= detuning_grid[-1])
    if not np.any(keep):
        return row
    amp = sign[keep] * tab.strength[i[keep]] * tab.strength[j[keep]]
    kernel = lorentzian_cell_kernel(detuning[keep], detuning_grid, kernel_fwhm)
    return amp @ kernel


def _worker_count(n_jobs=None):
    env = os.environ.get("VSPIN_THREADS")
    cap = int(env) if env and env.strip().isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs or cap))


def synthesize_two_laser_map(model, field_grid=None, detuning_grid=None, kernel_fwhm=DEFAULT_KERNEL_FWHM,
                             c=DEFAULT_CONSTANTS, spin_flip_weight=0.0, include_x=False,
                             min_confidence=MIN_LABEL_CONFIDENCE, families=None, n_jobs=None):
    """Synthesize a two-laser detuning-versus-field intensity map.

    Every classified transition pair whose two-photon detuning lies inside the
    detuning span contributes ``sign(family) * s1 * s2`` times a Lorentzian
    of width ``kernel_fwhm``.  Lambda-type and Pi pairs are bright, V-type
    pairs dark; X pairs are skipped unless ``include_x``.  The final map is
    scaled to ``max |intensity| = 1``.

    Parameters
    ----------
    model : DefectModel
    field_grid, detuning_grid : array_like, optional
        Strictly increasing axes in mT and MHz.  Default to 200 points over
        0-61 mT and 300 points over 0-1499 MHz.
    kernel_fwhm : float
        Lorentzian full width, MHz.
    families : iterable of str, optional
        Restrict rendering to these families.
    n_jobs : int, optional
        Worker threads over field points (also capped by ``VSPIN_THREADS``).

    Returns
    -------
    TwoLaserMap
    """
    if field_grid is None:
        field_grid = np.linspace(*DEFAULT_FIELD_AXIS, 200)
    if detuning_grid is None:
        detuning_grid = np.linspace(*DEFAULT_DETUNING_AXIS, 300)
    fields = check_grid(field_grid, "field_grid")
    detunings = check_grid(detuning_grid, "detuning_grid")
    kernel_fwhm = check_positive(kernel_fwhm, "kernel_fwhm")
    w = check_fraction(spin_flip_weight, "spin_flip_weight")

    def row(B):
        return _map_row(model, B, detunings, kernel_fwhm, c, w, include_x, min_confidence, families)

    workers = _worker_count(n_jobs)
    if workers > 1 and fields.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, fields))
    else:
        rows = [row(B) for B in fields]
    intensity = np.vstack(rows)
    peak = np.max(np.abs(intensity))
    if peak > 0:
        intensity = intensity / peak
    return TwoLaserMap(fields, detunings, intensity, kernel_fwhm)


def pi_doublet_positions(model, field_grid, c=DEFAULT_CONSTANTS, min_confidence=MIN_LABEL_CONFIDENCE,
                         merge_tol=MERGE_TOL):
    """Pi-family pair detunings at each field.

    The detuning is signed: frequency of the up-branch transition minus
    that of the down-branch transition, so every nuclear label traces a line
    with slope ``(g_e - g_g) mu_B`` at high field.  Values closer than
    ``merge_tol`` MHz are merged.

    Returns
    -------
    list of (B, detuning) tuples, MHz.
    """
    fields = check_grid(field_grid, "field_grid", strictly_increasing=False)
    points = []
    for B in fields:
        gs, es = _solve_pair(model, B, c)
        zeeman = zeeman_splitting(model.ground, B, c)
        max_a = max(np.abs(model.ground.A_tensor).max(), np.abs(model.excited.A_tensor).max())
        if zeeman < 3 * max_a:
            log.warning("B=%.3g mT: electron Zeeman %.0f MHz is below 3x max|A|; Pi labels unreliable",
                        B, zeeman)
        tab = _TransitionTable(gs, es, 0.0, STRENGTH_FLOOR)
        i, j, code = _classify_table(tab, min_confidence)
        pi = code == _CODE[PI]
        up_first = tab.gs_up[i[pi]]
        f_i, f_j = tab.frequency[i[pi]], tab.frequency[j[pi]]
        signed = np.where(up_first, f_i - f_j, f_j - f_i)
        merged = []
        for d in np.sort(signed):
            if not merged or d - merged[-1] > merge_tol:
                merged.append(d)
        points.extend((float(B), float(d)) for d in merged)
    if not points:
        log.warning("no Pi pairs found on the requested field grid")
    return points


class TwoLaserMapSynthesizer(TransformerMixin, BaseEstimator):
    """Transformer from a column of field values to two-laser map rows.

    Parameters
    ----------
    preset : str
        Defect preset name, used when ``model`` is None.
    model : DefectModel, optional
    detuning_grid : array_like, optional
        Defaults to 300 points over 0-1499 MHz.
    kernel_fwhm : float
    spin_flip_weight : float
    include_x : bool
    min_confidence : float
    n_jobs : int, optional

    Examples
    --------
    >>> synth = TwoLaserMapSynthesizer(kernel_fwhm=20.0).fit()
    >>> rows = synth.transform(np.linspace(0, 61, 5))   # doctest: +SKIP
    """

    def __init__(self, preset="4H-alpha", model=None, detuning_grid=None, kernel_fwhm=DEFAULT_KERNEL_FWHM,
                 spin_flip_weight=0.0, include_x=False, min_confidence=MIN_LABEL_CONFIDENCE, n_jobs=None):
        self.preset = preset
        self.model = model
        self.detuning_grid = detuning_grid
        self.kernel_fwhm = kernel_fwhm
        self.spin_flip_weight = spin_flip_weight
        self.include_x = include_x
        self.min_confidence = min_confidence
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.model_ = self.model if self.model is not None else make_preset(self.preset)
        grid = self.detuning_grid
        if grid is None:
            grid = np.linspace(*DEFAULT_DETUNING_AXIS, 300)
        self.detuning_axis_ = check_grid(grid, "detuning_grid")
        check_positive(self.kernel_fwhm, "kernel_fwhm")
        check_fraction(self.spin_flip_weight, "spin_flip_weight")
        return self

    def synthesize(self, field_grid):
        check_is_fitted(self, "model_")
        return synthesize_two_laser_map(self.model_, field_grid, self.detuning_axis_, self.kernel_fwhm,
                                        spin_flip_weight=self.spin_flip_weight, include_x=self.include_x,
                                        min_confidence=self.min_confidence, n_jobs=self.n_jobs)

    def transform(self, X):
        """Normalized map rows, one per field value in ``X`` (mT)."""
        return self.synthesize(as_column(X)).intensity
