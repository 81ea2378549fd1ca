"""Inhomogeneous ensembles: PLE sweeps, charge hole burning, field-dependent depletion.

Each ensemble member is a defect with its own optical detuning; members do
not interact, so the per-member rate equations are propagated as one
batched matrix exponential per laser step.
"""

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..constants import DEFAULT_CONSTANTS
from ..errors import InvalidParameterError, OutOfRangeError
from ..hamiltonian import zeeman_splitting
from ..validation import check_grid, check_positive
from .rates import (E_DOWN, E_UP, G_DOWN, G_UP, IONIZED, Drive, LevelSystem, RateParams,
                    _sanitize, build_rate_matrix, fluorescence_vector, lorentzian, propagators)

log = logging.getLogger(__name__)

# Pump rates (1/s) standing in for the low-power PLE and high-power burn settings.
PLE_PUMP_RATE = 3e3
# weak probe for green-on sweeps: far below one spin flip per dwell, so the
# signal reads the ground populations without pumping them
GREEN_PROBE_PUMP_RATE = 10.0
HOLE_BURN_PUMP_RATE = 1.6e6
MAX_HOLE_DEPTH = 0.8


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """Distribution of optical detunings (MHz) sharing one defect model."""

    detuning: np.ndarray
    weights: np.ndarray
    model: object = None

    def __post_init__(self):
        d = check_grid(self.detuning, "detuning", strictly_increasing=True)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape != d.shape:
            raise InvalidParameterError("detuning and weights must have the same length")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise InvalidParameterError("weights must be finite, >= 0 and not all zero")
        object.__setattr__(self, "detuning", d)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def gaussian(cls, sigma=2500.0, model=None, span=4.0, n=241, center=0.0):
        """Gaussian ensemble sampled on ``n`` points over ``center +- span*sigma``."""
        sigma = check_positive(sigma, "sigma")
        d = center + np.linspace(-span * sigma, span * sigma, int(n))
        return cls(d, np.exp(-0.5 * ((d - center) / sigma) ** 2), model)

    @classmethod
    def from_csv(cls, path, model=None):
        """Empirical lineshape from a ``detuning_MHz,signal`` file."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0][:2]] != ["detuning_MHz", "signal"]:
            raise InvalidParameterError(f"{path}: expected header 'detuning_MHz,signal'")
        data = np.array([[float(x) for x in r[:2]] for r in rows[1:] if r], dtype=float)
        return cls(data[:, 0], np.clip(data[:, 1], 0, None), model)

    @property
    def size(self):
        return self.detuning.size


def optical_splittings(model, B, c=DEFAULT_CONSTANTS):
    """Ground and optical (up-line minus down-line) splittings in MHz, B along z."""
    if model is None or B == 0:
        return 0.0, 0.0
    zg = zeeman_splitting(model.ground, abs(B), c)
    ze = zeeman_splitting(model.excited, abs(B), c)
    return zg, np.sign(B) * (ze - zg)


def _drive_generators(p, pump_rate, ground_splitting, green_rate):
    """Constant part and per-branch drive parts of the (linear-in-weight) generator."""
    M0 = build_rate_matrix(p, Drive(pump_rate, 0.0, 0.0), ground_splitting, green_rate)
    Dd = build_rate_matrix(p, Drive(pump_rate, 1.0, 0.0), ground_splitting, green_rate) - M0
    Du = build_rate_matrix(p, Drive(pump_rate, 0.0, 1.0), ground_splitting, green_rate) - M0
    return M0, Dd, Du


def _step(pop, M0, Dd, Du, w_down, w_up, duration, fluor):
    """Propagate every member for ``duration``; returns new populations and counts."""
    M = M0 + w_down[:, None, None] * Dd + w_up[:, None, None] * Du
    phi, psi = propagators(M, duration)
    counts = np.einsum("j,kjl,kl->k", fluor, psi, pop)
    new = np.einsum("kjl,kl->kj", phi, pop)
    return _sanitize(new), counts


def _line_weights(laser, centers, splitting, fwhm):
    return (lorentzian(laser - (centers - splitting / 2), fwhm),
            lorentzian(laser - (centers + splitting / 2), fwhm))


def _initial_populations(n, p, ground_splitting):
    return np.tile(LevelSystem.thermal(ground_splitting, p.temperature).populations, (n, 1))


@dataclass(frozen=True, eq=False)
class PLESpectrum:
    detuning: np.ndarray
    signal: np.ndarray
    populations: np.ndarray = None


def simulate_ple_sweep(e, B=0.0, p=None, pump_rate=None, dwell=0.5, green=False,
                       laser_grid=None, green_rate=None, c=DEFAULT_CONSTANTS):
    """Stepwise laser sweep across an ensemble.

    Parameters
    ----------
    e : EnsembleModel
    B : float
        Field along the c-axis in mT.
    p : RateParams, optional
    pump_rate : float, optional
        On-resonance pump rate (1/s); defaults to ``PLE_PUMP_RATE`` with
        green off and the weak ``GREEN_PROBE_PUMP_RATE`` with green on.
    dwell : float
        Illumination time per laser step (s).
    green : bool
        With green on, every member is re-initialized to its thermal ground
        state (``p.temperature``; mixed if None) before each step and
        ``green_rate`` (default ``p.green_cw_rate``) acts during the step.
        A weak probe then yields one spectral copy per ground branch with
        amplitudes in the Boltzmann ratio.  With green off the populations
        persist from step to step, so spin pumping accumulates.
    laser_grid : array_like, optional
        Ascending laser detunings (MHz); defaults to the ensemble grid.

    Returns
    -------
    PLESpectrum
        Mean detected photon rate per step.
    """
    p = RateParams() if p is None else p
    if pump_rate is None:
        pump_rate = GREEN_PROBE_PUMP_RATE if green else PLE_PUMP_RATE
    dwell = check_positive(dwell, "dwell")
    check_positive(pump_rate, "pump_rate", allow_zero=True)
    laser = e.detuning if laser_grid is None else check_grid(laser_grid, "laser_grid")
    zg, split = optical_splittings(e.model, B, c)
    g_rate = (p.green_cw_rate if green_rate is None else green_rate) if green else 0.0
    M0, Dd, Du = _drive_generators(p, pump_rate, zg, g_rate)
    fluor = fluorescence_vector(p)
    start = _initial_populations(e.size, p, zg)
    pop = start.copy()
    signal = np.empty(laser.size)
    for i, nu in enumerate(laser):
        if green:
            pop = start.copy()
        wd, wu = _line_weights(nu, e.detuning, split, p.linewidth_fwhm)
        pop, counts = _step(pop, M0, Dd, Du, wd, wu, dwell, fluor)
        signal[i] = e.weights @ counts / dwell
    return PLESpectrum(laser, signal, pop)


def absorption_spectrum(e, populations, grid, B=0.0, p=None, c=DEFAULT_CONSTANTS):
    """Weak-probe spectrum of the ensemble for given member populations."""
    p = RateParams() if p is None else p
    _, split = optical_splittings(e.model, B, c)
    grid = np.asarray(grid, dtype=float)
    pop = np.asarray(populations)
    lo = lorentzian(grid[:, None] - (e.detuning - split / 2)[None, :], p.linewidth_fwhm)
    hi = lorentzian(grid[:, None] - (e.detuning + split / 2)[None, :], p.linewidth_fwhm)
    active = 1.0 - pop[:, IONIZED]
    # both ground branches absorb; at zero field they share one line
    n_down = pop[:, G_DOWN] + pop[:, E_DOWN]
    n_up = pop[:, G_UP] + pop[:, E_UP]
    share = n_down + n_up
    share = np.where(share > 0, share, 1.0)
    return (lo * (e.weights * active * n_down / share) + hi * (e.weights * active * n_up / share)).sum(axis=1)


def _fwhm(x, y):
    """Full width at half maximum of a single-peaked curve by linear interpolation."""
    k = int(np.argmax(y))
    half = y[k] / 2
    if y[k] <= 0:
        return 0.0
    left = np.nonzero(y[:k] < half)[0]
    right = np.nonzero(y[k:] < half)[0]
    if left.size == 0 or right.size == 0:
        warnings.warn("hole extends beyond the probe grid; width is undefined", RuntimeWarning)
        return np.nan
    i, j = left[-1], k + right[0]
    xl = np.interp(half, [y[i], y[i + 1]], [x[i], x[i + 1]])
    xr = np.interp(half, [y[j], y[j - 1]], [x[j], x[j - 1]])
    return float(xr - xl)


@dataclass(frozen=True, eq=False)
class HoleBurningResult:
    """Outcome of a burn.

    ``populations`` are those of the ionizable part of every member; a
    fraction ``1 - max_depth`` of each member never ionizes.
    """

    ensemble: EnsembleModel
    burn_detuning: float
    grid: np.ndarray
    before: np.ndarray
    after: np.ndarray
    populations: np.ndarray
    max_depth: float
    width: float
    depth: float
    B: float = 0.0

    @property
    def hole(self):
        return self.before - self.after

    def spectrum(self, populations, p=None, c=DEFAULT_CONSTANTS):
        return hole_spectrum(self.ensemble, populations, self.grid, self.max_depth, self.B, p, c)

    def evolve(self, duration, p=None, green_rate=0.0):
        """Propagate all members in the dark (or under green) and return the new spectrum."""
        p = RateParams() if p is None else p
        pop = evolve_members(self.populations, p, duration, green_rate=green_rate)
        return self.spectrum(pop, p), pop

    def restore(self, p=None, duration=0.5e-3):
        """Spectrum after a green reset pulse at the configured reset rate."""
        p = RateParams() if p is None else p
        return self.evolve(duration, p, green_rate=p.green_reset_rate)[0]


def hole_spectrum(e, populations, grid, max_depth=MAX_HOLE_DEPTH, B=0.0, p=None, c=DEFAULT_CONSTANTS):
    p = RateParams() if p is None else p
    pop = np.asarray(populations, dtype=float)
    ionized = max_depth * pop[:, IONIZED]
    mixed = np.zeros_like(pop)
    mixed[:, G_DOWN] = mixed[:, G_UP] = 0.5 * (1 - ionized)
    mixed[:, IONIZED] = ionized
    return absorption_spectrum(e, mixed, grid, B, p, c)


def evolve_members(populations, p, duration, drive=None, green_rate=0.0, ground_splitting=0.0):
    """Propagate a stack of member populations under one shared generator."""
    pop = np.asarray(populations, dtype=float)
    if duration == 0:
        return pop.copy()
    M = build_rate_matrix(p, drive, ground_splitting, green_rate)
    phi, _ = propagators(M, duration)
    return _sanitize(pop @ phi.T)


def simulate_hole_burning(e, burn_detuning=0.0, p=None, pump_rate=HOLE_BURN_PUMP_RATE, duration=60.0,
                          max_depth=MAX_HOLE_DEPTH, grid=None, B=0.0, n_jobs=None, c=DEFAULT_CONSTANTS):
    """Burn a persistent charge hole at ``burn_detuning`` (MHz).

    Members ionize from the excited state at ``kappa_ion * pump_rate``
    while being driven at their detuning-dependent rate, so the ionized
    fraction grows with the square of the pump rate at weak saturation.

    Returns
    -------
    HoleBurningResult
        ``width`` is the FWHM of the hole (MHz) and ``depth`` the fractional
        fluorescence reduction at the burn frequency.
    """
    p = RateParams() if p is None else p
    if duration < 0 or not np.isfinite(duration):
        raise InvalidParameterError(f"duration must be >= 0, got {duration!r}")
    lo, hi = e.detuning[0], e.detuning[-1]
    if not lo <= burn_detuning <= hi:
        raise OutOfRangeError(f"burn detuning {burn_detuning} MHz outside ensemble grid [{lo}, {hi}]")
    max_depth = float(max_depth)
    if not 0 <= max_depth <= 1:
        raise InvalidParameterError("max_depth must lie in [0, 1]")
    grid = e.detuning if grid is None else check_grid(grid, "grid")
    zg, split = optical_splittings(e.model, B, c)
    pop0 = _initial_populations(e.size, p, zg)
    if duration > 0:
        M0, Dd, Du = _drive_generators(p, pump_rate, zg, 0.0)
        wd, wu = _line_weights(burn_detuning, e.detuning, split, p.linewidth_fwhm)
        fluor = fluorescence_vector(p)
        chunks = np.array_split(np.arange(e.size), max(1, _workers(n_jobs)))

        def run(idx):
            return _step(pop0[idx], M0, Dd, Du, wd[idx], wu[idx], duration, fluor)[0]

        with ThreadPoolExecutor(len(chunks)) as ex:
            pop = np.concatenate(list(ex.map(run, chunks)))
    else:
        pop = pop0
    before = hole_spectrum(e, pop0, grid, max_depth, B, p, c)
    after = hole_spectrum(e, pop, grid, max_depth, B, p, c)
    hole = before - after
    k = int(np.argmin(np.abs(grid - burn_detuning)))
    depth = float(hole[k] / before[k]) if before[k] > 0 else 0.0
    width = _fwhm(grid, hole) if np.max(hole) > 0 else 0.0
    return HoleBurningResult(e, float(burn_detuning), grid, before, after, pop, max_depth, width, depth, B)


def _workers(n_jobs):
    from ..spectra import _worker_count
    return _worker_count(n_jobs)


def depletion_vs_field(model, p=None, fields=None, single_spin_fwhm=1.6, c=DEFAULT_CONSTANTS):
    """Spin depletion fraction against field from pump selectivity.

    The opposite-branch line sits ``(g_e - g_g) mu_B B`` away from the
    pumped one; the depletion is one minus its overlap with a Lorentzian
    single-spin line of FWHM ``single_spin_fwhm`` (GHz).

    Returns
    -------
    fields, depletion : ndarray
    """
    del p  # selectivity alone sets the depletion; rates only fix its time scale
    fields = check_grid(np.arange(0, 500, 10.0) if fields is None else fields, "fields")
    fwhm = check_positive(single_spin_fwhm, "single_spin_fwhm") * 1e3
    split = np.array([optical_splittings(model, b, c)[1] for b in fields])
    return fields, 1.0 - lorentzian(split, fwhm)
