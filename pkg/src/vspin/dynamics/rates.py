"""Six-level rate-equation model and its exact propagation.

Levels are ``(g_down, g_up, e_down, e_up, shelf, ionized)``.  The generator
``M`` acts on column population vectors, ``dp/dt = M p``; every column of
``M`` sums to zero, so total probability (ionized reservoir included) is
conserved exactly.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.integrate import solve_ivp

from ..constants import DEFAULT_CONSTANTS
from ..errors import IntegrationError, InvalidParameterError
from ..validation import check_positive

log = logging.getLogger(__name__)

G_DOWN, G_UP, E_DOWN, E_UP, SHELF, IONIZED = range(6)
LEVELS = ("g_down", "g_up", "e_down", "e_up", "shelf", "ionized")
N_LEVELS = 6

CONSERVATION_TOL = 1e-9
NEGATIVE_TOL = 1e-12
_K_B_MHZ = DEFAULT_CONSTANTS.k_B_MHz_per_K


@dataclass(frozen=True)
class RateParams:
    """Rates of the effective level scheme (all in 1/s unless noted).

    Attributes
    ----------
    Gamma_opt : float
        Excited-state decay rate.
    beta_flip : float
        Fraction of excited-state decays that flip the electron spin.
    Gamma_1 : float
        Ground-state spin relaxation rate (population-difference decay rate).
    Gamma_0 : float
        Shelf depopulation rate; this is the fast recovery channel.
    shelf_in : float
        Excited state -> shelf rate.
    kappa_ion : float
        Ionization coefficient: each excited state ionizes at
        ``kappa_ion * pump_rate`` (dimensionless).
    green_reset_rate : float
        Re-mixing / de-ionization rate of a green reset pulse.
    green_cw_rate : float
        Same, for weak continuous green during spectroscopy.
    linewidth_fwhm : float
        Optical linewidth of a single defect in MHz; sets how strongly a
        detuned laser drives a transition.
    temperature : float or None
        Bath temperature in K for detailed balance of ``Gamma_1``; None keeps
        the up/down rates symmetric.
    """

    Gamma_opt: float = 6e6
    beta_flip: float = 0.01
    Gamma_1: float = 0.04
    Gamma_0: float = 100.0
    shelf_in: float = 1e5
    kappa_ion: float = 3e-5
    green_reset_rate: float = 1e5
    green_cw_rate: float = 0.0
    linewidth_fwhm: float = 200.0
    temperature: float = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "temperature" and value is None:
                continue
            if not np.isfinite(value) or value < 0:
                raise InvalidParameterError(f"{f.name} must be finite and >= 0, got {value!r}")
        if self.beta_flip > 1:
            raise InvalidParameterError(f"beta_flip must lie in [0, 1], got {self.beta_flip!r}")
        if self.linewidth_fwhm <= 0:
            raise InvalidParameterError("linewidth_fwhm must be > 0")

    @property
    def shelf_out(self):
        return self.Gamma_0

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Drive:
    """Resonant laser: nominal pump rate and per-branch spectral weights."""

    pump_rate: float = 0.0
    down: float = 0.0
    up: float = 0.0

    @classmethod
    def on(cls, branch, pump_rate):
        if branch not in ("down", "up"):
            raise InvalidParameterError(f"unknown branch {branch!r}")
        return cls(pump_rate, float(branch == "down"), float(branch == "up"))


def lorentzian(detuning, fwhm):
    """Peak-normalized Lorentzian."""
    return 1.0 / (1.0 + (2.0 * np.asarray(detuning) / fwhm) ** 2)


def relaxation_rates(p, ground_splitting=0.0):
    """Return (down->up, up->down) ground relaxation rates."""
    if p.temperature is None or ground_splitting == 0.0:
        return p.Gamma_1 / 2, p.Gamma_1 / 2
    if p.temperature <= 0:
        return 0.0, p.Gamma_1
    x = ground_splitting / (_K_B_MHZ * p.temperature)
    # k_up / k_down = exp(-x), k_up + k_down = Gamma_1
    k_down = p.Gamma_1 / (1.0 + np.exp(-x))
    return p.Gamma_1 - k_down, k_down


def build_rate_matrix(p, drive=None, ground_splitting=0.0, green_rate=0.0):
    """Generator of the population dynamics.

    Parameters
    ----------
    p : RateParams
    drive : Drive, optional
        Resonant excitation.  Branch ``b`` is pumped at
        ``drive.pump_rate * weight_b`` (absorption and stimulated emission);
        excited states ionize at ``p.kappa_ion * drive.pump_rate``.
    ground_splitting : float
        Ground Zeeman splitting in MHz, only used with ``p.temperature``.
    green_rate : float
        Rate at which green light re-mixes the ground doublet and returns
        excited, shelved and ionized population to it.

    Returns
    -------
    (6, 6) ndarray
    """
    green_rate = check_positive(green_rate, "green_rate", allow_zero=True)
    M = np.zeros((N_LEVELS, N_LEVELS))

    def link(src, dst, rate):
        if rate < 0:
            raise InvalidParameterError(f"negative rate {rate!r} for {LEVELS[src]} -> {LEVELS[dst]}")
        M[dst, src] += rate
        M[src, src] -= rate

    if drive is not None:
        check_positive(drive.pump_rate, "pump_rate", allow_zero=True)
        for g, e, weight in ((G_DOWN, E_DOWN, drive.down), (G_UP, E_UP, drive.up)):
            rate = drive.pump_rate * weight
            link(g, e, rate)
            link(e, g, rate)
        ion = p.kappa_ion * drive.pump_rate
        link(E_DOWN, IONIZED, ion)
        link(E_UP, IONIZED, ion)

    decay = p.Gamma_opt
    link(E_DOWN, G_DOWN, decay * (1 - p.beta_flip))
    link(E_DOWN, G_UP, decay * p.beta_flip)
    link(E_UP, G_UP, decay * (1 - p.beta_flip))
    link(E_UP, G_DOWN, decay * p.beta_flip)

    k_up, k_down = relaxation_rates(p, ground_splitting)
    link(G_DOWN, G_UP, k_up)
    link(G_UP, G_DOWN, k_down)

    link(E_DOWN, SHELF, p.shelf_in)
    link(E_UP, SHELF, p.shelf_in)
    link(SHELF, G_DOWN, p.Gamma_0 / 2)
    link(SHELF, G_UP, p.Gamma_0 / 2)

    if green_rate:
        link(G_DOWN, G_UP, green_rate / 2)
        link(G_UP, G_DOWN, green_rate / 2)
        for src in (E_DOWN, E_UP, SHELF, IONIZED):
            link(src, G_DOWN, green_rate / 2)
            link(src, G_UP, green_rate / 2)
    return M


def fluorescence_vector(p):
    """Row vector mapping populations to the detected photon rate.

    Only spin-conserving decay photons are collected.
    """
    f = np.zeros(N_LEVELS)
    f[E_DOWN] = f[E_UP] = p.Gamma_opt * (1 - p.beta_flip)
    return f


# ---------------------------------------------------------------------------
# matrix exponential


_TAYLOR_TERMS = 18   # 0.5**18 / 18! ~ 6e-22


def _scaling(norm):
    return 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))


def _taylor(X):
    eye = np.broadcast_to(np.eye(X.shape[-1]), X.shape)
    result = eye + X
    term = X
    for k in range(2, _TAYLOR_TERMS + 1):
        term = term @ X / k
        result = result + term
    return result


def expm(A):
    """Matrix exponential by scaling and squaring of a Taylor series.

    Works on a single matrix or a stack ``(..., n, n)``.  The matrix is
    scaled so its 1-norm is at most 1/2, where 18 Taylor terms truncate
    below 1e-20, and then squared back.
    """
    A = np.asarray(A, dtype=float)
    norm = np.max(np.sum(np.abs(A), axis=-2)) if A.size else 0.0
    s = _scaling(norm)
    result = _taylor(A / 2.0 ** s)
    for _ in range(s):
        result = result @ result
    return result


def propagators(M, dt):
    """Return ``(exp(M dt), int_0^dt exp(M s) ds)``.

    Both come from one augmented exponential.  When ``M`` is a conservative
    generator (zero column sums) the exact column sums, 1 and the elapsed
    time, are restored after every squaring.  Plain squaring lets rounding
    errors along the stationary direction double at each step, which costs
    about six digits over an hour of a 1e7/s generator.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    aug = np.zeros(M.shape[:-2] + (2 * n, 2 * n))
    aug[..., :n, :n] = M * dt
    aug[..., :n, n:] = np.eye(n) * dt
    scale = np.abs(M).max() if M.size else 0.0
    conservative = scale == 0 or np.abs(M.sum(axis=-2)).max() <= 1e-12 * scale
    s = _scaling(np.max(np.sum(np.abs(aug), axis=-2)) if aug.size else 0.0)
    E = _taylor(aug / 2.0 ** s)
    phi, psi = E[..., :n, :n], E[..., :n, n:]
    h = dt / 2.0 ** s
    for k in range(s + 1):
        if k:
            phi, psi = phi @ phi, phi @ psi + psi
            h *= 2
        if conservative:
            phi = phi / phi.sum(axis=-2, keepdims=True)
            sums = psi.sum(axis=-2, keepdims=True)
            psi = psi * np.where(sums > 0, h / np.where(sums > 0, sums, 1.0), 1.0)
    return phi, psi


# ---------------------------------------------------------------------------
# populations


@dataclass(frozen=True, eq=False)
class LevelSystem:
    """Population vector over the six levels."""

    populations: np.ndarray

    def __post_init__(self):
        pop = np.asarray(self.populations, dtype=float).copy()
        if pop.shape != (N_LEVELS,):
            raise InvalidParameterError(f"expected {N_LEVELS} populations, got shape {pop.shape}")
        if np.any(pop < -NEGATIVE_TOL) or abs(pop.sum() - 1) > CONSERVATION_TOL:
            raise InvalidParameterError(f"populations must be >= 0 and sum to 1, got {pop}")
        pop.flags.writeable = False
        object.__setattr__(self, "populations", pop)

    @classmethod
    def mixed(cls):
        return cls(np.array([0.5, 0.5, 0, 0, 0, 0]))

    @classmethod
    def thermal(cls, ground_splitting, temperature):
        """Boltzmann ground doublet (down lower in energy)."""
        if temperature is None or ground_splitting == 0:
            return cls.mixed()
        r = np.exp(-ground_splitting / (_K_B_MHZ * temperature))
        return cls(np.array([1 / (1 + r), r / (1 + r), 0, 0, 0, 0]))

    def __getitem__(self, level):
        if isinstance(level, str):
            level = LEVELS.index(level)
        return self.populations[level]

    @property
    def total(self):
        return float(self.populations.sum())


def _sanitize(pop, where=""):
    total = pop.sum(axis=-1, keepdims=True)
    drift = np.max(np.abs(total - 1))
    if drift > CONSERVATION_TOL:
        log.debug("renormalizing populations%s, drift %.3g", where, drift)
        pop = pop / total
    low = pop.min()
    if low < 0:
        if low < -NEGATIVE_TOL:
            raise IntegrationError(f"population went negative ({low:.3g}){where}")
        log.debug("clamping negative population %.3g%s", low, where)
        pop = np.clip(pop, 0.0, None)
    return pop


def evolve(sys, M, duration, bins=1, p=None, fluorescence=None):
    """Propagate a level system under a constant generator.

    Parameters
    ----------
    sys : LevelSystem
    M : (6, 6) ndarray
        Generator from :func:`build_rate_matrix`.
    duration : float
        Seconds; zero is allowed and returns the input unchanged.
    bins : int
        Number of equal time bins for the fluorescence record.
    p : RateParams, optional
        Supplies the fluorescence weights when ``fluorescence`` is None.
    fluorescence : (6,) array_like, optional
        Photon-rate weights.

    Returns
    -------
    final : LevelSystem
    counts : (bins,) ndarray
        Detected photons integrated over each bin.
    """
    if duration < 0 or not np.isfinite(duration):
        raise InvalidParameterError(f"duration must be finite and >= 0, got {duration!r}")
    if fluorescence is None:
        fluorescence = fluorescence_vector(p if p is not None else RateParams())
    fluorescence = np.asarray(fluorescence, dtype=float)
    pop = np.array(sys.populations)
    counts = np.zeros(bins)
    if duration == 0:
        return sys, counts
    phi, psi = propagators(M, duration / bins)
    for k in range(bins):
        counts[k] = fluorescence @ (psi @ pop)
        pop = _sanitize(phi @ pop, f" in bin {k}")
    return LevelSystem(pop), counts


def evolve_adaptive(sys, M, duration, p=None, rtol=1e-11, atol=1e-14, method="Radau"):
    """Cross-check propagator using an adaptive stiff ODE integrator.

    Returns the final :class:`LevelSystem` and the total fluorescence counts.
    """
    fluorescence = fluorescence_vector(p if p is not None else RateParams())
    y0 = np.concatenate([sys.populations, [0.0]])

    def rhs(t, y):
        dp = M @ y[:-1]
        return np.concatenate([dp, [fluorescence @ y[:-1]]])

    jac = np.zeros((N_LEVELS + 1, N_LEVELS + 1))
    jac[:N_LEVELS, :N_LEVELS] = M
    jac[N_LEVELS, :N_LEVELS] = fluorescence
    sol = solve_ivp(rhs, (0.0, duration), y0, method=method, rtol=rtol, atol=atol, jac=jac)
    if not sol.success:
        raise IntegrationError(f"adaptive integration failed at t={sol.t[-1]:.3g} s: {sol.message}")
    y = sol.y[:, -1]
    return LevelSystem(_sanitize(y[:-1])), float(y[-1])
