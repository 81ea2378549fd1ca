"""Domain fitters for recovery curves, depletion lines and Zeeman doublets.

Every fitter exists twice: as a plain function returning a
:class:`~vspin.fitting.engine.FitResult`, and as a scikit-learn style
regressor whose ``fit`` stores that result in ``result_``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..constants import DEFAULT_CONSTANTS
from ..errors import (ArityError, DomainError, InterpolationRangeError, InvalidParameterError, OutOfRangeError,
                      RankError)
from ..validation import as_column, check_grid, check_positive, check_xy
from .engine import FitResult, least_squares

MIN_RATE_RATIO = 5.0
N_STARTS = 8
OVERFLOW_TEMPERATURE = 1e3


def _curve_xy(curve, y=None):
    """Accept a RecoveryCurve-like object or an explicit (x, y) pair."""
    if y is None and hasattr(curve, "tau"):
        return curve.tau, curve.recovered_fraction, getattr(curve, "sigma", None)
    if y is None:
        x, y = curve
        return x, y, None
    return curve, y, None


# ---------------------------------------------------------------------------
# exponential recoveries


def _mono(tau, offset, amp, rate):
    return offset + amp * (1 - np.exp(-rate * tau))


def _bi(tau, offset, a0, g0, a1, g1):
    return offset + a0 * (1 - np.exp(-g0 * tau)) + a1 * (1 - np.exp(-g1 * tau))


def _rate_grid(tau, n=40):
    pos = tau[tau > 0]
    lo = 0.1 / tau.max()
    hi = 10.0 / (pos.min() if pos.size else tau.max())
    return np.geomspace(lo, hi, n)


def _linear_fit(columns, y, w):
    A = np.column_stack(columns) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, y * w, rcond=None)
    r = A @ coef - y * w
    return coef, float(r @ r)


def fit_monoexponential(curve, y=None, sigma=None):
    """Fit ``offset + A (1 - exp(-Gamma tau))``.

    Returns
    -------
    FitResult
        Parameters ``Gamma``, ``A``, ``offset``.
    """
    tau, y, s = _curve_xy(curve, y)
    sigma = s if sigma is None else sigma
    tau, y = check_xy(tau, y, 3, "recovery curve")
    w = np.ones_like(y) if sigma is None else 1 / np.asarray(sigma, dtype=float)
    best = None
    for r in _rate_grid(tau):
        coef, rss = _linear_fit([np.ones_like(tau), 1 - np.exp(-r * tau)], y, w)
        if best is None or rss < best[0]:
            best = (rss, r, coef)
    _, r, (offset, amp) = best
    res = least_squares(lambda p: _mono(tau, *p), {"offset": offset, "A": amp, "Gamma": r}, y,
                        bounds={"Gamma": (0, None)}, sigma=sigma, simplex=False,
                        units={"offset": "", "A": "", "Gamma": "1/s"})
    return res


def fit_biexponential(curve, y=None, sigma=None, min_rate_ratio=MIN_RATE_RATIO, n_starts=N_STARTS):
    """Fit a two-channel recovery ``offset + A_0(1-e^{-Gamma_0 tau}) + A_1(1-e^{-Gamma_1 tau})``.

    ``Gamma_0`` is the faster rate.  When the two rates are closer than
    ``min_rate_ratio`` or one amplitude vanishes the data cannot separate
    two channels; the mono-exponential fit is returned instead, flagged
    ``"mono-exponential-fallback"``, with the single rate reported as
    ``Gamma_1``.

    Parameters
    ----------
    curve : RecoveryCurve or array_like
        Either a curve object or ``tau`` with ``y`` given separately.
    n_starts : int
        Number of grid starts refined by the engine.

    Raises
    ------
    ArityError
        Fewer than six points.
    """
    tau, y, s = _curve_xy(curve, y)
    sigma = s if sigma is None else sigma
    tau, y = check_xy(tau, y, 6, "recovery curve")
    w = np.ones_like(y) if sigma is None else 1 / np.asarray(sigma, dtype=float)
    grid = _rate_grid(tau)
    ones = np.ones_like(tau)
    cands = []
    for i, r0 in enumerate(grid):
        e0 = 1 - np.exp(-r0 * tau)
        for r1 in grid[:i]:
            if r0 / r1 < 2:
                continue
            coef, rss = _linear_fit([ones, e0, 1 - np.exp(-r1 * tau)], y, w)
            cands.append((rss, r0, r1, coef))
    cands.sort(key=lambda c: c[0])
    units = {"offset": "", "A_0": "", "Gamma_0": "1/s", "A_1": "", "Gamma_1": "1/s"}
    best = None
    for rss, r0, r1, (off, a0, a1) in cands[:max(1, int(n_starts))]:
        res = least_squares(lambda p: _bi(tau, *p),
                            {"offset": off, "A_0": a0, "Gamma_0": r0, "A_1": a1, "Gamma_1": r1}, y,
                            bounds={"Gamma_0": (0, None), "Gamma_1": (0, None)}, sigma=sigma,
                            simplex=False, units=units)
        if best is None or res.residual_norm < best.residual_norm:
            best = res
    p = best.parameters
    if p["Gamma_0"] < p["Gamma_1"]:
        p = {"offset": p["offset"], "A_0": p["A_1"], "Gamma_0": p["Gamma_1"], "A_1": p["A_0"],
             "Gamma_1": p["Gamma_0"]}
        s = best.uncertainties
        s = {"offset": s["offset"], "A_0": s["A_1"], "Gamma_0": s["Gamma_1"], "A_1": s["A_0"],
             "Gamma_1": s["Gamma_0"]}
        best = FitResult(p, s, units, best.residual_norm, best.converged, best.evaluations, best.iterations,
                         best.flags)
    amp_total = abs(p["A_0"]) + abs(p["A_1"])
    weak = amp_total == 0 or min(abs(p["A_0"]), abs(p["A_1"])) < 1e-3 * amp_total
    close = p["Gamma_1"] <= 0 or p["Gamma_0"] / p["Gamma_1"] < min_rate_ratio
    if weak or close or "rank-deficient" in best.flags:
        mono = fit_monoexponential(tau, y, sigma)
        m = mono.parameters
        evals = best.evaluations + mono.evaluations
        return FitResult(
            {"offset": m["offset"], "A_0": 0.0, "Gamma_0": np.nan, "A_1": m["A"], "Gamma_1": m["Gamma"]},
            {"offset": mono.uncertainties["offset"], "A_0": np.nan, "Gamma_0": np.nan,
             "A_1": mono.uncertainties["A"], "Gamma_1": mono.uncertainties["Gamma"]},
            units, mono.residual_norm, mono.converged, evals, mono.iterations,
            mono.flags + ("mono-exponential-fallback",))
    return best


def fit_stretched_exponential(curve, y=None, sigma=None):
    """Fit ``offset + A (1 - exp(-(Gamma tau)^beta))`` with ``beta`` in [0.3, 1].

    A descriptive model for non-exponential recoveries; the 1/e rate from
    :func:`one_over_e_rate` stays the model-free summary.
    """
    tau, y, s = _curve_xy(curve, y)
    sigma = s if sigma is None else sigma
    tau, y = check_xy(tau, y, 4, "recovery curve")
    mono = fit_monoexponential(tau, y, sigma).parameters

    def f(p):
        off, amp, rate, beta = p
        return off + amp * (1 - np.exp(-np.power(np.clip(rate * tau, 0, None), beta)))

    start = {"offset": mono["offset"], "A": mono["A"], "Gamma": max(mono["Gamma"], 1e-12), "beta": 0.8}
    return least_squares(f, start, y, bounds={"Gamma": (0, None), "beta": (0.3, 1.0)}, sigma=sigma,
                         units={"offset": "", "A": "", "Gamma": "1/s", "beta": ""})


def one_over_e_rate(curve, y=None, baseline=None, asymptote=None):
    """Model-free rate ``1 / tau_{1/e}``.

    ``tau_{1/e}`` is where the curve has covered ``1 - 1/e`` of the way from
    its baseline (first sample by default) to its asymptote (last sample by
    default), found by linear interpolation between the bracketing samples.

    Raises
    ------
    OutOfRangeError
        The curve never crosses the 1/e level.
    """
    tau, y, _ = _curve_xy(curve, y)
    tau, y = check_xy(tau, y, 2, "recovery curve")
    check_grid(tau, "tau")
    y0 = y[0] if baseline is None else baseline
    y1 = y[-1] if asymptote is None else asymptote
    if y1 == y0:
        raise OutOfRangeError("curve has no net recovery")
    level = (y - y0) / (y1 - y0)
    target = 1 - np.exp(-1)
    above = np.nonzero(level >= target)[0]
    if above.size == 0 or above[0] == 0:
        raise OutOfRangeError("curve does not cross the 1/e level inside the sampled range")
    k = above[0]
    t = np.interp(target, [level[k - 1], level[k]], [tau[k - 1], tau[k]])
    if t <= 0:
        raise OutOfRangeError("1/e crossing at non-positive delay")
    return 1.0 / t


# ---------------------------------------------------------------------------
# depletion linewidth


def _depletion(B, offset, amp, center, width):
    return offset + amp * (1 - 1 / (1 + ((B - center) / width) ** 2))


def fit_lorentzian(curve, y=None, sigma=None, slope=None, model=None, c=DEFAULT_CONSTANTS, fit_center=True):
    """Fit the depletion-vs-field curve with an inverted Lorentzian.

    ``offset + amplitude * (1 - 1/(1 + ((B - center)/HWHM)^2))``.  The field
    HWHM converts to a frequency HWHM through ``slope`` (MHz/mT), by default
    ``(g_e - g_g) mu_B`` of ``model``.

    Returns
    -------
    FitResult
        ``center`` and ``hwhm`` in mT, ``hwhm_MHz``, ``amplitude``, ``offset``.
        A flat curve is flagged ``"degenerate"``.
    """
    B, y, s = _curve_xy(curve, y)
    sigma = s if sigma is None else sigma
    B, y = check_xy(B, y, 5, "depletion curve")
    if slope is None:
        if model is None:
            from ..presets import make_preset
            model = make_preset("4H-alpha")
        slope = (model.excited.g_tensor[2, 2] - model.ground.g_tensor[2, 2]) * c.mu_B_over_h
    slope = abs(float(slope))
    units = {"offset": "", "amplitude": "", "center": "mT", "hwhm": "mT", "hwhm_MHz": "MHz"}
    span = np.ptp(B) if B.size > 1 else 1.0
    w = np.ones_like(y) if sigma is None else 1 / np.asarray(sigma, dtype=float)
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        nan = {k: np.nan for k in units}
        par = dict(nan, offset=float(np.mean(y)), amplitude=0.0)
        return FitResult(par, nan, units, float(np.linalg.norm((y - y.mean()) * w)), False, 0, 0,
                         ("degenerate",))
    best = None
    for width in np.geomspace(span / 200, span * 20, 60):
        coef, rss = _linear_fit([np.ones_like(B), 1 - 1 / (1 + (B / width) ** 2)], y, w)
        if best is None or rss < best[0]:
            best = (rss, width, coef)
    _, width, (off, amp) = best
    if fit_center:
        start = {"offset": off, "amplitude": amp, "center": 0.0, "hwhm": width}
        f = lambda p: _depletion(B, *p)
    else:
        start = {"offset": off, "amplitude": amp, "hwhm": width}
        f = lambda p: _depletion(B, p[0], p[1], 0.0, p[2])
    res = least_squares(f, start, y, bounds={"hwhm": (0, None)}, sigma=sigma, units=units)
    par, sig = dict(res.parameters), dict(res.uncertainties)
    par.setdefault("center", 0.0)
    sig.setdefault("center", 0.0)
    par["hwhm_MHz"] = par["hwhm"] * slope
    sig["hwhm_MHz"] = sig["hwhm"] * slope
    flags = res.flags
    if abs(par["amplitude"]) < 1e-9 * max(1.0, np.abs(y).max()):
        flags = flags + ("degenerate",)
    return FitResult(par, sig, units, res.residual_norm, res.converged and "degenerate" not in flags,
                     res.evaluations, res.iterations, flags, res.covariance)


# ---------------------------------------------------------------------------
# Zeeman doublet


@dataclass(frozen=True, eq=False)
class LineshapeTemplate:
    """Zero-field lineshape, peak-normalized, linearly interpolated (zero outside)."""

    detuning: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        x = check_grid(self.detuning, "template detuning", strictly_increasing=True, allow_single=False)
        a = np.asarray(self.amplitude, dtype=float).ravel()
        if a.shape != x.shape or not np.all(np.isfinite(a)):
            raise InvalidParameterError("template amplitude must be finite and match the grid")
        peak = np.max(np.abs(a))
        if peak == 0:
            raise InvalidParameterError("template is identically zero")
        object.__setattr__(self, "detuning", x)
        object.__setattr__(self, "amplitude", a / peak)

    def __call__(self, x):
        return np.interp(x, self.detuning, self.amplitude, left=0.0, right=0.0)

    @property
    def span(self):
        return self.detuning[0], self.detuning[-1]


def doublet_model(template, x, a_low, a_high, offset):
    return a_low * template(x + offset / 2) + a_high * template(x - offset / 2)


def fit_zeeman_doublet(spectrum, template, y=None, sigma=None, max_offset=None):
    """Fit ``A_low T(x + D/2) + A_high T(x - D/2)``.

    Parameters
    ----------
    spectrum : (detuning, signal) pair or object with ``detuning``/``signal``
    template : LineshapeTemplate
    max_offset : float, optional
        Upper bound for the splitting ``D`` (MHz); default is the template width.

    Raises
    ------
    InterpolationRangeError
        The spectrum extends beyond the template grid.
    """
    if y is None:
        if hasattr(spectrum, "signal"):
            x, y = spectrum.detuning, spectrum.signal
        else:
            x, y = spectrum
    else:
        x = spectrum
    x, y = check_xy(x, y, 4, "spectrum")
    lo, hi = template.span
    if x.min() < lo or x.max() > hi:
        raise InterpolationRangeError(
            f"spectrum span [{x.min():.6g}, {x.max():.6g}] MHz exceeds template [{lo:.6g}, {hi:.6g}] MHz")
    w = np.ones_like(y) if sigma is None else 1 / np.asarray(sigma, dtype=float)
    max_offset = (hi - lo) if max_offset is None else float(max_offset)
    best = None
    step = np.min(np.diff(template.detuning))
    for d in np.arange(0.0, max_offset, max(step / 2, max_offset / 2000)):
        coef, rss = _linear_fit([template(x + d / 2), template(x - d / 2)], y, w)
        if best is None or rss < best[0] - 1e-15 * max(1.0, best[0]):
            best = (rss, d, coef)
    _, d, (a_low, a_high) = best
    units = {"A_low": "", "A_high": "", "offset": "MHz"}
    return least_squares(lambda p: doublet_model(template, x, *p), {"A_low": a_low, "A_high": a_high, "offset": d},
                         y, bounds={"offset": (0, max_offset)}, sigma=sigma, units=units)


def spin_temperature(ratio, splitting, c=DEFAULT_CONSTANTS):
    """Effective temperature (K) of a two-level population ratio.

    ``T = splitting / (k_B/h ln(1/ratio))`` with the splitting in MHz.
    Above 1000 K the result is reported as ``inf`` with a warning.

    Raises
    ------
    DomainError
        ``ratio`` outside (0, 1) or non-positive splitting.
    """
    ratio = float(ratio)
    if not 0 < ratio < 1:
        raise DomainError(f"population ratio must lie in (0, 1), got {ratio!r}")
    splitting = check_positive(splitting, "splitting")
    T = splitting / (c.k_B_MHz_per_K * np.log(1 / ratio))
    if T > OVERFLOW_TEMPERATURE:
        warnings.warn(f"spin temperature {T:.3g} K exceeds {OVERFLOW_TEMPERATURE:g} K; reporting inf",
                      RuntimeWarning)
        return np.inf
    return float(T)


# ---------------------------------------------------------------------------
# Pi slope


def _common_slope(B, d):
    """Slope shared by parallel lines when every field carries the same number of points."""
    fields, counts = np.unique(B, return_counts=True)
    k = counts[0]
    if fields.size >= 2 and k > 1 and np.all(counts == k):
        order = np.lexsort((d, B))
        lines = order.reshape(fields.size, k).T   # line j = j-th lowest detuning per field
        Bc = np.concatenate([B[l] - B[l].mean() for l in lines])
        dc = np.concatenate([d[l] - d[l].mean() for l in lines])
        return float(Bc @ dc / (Bc @ Bc))
    Bc = B - B.mean()
    return float(Bc @ (d - d.mean()) / (Bc @ Bc))


def g_from_pi_slope(points, g_ground, c=DEFAULT_CONSTANTS, min_span=50.0):
    """Excited-state g-factor from the field slope of Pi pair detunings.

    ``g_e = g_g + slope / mu_B``.  Points that come as several parallel
    lines (the same number of points at every field) are regressed with
    one intercept per line.

    Raises
    ------
    ArityError
        Fewer than three points.
    RankError
        All points at one field.
    InvalidParameterError
        Field span below ``min_span`` mT.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidParameterError("points must be (B, detuning) pairs")
    if pts.shape[0] < 3:
        raise ArityError(f"need at least 3 points, got {pts.shape[0]}")
    B, d = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)):
        raise InvalidParameterError("points must be finite")
    if np.ptp(B) == 0:
        raise RankError("all points share one field value; slope undefined")
    if np.ptp(B) < min_span:
        raise InvalidParameterError(f"field span {np.ptp(B):.3g} mT below the required {min_span} mT")
    return float(g_ground + _common_slope(B, d) / c.mu_B_over_h)


# ---------------------------------------------------------------------------
# estimators


class _CurveRegressor(RegressorMixin, BaseEstimator):
    """Shared ``fit``/``predict`` plumbing; subclasses define ``_fit`` and ``_predict``."""

    def fit(self, X, y, sample_sigma=None):
        x = as_column(X)
        self.result_ = self._fit(x, np.asarray(y, dtype=float), sample_sigma)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self._predict(as_column(X), self.result_.parameters)

    @property
    def params_(self):
        check_is_fitted(self, "result_")
        return dict(self.result_.parameters)


class BiexponentialRecovery(_CurveRegressor):
    """Two-rate recovery regressor (``X`` = delay in s)."""

    def __init__(self, min_rate_ratio=MIN_RATE_RATIO, n_starts=N_STARTS):
        self.min_rate_ratio = min_rate_ratio
        self.n_starts = n_starts

    def _fit(self, x, y, sigma):
        return fit_biexponential(x, y, sigma, self.min_rate_ratio, self.n_starts)

    def _predict(self, x, p):
        g0 = 0.0 if not np.isfinite(p["Gamma_0"]) else p["Gamma_0"]
        return _bi(x, p["offset"], p["A_0"], g0, p["A_1"], p["Gamma_1"])


class MonoExponentialRecovery(_CurveRegressor):
    def _fit(self, x, y, sigma):
        return fit_monoexponential(x, y, sigma)

    def _predict(self, x, p):
        return _mono(x, p["offset"], p["A"], p["Gamma"])


class StretchedExponentialRecovery(_CurveRegressor):
    def _fit(self, x, y, sigma):
        return fit_stretched_exponential(x, y, sigma)

    def _predict(self, x, p):
        return p["offset"] + p["A"] * (1 - np.exp(-np.power(p["Gamma"] * x, p["beta"])))


class LorentzianDepletion(_CurveRegressor):
    """Depletion-vs-field regressor (``X`` = field in mT)."""

    def __init__(self, slope=None, fit_center=True):
        self.slope = slope
        self.fit_center = fit_center

    def _fit(self, x, y, sigma):
        return fit_lorentzian(x, y, sigma, slope=self.slope, fit_center=self.fit_center)

    def _predict(self, x, p):
        return _depletion(x, p["offset"], p["amplitude"], p["center"], p["hwhm"])


class ZeemanDoublet(_CurveRegressor):
    """Two shifted template copies (``X`` = detuning in MHz)."""

    def __init__(self, template=None, max_offset=None):
        self.template = template
        self.max_offset = max_offset

    def _fit(self, x, y, sigma):
        if self.template is None:
            raise InvalidParameterError("ZeemanDoublet needs a LineshapeTemplate")
        return fit_zeeman_doublet(x, self.template, y, sigma, self.max_offset)

    def _predict(self, x, p):
        return doublet_model(self.template, x, p["A_low"], p["A_high"], p["offset"])

    def spin_temperature(self, splitting, c=DEFAULT_CONSTANTS):
        """Temperature from the fitted amplitude ratio at ground splitting ``splitting`` (MHz)."""
        p = self.params_
        lo, hi = sorted([abs(p["A_low"]), abs(p["A_high"])])
        return spin_temperature(lo / hi, splitting, c)


class PiSlopeGFactor(RegressorMixin, BaseEstimator):
    """Linear Pi-detuning regressor exposing the excited g-factor (``X`` = field in mT)."""

    def __init__(self, g_ground=1.748, constants=DEFAULT_CONSTANTS):
        self.g_ground = g_ground
        self.constants = constants

    def fit(self, X, y):
        B = as_column(X)
        d = np.asarray(y, dtype=float).ravel()
        self.g_excited_ = g_from_pi_slope(np.column_stack([B, d]), self.g_ground, self.constants)
        self.slope_ = (self.g_excited_ - self.g_ground) * self.constants.mu_B_over_h
        self.intercept_ = float(np.mean(d - self.slope_ * B))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "g_excited_")
        return self.intercept_ + self.slope_ * as_column(X)
