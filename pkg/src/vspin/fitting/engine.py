"""Bounded nonlinear least squares.

A Nelder-Mead simplex stage finds the basin, a Levenberg-Marquardt stage
polishes the minimum, and the covariance comes from the Jacobian at the
optimum.  Bounds are enforced by smooth invertible transforms, so both
stages run unconstrained.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares as _lm
from scipy.optimize import minimize

from ..errors import InvalidParameterError

log = logging.getLogger(__name__)

MAX_EVALUATIONS = 10_000
XTOL = 1e-8
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a fit.

    Attributes
    ----------
    parameters, uncertainties : dict
        Best values and one-sigma errors by parameter name.
    units : dict
    residual_norm : float
        Euclidean norm of the (weighted) residual vector.
    converged : bool
    evaluations : int
        Model evaluations across all stages.
    iterations : int
        Jacobian evaluations of the refinement stage.
    flags : tuple of str
        Diagnostics such as ``"rank-deficient"`` or ``"max-evaluations"``.
    covariance : ndarray, optional
    """

    parameters: dict
    uncertainties: dict
    units: dict = field(default_factory=dict)
    residual_norm: float = np.nan
    converged: bool = False
    evaluations: int = 0
    iterations: int = 0
    flags: tuple = ()
    covariance: np.ndarray = None

    def __getitem__(self, name):
        return self.parameters[name]

    def sigma(self, name):
        return self.uncertainties[name]

    def to_dict(self):
        clean = lambda v: None if v is None or not np.isfinite(v) else float(v)
        return {
            "parameters": {k: clean(v) for k, v in self.parameters.items()},
            "uncertainties": {k: clean(v) for k, v in self.uncertainties.items()},
            "units": dict(self.units),
            "residual_norm": clean(self.residual_norm),
            "converged": bool(self.converged),
            "evaluations": int(self.evaluations),
            "iterations": int(self.iterations),
            "flags": list(self.flags),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


# ---------------------------------------------------------------------------
# bound transforms


class _Transform:
    """Map between internal unconstrained ``u`` and external bounded ``x``."""

    def __init__(self, lower, upper):
        self.lo = np.asarray(lower, dtype=float)
        self.hi = np.asarray(upper, dtype=float)
        self.both = np.isfinite(self.lo) & np.isfinite(self.hi)
        self.lower_only = np.isfinite(self.lo) & ~np.isfinite(self.hi)
        self.upper_only = ~np.isfinite(self.lo) & np.isfinite(self.hi)

    def external(self, u):
        x = np.array(u, dtype=float)
        b, l, h = self.both, self.lower_only, self.upper_only
        x[b] = self.lo[b] + (self.hi[b] - self.lo[b]) * (np.sin(u[b]) + 1) / 2
        x[l] = self.lo[l] - 1 + np.sqrt(u[l] ** 2 + 1)
        x[h] = self.hi[h] + 1 - np.sqrt(u[h] ** 2 + 1)
        return x

    def internal(self, x):
        u = np.array(x, dtype=float)
        b, l, h = self.both, self.lower_only, self.upper_only
        u[b] = np.arcsin(np.clip(2 * (x[b] - self.lo[b]) / (self.hi[b] - self.lo[b]) - 1, -1, 1))
        u[l] = np.sqrt((x[l] - self.lo[l] + 1) ** 2 - 1)
        u[h] = np.sqrt((self.hi[h] - x[h] + 1) ** 2 - 1)
        return u


def _normalize_bounds(names, bounds):
    lower = np.full(len(names), -np.inf)
    upper = np.full(len(names), np.inf)
    for k, name in enumerate(names):
        lo, hi = (bounds or {}).get(name, (None, None))
        lower[k] = -np.inf if lo is None else lo
        upper[k] = np.inf if hi is None else hi
        if lower[k] >= upper[k]:
            raise InvalidParameterError(f"empty bounds for {name}: [{lower[k]}, {upper[k]}]")
    return lower, upper


def numeric_jacobian(fun, x, rel_step=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1e-3)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return J


def covariance_from_jacobian(J, residual, absolute_sigma=False):
    """Linearized parameter covariance and a full-rank flag.

    With ``absolute_sigma`` false the covariance is scaled by the reduced
    chi-square, as appropriate for unweighted residuals.
    """
    n, m = J.shape
    scale = np.sqrt(np.sum(J ** 2, axis=0))
    scale[scale == 0] = 1.0
    Js = J / scale
    _, s, vt = np.linalg.svd(Js, full_matrices=False)
    full_rank = s.size == m and s[-1] > RANK_RTOL * max(s[0], 1e-300) and s[0] > 0
    if not full_rank:
        return np.full((m, m), np.nan), False
    cov = (vt.T / s ** 2) @ vt / np.outer(scale, scale)
    if not absolute_sigma:
        dof = n - m
        chi2 = float(residual @ residual)
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    return cov, True


def least_squares(model, initial, data, bounds=None, sigma=None, *, max_evaluations=MAX_EVALUATIONS,
                  xtol=XTOL, simplex=True, refine=True, absolute_sigma=None, units=None):
    """Fit ``model(params) -> prediction`` to ``data``.

    Parameters
    ----------
    model : callable
        Maps a float array, ordered like ``initial``, to a prediction with
        the shape of ``data``.
    initial : dict
        Starting values by parameter name; must lie within ``bounds``.
    data : array_like
    bounds : dict, optional
        ``name -> (lower, upper)``; either side may be None.
    sigma : array_like, optional
        Per-point standard deviations.  When given, uncertainties are
        absolute unless ``absolute_sigma=False``.
    simplex, refine : bool
        Enable the Nelder-Mead and Levenberg-Marquardt stages.

    Returns
    -------
    FitResult
        Non-convergence is reported through ``converged`` and ``flags``;
        the best point found is still returned.
    """
    names = list(initial)
    x0 = np.array([float(initial[k]) for k in names])
    y = np.asarray(data, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise InvalidParameterError("data must be finite")
    if not np.all(np.isfinite(x0)):
        raise InvalidParameterError("initial parameters must be finite")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float).ravel()
    if w.shape != y.shape or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidParameterError("sigma must be positive, finite and match the data")
    if absolute_sigma is None:
        absolute_sigma = sigma is not None
    lower, upper = _normalize_bounds(names, bounds)
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise InvalidParameterError("initial parameters must lie within bounds")
    tr = _Transform(lower, upper)

    evals = [0]

    def resid_x(x):
        evals[0] += 1
        pred = np.asarray(model(x), dtype=float).ravel()
        if pred.shape != y.shape:
            raise InvalidParameterError(f"model returned shape {pred.shape}, expected {y.shape}")
        r = (pred - y) * w
        return np.where(np.isfinite(r), r, 1e150)

    def resid_u(u):
        return resid_x(tr.external(u))

    flags = []
    u = tr.internal(x0)
    ok = True
    iterations = 0
    budget = max_evaluations
    if simplex and budget > 0:
        res = minimize(lambda v: float(np.sum(resid_u(v) ** 2)), u, method="Nelder-Mead",
                       options={"maxfev": budget, "xatol": xtol, "fatol": 1e-14 * max(1.0, y @ y * w.mean() ** 2),
                                "adaptive": u.size > 2})
        u = res.x
        ok = ok and res.success
    if refine and evals[0] < max_evaluations and u.size <= y.size:
        res = _lm(resid_u, u, method="lm", xtol=max(xtol, 2.3e-16), ftol=1e-15, gtol=1e-15,
                  max_nfev=max(max_evaluations - evals[0], 2 * u.size + 1), x_scale="jac")
        u = res.x
        iterations = int(res.njev or 0)
        ok = res.status > 0
    elif refine and u.size > y.size:
        flags.append("underdetermined")
        ok = False
    if evals[0] >= max_evaluations:
        flags.append("max-evaluations")
        ok = False

    x = tr.external(u)
    r = resid_x(x)
    J = numeric_jacobian(lambda v: resid_x(v), x)
    cov, full_rank = covariance_from_jacobian(J, r, absolute_sigma)
    if not full_rank:
        flags.append("rank-deficient")
        ok = False
    at_bound = (np.isclose(x, lower) & np.isfinite(lower)) | (np.isclose(x, upper) & np.isfinite(upper))
    for k in np.nonzero(at_bound)[0]:
        flags.append(f"at-bound:{names[k]}")
    sig = np.sqrt(np.clip(np.diag(cov), 0, None)) if full_rank else np.full(len(names), np.nan)
    if not ok:
        log.info("fit not converged: %s", ", ".join(flags) or "stage failure")
    return FitResult(
        parameters=dict(zip(names, map(float, x))),
        uncertainties=dict(zip(names, map(float, sig))),
        units=dict(units or {}),
        residual_norm=float(np.linalg.norm(r)),
        converged=bool(ok),
        evaluations=int(evals[0]),
        iterations=iterations,
        flags=tuple(flags),
        covariance=cov,
    )
