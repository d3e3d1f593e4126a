"""Multi-scale diagnostics of minimizers.

Profiles over a list of radii of the averaged gradient, of the flatness
and of the distance to a fixed two-plane solution, together with the
harmonic-replacement dichotomy used to propagate Lipschitz bounds from
large to small scales.
"""

from dataclasses import dataclass, field as dc_field
import logging
import warnings

import numpy as np

from .elliptic import al_linear_fit, harmonic_replacement
from .errors import (NoInterface, NoNegativePhase, RadiiBelowMicroscale,
                     ScaleTooLarge)
from .field import grad_lp_norm
from .twoplane import measure_flatness, psi, stability_defects, stability_holds

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {"c1": 0.1, "L0": 4.0, "eta": 0.25, "theta": 0.5, "beta": 0.5}


@dataclass(frozen=True)
class ScaleProfile:
    """Values per radius with an ordinary least-squares log-log fit.

    ``exponent`` and ``constant`` describe ``value ~ constant * r**exponent``;
    ``residual`` is the root mean square of the fit in log space.
    """

    radii: tuple
    values: tuple
    exponent: float
    constant: float
    residual: float
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")

    @classmethod
    def fit(cls, radii, values, floor=1e-300, **extra):
        order = np.argsort(radii)
        r = np.asarray(radii, float)[order]
        v = np.asarray(values, float)[order]
        exponent, constant, residual = loglog_fit(r, v, floor)
        return cls(tuple(r.tolist()), tuple(v.tolist()), exponent, constant, residual, extra)

    def to_dict(self):
        return {"radii": list(self.radii), "values": list(self.values),
                "exponent": self.exponent, "constant": self.constant,
                "residual": self.residual, **_jsonable(self.extra)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def loglog_fit(radii, values, floor=1e-300):
    """Least-squares fit of ``log v = log C + p log r``; returns ``(p, C, rms residual)``."""
    r = np.asarray(radii, float)
    v = np.maximum(np.abs(np.asarray(values, float)), floor)
    if r.size < 2:
        return float("nan"), float(v[0]) if v.size else float("nan"), float("nan")
    A = np.stack([np.log(r), np.ones_like(r)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    resid = np.log(v) - A @ coef
    return float(coef[0]), float(np.exp(coef[1])), float(np.sqrt(np.mean(resid ** 2)))


def _check_radii(u, radii, r0, center):
    radii = sorted(float(r) for r in radii)
    grid = u.grid
    c = grid.center if center is None else np.asarray(center, float)
    reach = grid.radius - np.abs(c - grid.center).max()
    if radii and radii[-1] > reach + 1e-9:
        raise ScaleTooLarge(f"radius {radii[-1]:g} exceeds the computational ball {reach:g}")
    kept = [r for r in radii if r >= r0]
    if not kept:
        raise RadiiBelowMicroscale(f"all radii are below the microscale {r0:g}")
    if len(kept) < len(radii):
        warnings.warn("radii below the microscale were dropped", stacklevel=3)
    return kept


def recentre(u, center=None):
    """Node on the interface closest to ``center`` (default the grid centre)."""
    grid = u.grid
    c = grid.center if center is None else np.asarray(center, float)
    pos = (u.values > 0).astype(float)
    frac = grid.ops.mean @ pos.ravel()
    mixed = ((frac > 0) & (frac < 1)).reshape(grid.cell_shape)
    nodes = grid.cells_to_nodes(mixed)
    if not nodes.any():
        raise NoInterface("u has no sign change")
    x = grid.node_coords()[nodes]
    return x[np.argmin(np.linalg.norm(x - c, axis=1))]


def gradient_profile(u, radii, center=None, r0=4.0):
    """Profile of ``l(r) = ||grad u||`` averaged over ``B_r``.

    ``extra['lipschitz_ratio']`` is ``max_r l(r) / (1 + l(R))`` with ``R``
    the largest radius.
    """
    radii = _check_radii(u, radii, r0, center)
    vals = [grad_lp_norm(u, r, 2, center) for r in radii]
    ratio = max(vals) / (1.0 + vals[-1])
    return ScaleProfile.fit(radii, vals, lipschitz_ratio=float(ratio),
                            center=None if center is None else list(np.asarray(center, float)))


def flatness_profile(u, radii, center=None, r0=4.0, recentring=True):
    """Profile of ``flat(u, B_r) / r`` with the fitted slopes and normals.

    The balls are centred at the interface node nearest to ``center`` when
    ``recentring`` is set.  ``extra`` holds ``alpha``, ``nu`` per radius,
    ``osc_nu`` (largest pairwise distance of the normals) and
    ``osc_log_alpha``.
    """
    if recentring:
        center = recentre(u, center)
    radii = _check_radii(u, radii, r0, center)
    fits = [measure_flatness(u, r, center) for r in radii]
    vals = [f.delta / r for f, r in zip(fits, radii)]
    nus = np.array([f.nu for f in fits])
    alphas = np.array([f.alpha for f in fits])
    osc_nu = float(max(np.linalg.norm(a - b) for a in nus for b in nus))
    pos = alphas[alphas > 0]
    osc_log_alpha = float(np.ptp(np.log(pos))) if pos.size else float("nan")
    return ScaleProfile.fit(radii, vals, alpha=alphas.tolist(), nu=nus.tolist(),
                            achieved=[f.achieved for f in fits],
                            osc_nu=osc_nu, osc_log_alpha=osc_log_alpha,
                            center=np.asarray(center, float).tolist())


@dataclass(frozen=True)
class DichotomyVerdict:
    """Outcome of the harmonic-replacement dichotomy at one scale."""

    radius: float
    tag: str
    xi: np.ndarray
    thresholds: dict
    measurements: dict

    def to_dict(self):
        return {"radius": self.radius, "tag": self.tag,
                "xi": None if self.xi is None else [float(v) for v in self.xi],
                "thresholds": dict(self.thresholds), "measurements": _jsonable(self.measurements)}


def dichotomy_step(field, u, radius, thresholds=None, center=None):
    """Classify one scale as slope decay, flat regime or below threshold.

    With ``v`` the harmonic replacement of ``u`` in ``B_R`` and ``xi`` the
    best corrected-affine slope of ``v`` on ``B_{eta R}``: if
    ``|xi| <= c1 l(R)`` the gradient of ``u`` is expected to decay
    (``l(eta R)/l(R)`` is measured), otherwise ``u`` should be flat at
    scale ``2 eta R`` (the flatness and a Lipschitz ratio are measured).
    """
    th = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        th.update(thresholds)
    ell_R = grad_lp_norm(u, radius, 2, center)
    meas = {"ell_R": ell_R}
    if ell_R < th["L0"]:
        return DichotomyVerdict(float(radius), "below-threshold", None, th, meas)
    v = harmonic_replacement(u, field, radius, center)
    eta = th["eta"]
    xi, residual = al_linear_fit(v, field, eta * radius, harmonic_radius=radius, center=center)
    meas["xi_norm"] = float(np.linalg.norm(xi))
    meas["fit_residual"] = residual
    if np.linalg.norm(xi) <= th["c1"] * ell_R:
        meas["decay_ratio"] = grad_lp_norm(u, eta * radius, 2, center) / ell_R
        return DichotomyVerdict(float(radius), "slope-decay", xi, th, meas)
    r2 = 2 * eta * radius
    fit = measure_flatness(u, r2, center)
    meas["flatness"] = fit.delta / r2
    meas["alpha"] = fit.alpha
    ells = [grad_lp_norm(u, s, 2, center) for s in (eta * radius / 2, eta * radius, r2)]
    meas["lipschitz_ratio"] = max(ells) / (1.0 + ell_R)
    return DichotomyVerdict(float(radius), "flat-regime", xi, th, meas)


def dichotomy_profile(field, u, radii, thresholds=None, center=None):
    """One :class:`DichotomyVerdict` per radius."""
    return [dichotomy_step(field, u, r, thresholds, center) for r in sorted(radii)]


def liouville_fit(u, radii, center=None, r0=4.0):
    """Distance to the two-plane solution fitted at the largest radius.

    Returns
    -------
    alpha, e : float, ndarray
        Fit at the largest radius.
    profile : ScaleProfile
        ``D(r) = sup_{B_r} |Psi_alpha(u) - x.e| / r``; ``omega`` in
        ``extra`` is minus the fitted exponent.  ``extra['stability']``
        lists the flat-fit stability defects at every radius, with
        ``applicable`` set where ``D(r) < 1/100`` (the regime in which the
        bounds are guaranteed).
    """
    radii = _check_radii(u, radii, r0, center)
    grid = u.grid
    c = grid.center if center is None else np.asarray(center, float)
    R = radii[-1]
    mask = grid.cells_to_nodes(grid.ball_cells(R, c))
    if not np.any(u.values[mask] < 0):
        raise NoNegativePhase("u has no negative phase in the largest ball")
    fit = measure_flatness(u, R, c)
    if fit.alpha <= 0:
        raise NoNegativePhase("degenerate fit with alpha = 0")
    x = grid.node_coords() - c
    dev = np.abs(psi(fit.alpha, u.values) - x @ fit.nu)
    D = [float(dev[grid.cells_to_nodes(grid.ball_cells(r, c))].max() / r) for r in radii]
    stability = []
    for r in radii:
        eta, ratio, direction, f1 = stability_defects(u, r, fit.alpha, fit.nu, c)
        ratio_ok, direction_ok = stability_holds(eta, ratio, direction)
        stability.append({
            "radius": r, "eta": eta, "applicable": eta < 0.01, "alpha": f1.alpha,
            "ratio_defect": ratio, "direction_defect": direction,
            "ratio_ok": ratio_ok, "direction_ok": direction_ok,
        })
    prof = ScaleProfile.fit(radii, D, floor=1e-14, stability=stability)
    object.__setattr__(prof, "extra", {**prof.extra, "omega": -prof.exponent})
    return fit.alpha, fit.nu, prof
