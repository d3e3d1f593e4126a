"""Two-plane solutions and flatness.

A two-plane solution with slope parameter ``alpha >= 0`` and unit normal
``nu`` is ``Phi_alpha(x . nu)`` where

    Phi_alpha(t) = sqrt(1 + alpha^2) max(t, 0) + alpha min(t, 0).

For a normalized phase gap these are exactly the one-dimensional
minimizers of the homogenized energy.  The flatness of a function ``u``
in a ball is the smallest ``delta`` for which ``u`` is trapped between
the translates ``Phi_alpha(x . nu -+ delta)``.
"""

from dataclasses import dataclass
import logging
import warnings

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateSlope, EtaTooLarge, InvalidComposition, PreconditionViolated, ZeroTau

logger = logging.getLogger(__name__)

ALPHA_MIN = 1e-2
ALPHA_MAX = 1e2
N_ALPHA = 40
N_ANGLES = 64
COARSE_POINTS = 20000


@dataclass(frozen=True)
class SlopePair:
    """Slopes ``(alpha_plus, alpha_minus)`` of the two phases."""

    alpha_plus: float
    alpha_minus: float

    def __post_init__(self):
        if not (self.alpha_plus > 0 and self.alpha_minus >= 0):
            raise DegenerateSlope("need alpha_plus > 0 and alpha_minus >= 0")

    @classmethod
    def from_alpha(cls, alpha):
        """Normalized pair ``(sqrt(1 + alpha^2), alpha)``."""
        if alpha < 0:
            raise DegenerateSlope("alpha must be nonnegative")
        return cls(float(np.sqrt(1.0 + alpha * alpha)), float(alpha))

    def is_normalized(self, tol=1e-12):
        return abs(self.alpha_plus ** 2 - self.alpha_minus ** 2 - 1.0) <= tol


@dataclass(frozen=True)
class TwoPlaneFit:
    """Result of a flatness measurement."""

    delta: float
    alpha: float
    nu: np.ndarray
    achieved: bool
    radius: float = float("nan")

    def to_dict(self):
        return {"delta": float(self.delta), "alpha": float(self.alpha),
                "nu": [float(v) for v in self.nu], "achieved": bool(self.achieved)}


@dataclass(frozen=True)
class LinearizationCoefficients:
    """Coefficients ``gamma_plus``, ``gamma_minus`` and the tangential gradient ``tau``."""

    gamma_plus: float
    gamma_minus: float
    tau: np.ndarray


# ----------------------------------------------------------------------
# algebra
# ----------------------------------------------------------------------
def phi(alpha, t):
    """Two-plane profile.  ``alpha`` is a scalar or a :class:`SlopePair`."""
    t = np.asarray(t, dtype=float)
    if isinstance(alpha, SlopePair):
        ap, am = alpha.alpha_plus, alpha.alpha_minus
    else:
        if alpha < 0:
            raise DegenerateSlope("alpha must be nonnegative")
        ap, am = np.sqrt(1.0 + alpha * alpha), alpha
    return ap * np.maximum(t, 0.0) + am * np.minimum(t, 0.0)


def psi(alpha, u):
    """Inverse of :func:`phi` for ``alpha > 0``."""
    if not alpha > 0:
        raise DegenerateSlope("psi requires alpha > 0")
    u = np.asarray(u, dtype=float)
    return np.maximum(u, 0.0) / np.sqrt(1.0 + alpha * alpha) + np.minimum(u, 0.0) / alpha


def l_alpha(alpha, gamma_plus, gamma_minus):
    """Interface balance ``(1 + alpha^2) gamma_plus - alpha^2 gamma_minus``."""
    if alpha < 0:
        raise DegenerateSlope("alpha must be nonnegative")
    a2 = alpha * alpha
    return (1.0 + a2) * gamma_plus - a2 * gamma_minus


def compose_slopes(alpha, gamma_plus, gamma_minus, delta):
    """Rewrite perturbed slopes as a rescaled two-plane profile.

    Returns ``(alpha_new, lam)`` such that the profile with slopes
    ``(alpha_+ (1 + delta gamma_plus), alpha_- (1 + delta gamma_minus))``
    equals ``Phi_{alpha_new}(lam z)``.
    """
    if not alpha > 0:
        raise DegenerateSlope("compose_slopes requires alpha > 0")
    L = l_alpha(alpha, gamma_plus, gamma_minus)
    lam2 = (1.0 + 2.0 * delta * L
            + delta * delta * ((gamma_plus + gamma_minus) * L - gamma_plus * gamma_minus))
    if lam2 <= 0 or 1.0 + delta * gamma_minus <= 0:
        raise InvalidComposition(f"lambda^2 = {lam2:.6g}, 1 + delta gamma_- = "
                                 f"{1.0 + delta * gamma_minus:.6g}")
    lam = float(np.sqrt(lam2))
    return alpha * (1.0 + delta * gamma_minus) / lam, lam


def tilt_direction(tau, delta):
    """Unit vector ``cos(delta|tau|) e_d + sin(delta|tau|) tau/|tau|``.

    ``tau`` is the tangential vector (length ``d - 1``); the result has
    length ``d``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    norm = np.linalg.norm(tau)
    if norm == 0:
        raise ZeroTau("tau must be nonzero")
    angle = delta * norm
    if not 0 < angle < np.pi / 2:
        raise PreconditionViolated("need 0 < delta |tau| < pi/2")
    e = np.zeros(tau.size + 1)
    e[-1] = np.cos(angle)
    e[:-1] = np.sin(angle) * tau / norm
    return e


def verify_slope_shift(P, gamma_plus, gamma_minus, delta, points=None, n=201):
    """Sup over the unit ball of the defect of the slope-shift expansion.

    Compares ``x_d + delta (P + gamma_+ (x_d)^+ - gamma_- (x_d)^-)`` with
    ``(1 + delta gamma_+)(x_d + delta P)^+ - (1 + delta gamma_-)(x_d + delta P)^-``,
    where ``(t)^- = max(-t, 0)``.

    Parameters
    ----------
    P : callable or ndarray
        Either a function of points ``(..., d)`` or values at ``points``.
    points : ndarray, optional
        Sample points of shape ``(N, d)`` in the unit ball; a 2D grid with
        ``n`` nodes per axis is used by default.
    """
    if points is None:
        ax = np.linspace(-1.0, 1.0, n)
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
        points = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    points = np.asarray(points, dtype=float)
    p = np.asarray(P(points) if callable(P) else P, dtype=float)
    xd = points[:, -1]

    def pos(t):
        return np.maximum(t, 0.0)

    def neg(t):
        return np.maximum(-t, 0.0)

    lhs = xd + delta * (p + gamma_plus * pos(xd) - gamma_minus * neg(xd))
    s = xd + delta * p
    rhs = (1.0 + delta * gamma_plus) * pos(s) - (1.0 + delta * gamma_minus) * neg(s)
    return float(np.abs(lhs - rhs).max())


# ----------------------------------------------------------------------
# flatness
# ----------------------------------------------------------------------
def _ball_samples(u, radius, center):
    grid = u.grid
    c = grid.center if center is None else np.asarray(center, float)
    cells = grid.ball_cells(radius, c)
    if cells.sum() < 100:
        warnings.warn("flatness measured on fewer than 100 cells", stacklevel=3)
    nodes = grid.cells_to_nodes(cells)
    x = grid.node_coords()[nodes] - c
    return x, u.values[nodes]


def _direction(theta, dim):
    if dim == 1:
        return np.array([1.0 if np.cos(theta) >= 0 else -1.0])
    return np.array([np.cos(theta), np.sin(theta)])


def _delta_positive(alpha, xnu, vals):
    r = psi(alpha, vals)[..., None] - xnu if xnu.ndim == 2 else psi(alpha, vals) - xnu
    return np.abs(r).max(axis=0)


def _delta_zero(xnu, vals):
    """Flatness for ``alpha = 0`` (``Phi_0(t) = max(t, 0)``)."""
    if np.any(vals < 0):
        return np.full(xnu.shape[1:] if xnu.ndim == 2 else (), np.inf)
    v = vals[..., None] if xnu.ndim == 2 else vals
    lower = (xnu - v).max(axis=0)
    upper = np.where(v > 0, v - xnu, -np.inf).max(axis=0)
    return np.maximum(np.maximum(lower, upper), 0.0)


def flatness_at(u, radius, alpha, nu, center=None):
    """Sandwich width ``delta(alpha, nu)`` of ``u`` in the ball."""
    x, vals = _ball_samples(u, radius, center)
    xnu = x @ np.asarray(nu, float)
    if alpha == 0:
        return float(_delta_zero(xnu, vals))
    return float(_delta_positive(alpha, xnu, vals))


def measure_flatness(u, radius, center=None, rel_tol=1e-4, tie_tol=1e-6):
    """Best two-plane fit of ``u`` in the ball ``B_radius(center)``.

    A coarse search over directions and log-spaced slope parameters is
    followed by nested one-dimensional refinement.  Among fits whose width
    is within ``tie_tol * radius`` of the optimum the largest ``alpha`` is
    reported.
    """
    x, vals = _ball_samples(u, radius, center)
    return fit_two_plane(x, vals, radius, rel_tol=rel_tol, tie_tol=tie_tol)


def fit_two_plane(x, vals, radius, rel_tol=1e-4, tie_tol=1e-6):
    """Two-plane fit of values ``vals`` at points ``x`` (centred coordinates).

    ``radius`` sets the length scale of the tie tolerance.  See
    :func:`measure_flatness`.
    """
    x = np.asarray(x, dtype=float)
    vals = np.asarray(vals, dtype=float)
    dim = x.shape[1]
    tie = tie_tol * max(radius, 1e-300)

    # coarse search on a subsample
    step = 1
    if x.shape[0] > COARSE_POINTS:
        step = int(np.ceil(x.shape[0] / COARSE_POINTS))
    xs, vs = x[::step], vals[::step]
    if dim == 1:
        thetas = np.array([0.0, np.pi])
    else:
        thetas = np.arange(N_ANGLES) * 2 * np.pi / N_ANGLES
    dirs = np.stack([_direction(t, dim) for t in thetas])
    xnu_c = xs @ dirs.T
    alphas = np.geomspace(ALPHA_MIN, ALPHA_MAX, N_ALPHA)
    table = np.stack([_delta_positive(a, xnu_c, vs) for a in alphas])  # (n_alpha, n_dir)

    def full(la, th):
        return float(_delta_positive(np.exp(la), x @ _direction(th, dim), vals))

    lo_la, hi_la = np.log(ALPHA_MIN), np.log(ALPHA_MAX)
    dla = (hi_la - lo_la) / (N_ALPHA - 1)
    dth = thetas[1] - thetas[0] if dim == 2 else 0.0

    def inner(th, la0):
        res = minimize_scalar(lambda la: full(la, th), bounds=(max(la0 - dla, lo_la),
                              min(la0 + dla, hi_la)), method="bounded",
                              options={"xatol": rel_tol * 0.1})
        return res.fun, res.x

    best = None
    order = np.argsort(table, axis=None)
    seen = set()
    for flat_idx in order:
        ia, it = np.unravel_index(flat_idx, table.shape)
        key = (ia, it)
        if any(abs(ia - a) <= 1 and min(abs(it - t), len(thetas) - abs(it - t)) <= 1
               for a, t in seen):
            continue
        seen.add(key)
        la0, th0 = np.log(alphas[ia]), thetas[it]
        if dim == 1:
            val, la = inner(th0, la0)
            cand = (val, la, th0)
        else:
            memo = {}

            def outer(th):
                v, l = inner(th, la0)
                memo[th] = l
                return v

            res = minimize_scalar(outer, bounds=(th0 - dth, th0 + dth), method="bounded",
                                  options={"xatol": rel_tol * 0.1})
            la = memo.get(res.x)
            if la is None:
                _, la = inner(res.x, la0)
            cand = (res.fun, la, res.x)
        if best is None or cand[0] < best[0]:
            best = cand
        if len(seen) >= 3:
            break
    delta, la, th = best
    # the coarse optimum itself is a candidate as well
    ia, it = np.unravel_index(np.argmin(table), table.shape)
    coarse_full = full(np.log(alphas[ia]), thetas[it])
    if coarse_full < delta:
        delta, la, th = coarse_full, np.log(alphas[ia]), thetas[it]

    # maximal-alpha tie rule
    nu = _direction(th, dim)
    xnu = x @ nu
    alpha = float(np.exp(la))
    s = 1e-3
    while alpha < ALPHA_MAX:
        trial = min(alpha * (1 + s), ALPHA_MAX)
        if _delta_positive(trial, xnu, vals) <= delta + tie:
            alpha = trial
            s *= 2
        elif s > 1e-6:
            s /= 4
        else:
            break
    delta_alpha = float(_delta_positive(alpha, xnu, vals))

    # degenerate alpha = 0 candidate
    if dim == 1:
        zero = min((float(_delta_zero(x @ _direction(t, 1), vals)), t) for t in thetas)
    else:
        zero_table = _delta_zero(xnu_c, vs)
        if np.all(np.isinf(zero_table)):
            zero = (np.inf, 0.0)
        else:
            t0 = thetas[int(np.argmin(zero_table))]
            res = minimize_scalar(lambda t: float(_delta_zero(x @ _direction(t, 2), vals)),
                                  bounds=(t0 - dth, t0 + dth), method="bounded",
                                  options={"xatol": rel_tol * 0.1})
            zero = (float(res.fun), res.x)
    if zero[0] < delta_alpha - tie:
        return TwoPlaneFit(delta=zero[0], alpha=0.0, nu=_direction(zero[1], dim),
                           achieved=False, radius=float(radius))
    at_edge = alpha >= ALPHA_MAX * (1 - 1e-9) or alpha <= ALPHA_MIN * (1 + 1e-9)
    return TwoPlaneFit(delta=delta_alpha, alpha=alpha, nu=nu, achieved=not at_edge,
                       radius=float(radius))


def flat_fit_stability(u, radius, alpha0, e0, center=None):
    """Compare the best fit on a ball with a reference two-plane solution.

    Returns
    -------
    eta : float
        ``sup |Psi_alpha0(u) - x.e0| / radius`` over the ball.
    ratio_defect : float
        ``|sqrt(1 + alpha0^2) / sqrt(1 + alpha1^2) - 1|`` for the fitted ``alpha1``.
    direction_defect : float
        ``|nu1 - e0|``.
    fit : TwoPlaneFit
    """
    eta, ratio, direction, fit = stability_defects(u, radius, alpha0, e0, center, guard=True)
    return eta, ratio, direction, fit


# Resolution of the two-plane fit at the default search tolerance; the
# stability bounds are checked up to this slack.
FIT_SLACK = 1e-5


def stability_holds(eta, ratio, direction, slack=FIT_SLACK):
    """Whether ``ratio <= 24 eta`` and ``direction <= 6 sqrt(eta)`` up to ``slack``."""
    return (bool(ratio <= 24 * eta + slack), bool(direction <= 6 * np.sqrt(eta) + slack))


def stability_defects(u, radius, alpha0, e0, center=None, guard=False):
    """Same quantities as :func:`flat_fit_stability`; ``guard`` enforces ``eta < 1/100``."""
    if not alpha0 > 0:
        raise DegenerateSlope("alpha0 must be positive")
    e0 = np.asarray(e0, dtype=float)
    x, vals = _ball_samples(u, radius, center)
    eta = float(np.abs(psi(alpha0, vals) - x @ e0).max() / radius)
    if guard and eta >= 0.01:
        raise EtaTooLarge(f"eta = {eta:.4g} >= 1/100")
    fit = measure_flatness(u, radius, center=center)
    ratio = abs(np.sqrt(1 + alpha0 ** 2) / np.sqrt(1 + fit.alpha ** 2) - 1.0)
    direction = float(np.linalg.norm(fit.nu - e0))
    return eta, float(ratio), direction, fit
