"""Two-scale constructions linking heterogeneous and homogenized minimizers.

Upscaling mollifies a heterogeneous minimizer away from its free boundary
and from the boundary of the ball; downscaling dresses a homogenized
minimizer with the periodic correctors.  Both keep the trace on the
boundary of the ball and the sign pattern of the function they start
from.  :func:`hom_error_report` compares the resulting energies.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
import logging

import numpy as np
from scipy import ndimage

from .elliptic import correctors as compute_correctors
from .errors import PreconditionViolated, RadiiBelowMicroscale, ScaleTooLarge
from .field import Grid, GridFunction
from .minimize import MinimizeConfig, energy, homogenized_field, minimize

logger = logging.getLogger(__name__)


class CutoffProfile:
    """Cubic smoothstep: 0 on ``(-inf, 1]``, 1 on ``[2, inf)``, ``3s^2 - 2s^3`` between."""

    lower = 1.0
    upper = 2.0

    def __call__(self, s):
        x = np.clip(np.asarray(s, dtype=float) - self.lower, 0.0, 1.0)
        return x * x * (3.0 - 2.0 * x)

    def derivative(self, s):
        x = np.asarray(s, dtype=float) - self.lower
        inside = (x > 0) & (x < 1)
        return np.where(inside, 6.0 * x * (1.0 - x), 0.0)

    @property
    def max_slope(self):
        return 1.5


ZETA = CutoffProfile()


def _interface_nodes(u, radius, center):
    """Nodes of cells with mixed sign classes, plus zero nodes, inside the ball region."""
    grid = u.grid
    vals = u.values
    pos = (vals > 0).astype(float)
    frac = u.grid.ops.mean @ pos.ravel()
    mixed = ((frac > 0) & (frac < 1)).reshape(grid.cell_shape)
    nodes = grid.cells_to_nodes(mixed) | (vals == 0)
    return nodes


def fb_distance(u, radius, center=None):
    """Distance from every node to the discrete interface or the sphere.

    The targets are nodes of cells on which ``u`` changes sign (the zero
    set belongs to the minus phase), nodes where ``u = 0`` and nodes
    outside the open ball.  Distances are Euclidean distances between
    nodes; target nodes get ``0``.
    """
    grid = u.grid
    c = grid.center if center is None else np.asarray(center, float)
    dist_c = np.linalg.norm(grid.node_coords() - c, axis=-1)
    outside = dist_c >= radius - 1e-12 * max(radius, 1.0)
    targets = outside | (_interface_nodes(u, radius, c) & ~outside)
    if not targets.any():
        raise PreconditionViolated("ball covers the whole grid; no boundary targets")
    d = ndimage.distance_transform_edt(~targets, sampling=grid.h)
    return GridFunction(grid, d)


def _disk_kernel(t, h, dim):
    k = int(np.floor(t / h + 1e-9))
    ax = np.arange(-k, k + 1) * h
    pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
    ker = (np.linalg.norm(pts, axis=-1) <= t + 1e-12).astype(float)
    return ker / ker.sum()


def upscale(u, t, radius, center=None, distance=None):
    """Mollify ``u`` at scale ``t`` away from its free boundary and the sphere.

    ``ubar = zeta(d/t) xi_t + (1 - zeta(d/t)) u`` where ``xi_t`` is the
    nodal average of ``u`` over ``B_t(x)`` and ``d`` is :func:`fb_distance`.
    """
    if not 0 < t <= radius / 2:
        raise ScaleTooLarge(f"need 0 < t <= r/2, got t={t:g}, r={radius:g}")
    grid = u.grid
    d = fb_distance(u, radius, center) if distance is None else distance
    z = ZETA(d.values / t)
    active = z > 0
    xi = ndimage.correlate(u.values, _disk_kernel(t, grid.h, grid.dim), mode="nearest")
    ubar = np.where(active, z * xi + (1.0 - z) * u.values, u.values)
    # the averaging window of an active node never meets the other phase
    flipped = active & ((ubar > 0) != (u.values > 0))
    if flipped.any():
        raise PreconditionViolated("upscaling changed a sign; scale below the mesh width?")
    return GridFunction(grid, ubar)


def nodal_gradient(u):
    """Average of the gradients of the cells touching each node."""
    grid = u.grid
    ops = grid.ops
    g = ops.gradient(u.values, grid.h)
    acc = np.zeros((grid.n_nodes, grid.dim))
    cnt = np.zeros(grid.n_nodes)
    for off in ops.corner_offsets:
        nodes = ops.corner_nodes[off]
        np.add.at(acc, nodes, g)
        np.add.at(cnt, nodes, 1.0)
    return (acc / cnt[:, None]).reshape(grid.node_shape + (grid.dim,))


def downscale(u0, field, t, radius, center=None, correctors_set=None, distance=None):
    """Corrector dressing ``u0 + chi . grad u0 zeta(d/t)`` of a homogenized function."""
    if not 0 < t <= radius / 2:
        raise ScaleTooLarge(f"need 0 < t <= r/2, got t={t:g}, r={radius:g}")
    grid = u0.grid
    if correctors_set is None:
        m = grid.cells_per_period()
        if m is None:
            raise PreconditionViolated("grid must be aligned with the period")
        correctors_set = compute_correctors(field, m=m)
    d = fb_distance(u0, radius, center) if distance is None else distance
    z = ZETA(d.values / t)
    chi = correctors_set.on_grid(grid)
    grad = nodal_gradient(u0)
    dressing = sum(chi[k] * grad[..., k] for k in range(grid.dim))
    return GridFunction(grid, u0.values + z * dressing)


def strip_gradient_check(u, ubar, t, radius, center=None, distance=None, factor=9.0):
    """Compare ``int_{0<d<2t} |grad ubar|^2`` with ``factor * int_{0<d<3t} |grad u|^2`` in the ball."""
    grid = u.grid
    d = fb_distance(u, radius, center) if distance is None else distance
    dc = d.cell_means()
    ball = grid.ball_cells(radius, center)
    vol = grid.cell_volume
    lhs = vol * ubar.grad_sq()[ball & (dc > 0) & (dc < 2 * t)].sum()
    rhs = vol * u.grad_sq()[ball & (dc > 0) & (dc < 3 * t)].sum()
    slack = 10.0 * grid.h * vol * ball.sum() * (1.0 + float(u.grad_sq()[ball].max()))
    return {"lhs": float(lhs), "rhs": float(factor * rhs), "slack": float(slack),
            "holds": bool(lhs <= factor * rhs + slack)}


@dataclass(frozen=True)
class HomErrorReport:
    """Per-radius energies and defects of the two-scale comparison.

    Defects are per unit volume of ``B_r``:

    * ``upscale``: ``J0(ubar) - J0(u0)``, ``u0`` the homogenized minimizer
      with the same trace (the error of the homogenization estimate);
    * ``downscale``: ``J(u0~) - J(u)``;
    * ``energy``: ``|J(u) - J0(u0)|``;
    * ``q_volume``: ``|int Q^2 - int <Q^2>|`` over the phases of ``u``.
    """

    radii: tuple
    h: float
    gamma: float
    energies: tuple
    defects: dict
    omega: dict
    strip_checks: tuple
    converged: tuple = dc_field(default_factory=tuple)

    def to_dict(self):
        return {
            "radii": list(self.radii), "h": self.h, "gamma": self.gamma,
            "energies": [dict(e) for e in self.energies],
            "defects": {k: list(v) for k, v in self.defects.items()},
            "omega": dict(self.omega),
            "strip_checks": [dict(s) for s in self.strip_checks],
            "converged": list(self.converged),
        }


def _loglog_exponent(radii, values, floor=1e-14):
    v = np.maximum(np.abs(np.asarray(values, float)), floor)
    slope = np.polyfit(np.log(radii), np.log(v), 1)[0]
    return float(-slope)


def _one_radius(field, boundary, r, h, gamma, config, corr, hom, minimizer=None):
    dim = field.dim
    grid = Grid(dim, 2 * r, h)
    if minimizer is None:
        g = GridFunction.from_function(grid, boundary)
        res = minimize(field, g, 2 * r, config)
    else:
        res = minimizer
        grid = res.u.grid
    u = res.u
    ball = grid.ball_cells(r)
    vol = grid.cell_volume * ball.sum()

    t_up = r ** (2 * gamma / (2 * gamma + 1))
    d_u = fb_distance(u, r)
    ubar = upscale(u, t_up, r, distance=d_u)
    strip = strip_gradient_check(u, ubar, t_up, r, distance=d_u)

    res0 = minimize(hom, u, r, config)
    u0 = res0.u
    t_dn = r ** (gamma / (2 + gamma))
    u0t = downscale(u0, field, t_dn, r, correctors_set=corr)

    J_u = energy(field, u, ball)
    J0_ubar = energy(hom, ubar, ball).total
    J0_u0 = energy(hom, u0, ball).total
    J_u0t = energy(field, u0t, ball).total
    plus = (u.cell_means() > 0) & ball
    qp2_mean, qm2_mean = field.mean_q2()
    homog_volume = grid.cell_volume * (qp2_mean * plus.sum() + qm2_mean * (ball & ~plus).sum())
    q_defect = abs(J_u.volume_plus + J_u.volume_minus - homog_volume) / vol
    energies = {"r": float(r), "J_of_u": J_u.total, "J0_of_ubar": J0_ubar, "J0_of_u0": J0_u0,
                "J_of_u0tilde": J_u0t, "t_up": t_up, "t_down": t_dn, "volume": vol,
                "grad_l2_sq": float(u.grad_sq()[grid.ball_cells(min(2 * r, grid.radius))].mean())}
    defects = {
        "upscale": (J0_ubar - J0_u0) / vol,
        "downscale": (J_u0t - J_u.total) / vol,
        "energy": abs(J_u.total - J0_u0) / vol,
        "q_volume": q_defect,
    }
    return energies, defects, strip, bool(res.converged and res0.converged)


def hom_error_report(field, boundary, radii, h=0.25, gamma=0.25, r0=4.0, config=None,
                     threads=1, minimizers=None):
    """Energy homogenization defects over a list of radii.

    Parameters
    ----------
    field : CoefficientField
    boundary : callable
        Boundary data as a function of node coordinates ``(..., d)``.
    radii : sequence of float
        Radii ``r``; the heterogeneous minimizer is computed on ``B_{2r}``.
    h : float
        Mesh width; ``1/h`` must be an integer so that the correctors tile.
    gamma : float
        Exponent in the scale rules ``t = r^(2g/(2g+1))`` (upscaling) and
        ``t = r^(g/(2+g))`` (downscaling).
    r0 : float
        Microscale floor; radii below it are dropped.
    minimizers : dict, optional
        Precomputed heterogeneous minimizers keyed by radius.
    """
    radii = sorted(float(r) for r in radii)
    kept = [r for r in radii if r >= r0]
    if not kept:
        raise RadiiBelowMicroscale(f"all radii are below the microscale {r0:g}")
    if len(kept) < len(radii):
        logger.warning("dropping radii below the microscale %g", r0)
    config = config or MinimizeConfig()
    m = int(round(1.0 / h))
    corr = compute_correctors(field, m=m)
    hom = homogenized_field(field, corr.abar)
    minimizers = minimizers or {}

    def job(r):
        return _one_radius(field, boundary, r, h, gamma, config, corr, hom, minimizers.get(r))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(job, kept))
    else:
        out = [job(r) for r in kept]
    energies = tuple(o[0] for o in out)
    keys = out[0][1].keys()
    defects = {k: tuple(float(o[1][k]) for o in out) for k in keys}
    omega = {k: (_loglog_exponent(kept, v) if len(kept) > 1 else float("nan"))
             for k, v in defects.items()}
    return HomErrorReport(radii=tuple(kept), h=float(h), gamma=float(gamma), energies=energies,
                          defects=defects, omega=omega, strip_checks=tuple(o[2] for o in out),
                          converged=tuple(o[3] for o in out))
