"""Two-phase energies, discrete minimizers and energy diagnostics.

The discrete energy of nodal values ``u`` on a set of cells is

    u @ K @ u + sum_cells h^d (Q-^2 + (Q+^2 - Q-^2) 1{mean_cell(u) > 0}),

so the zero set belongs to the minus phase.  Minimization proceeds in
three stages: continuation in a tanh-smoothed indicator, exact
coordinate descent on the nodes, and harmonic re-solves of each phase
with the interface band held fixed.
"""

from dataclasses import dataclass, field as dc_field
import logging

import numpy as np

from .elliptic import EllipticOperator, SPDSolver, harmonic_replacement
from .errors import InputError, PreconditionViolated
from .field import GridFunction, constant_field
from .twoplane import fit_two_plane, phi, psi

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Dirichlet and volume contributions of a two-phase energy."""

    dirichlet: float
    volume_plus: float
    volume_minus: float

    @property
    def total(self):
        return self.dirichlet + self.volume_plus + self.volume_minus

    def to_dict(self):
        return {"dirichlet": self.dirichlet, "volume_plus": self.volume_plus,
                "volume_minus": self.volume_minus, "total": self.total}


@dataclass(frozen=True)
class MinimizeConfig:
    """Parameters of :func:`minimize`.

    ``epsilon`` lists the smoothing widths in units of the mesh width,
    in descending order.
    """

    epsilon: tuple = (4.0, 2.0, 1.0)
    max_iter: int = 150
    max_polish: int = 30
    armijo: float = 1e-4
    accept_rel: float = 1e-12
    converge_rel: float = 1e-10
    cd_sweeps: int = 4
    two_starts: bool = True
    method: str = "direct"
    seed: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon)
        if not eps or any(e <= 0 for e in eps) or any(a < b for a, b in zip(eps, eps[1:])):
            raise InputError("epsilon schedule must be positive and descending")
        object.__setattr__(self, "epsilon", eps)


@dataclass(frozen=True)
class MinimizerResult:
    """Outcome of a minimization run."""

    u: GridFunction
    energy: EnergyBreakdown
    iterations: int
    converged: bool
    trace: tuple = dc_field(default_factory=tuple)
    start: str = "harmonic"


# ----------------------------------------------------------------------
# energies
# ----------------------------------------------------------------------
def homogenized_field(field, abar):
    """Constant medium ``(abar, <Q+^2>, <Q-^2>)`` defining the homogenized energy."""
    qp2, qm2 = field.mean_q2()
    return constant_field(a=np.asarray(abar, float), qplus2=qp2, qminus2=qm2, dim=field.dim)


def _region_mask(grid, region, center=None):
    if region is None:
        return np.ones(grid.cell_shape, dtype=bool)
    if np.isscalar(region):
        return grid.ball_cells(float(region), center)
    mask = np.asarray(region, bool)
    if mask.shape != grid.cell_shape:
        raise InputError("region mask does not match the grid cells")
    if not mask.any():
        raise InputError("region is empty")
    return mask


def energy(field, u, region=None, center=None):
    """Energy breakdown of ``u`` over ``region``.

    ``region`` is ``None`` (all cells), a radius (ball about ``center``)
    or a boolean cell mask.
    """
    grid = u.grid
    mask = _region_mask(grid, region, center).ravel()
    A, qp2, qm2 = field.on_grid(grid)
    dens = grid.ops.density(A, u.values, grid.h)
    vol = grid.cell_volume
    plus = u.cell_means().ravel() > 0
    return EnergyBreakdown(
        dirichlet=float(vol * dens[mask].sum()),
        volume_plus=float(vol * qp2[mask & plus].sum()),
        volume_minus=float(vol * qm2[mask & ~plus].sum()),
    )


# ----------------------------------------------------------------------
# minimization
# ----------------------------------------------------------------------
class _Problem:
    """Discrete two-phase energy with Dirichlet data on the boundary layer."""

    def __init__(self, field, g, cells, method):
        grid = g.grid
        self.grid = grid
        A, qp2, qm2 = field.on_grid(grid)
        self.op = EllipticOperator(grid, A, cells)
        self.K = self.op.K
        self.kdiag = self.K.diagonal()
        w = cells.ravel() * grid.cell_volume
        self.base = float(np.sum(w * qm2))
        self.dq = w * (qp2 - qm2)
        self.B = grid.ops.mean
        self.n_corner = len(grid.ops.corner_offsets)
        self.free = grid.interior_nodes(cells).ravel()
        self.g = g.values.ravel().copy()
        self.method = method
        self._solver = None
        self.inc = grid.ops.incident_cells()
        self.colors = grid.ops.node_colors()

    @property
    def solver(self):
        if self._solver is None:
            f = self.free
            self._solver = SPDSolver(self.K[f][:, f], method=self.method)
        return self._solver

    def exact(self, u):
        m = self.B @ u
        return float(u @ (self.K @ u) + self.base + self.dq[m > 0].sum())

    def smoothed(self, u, eps):
        m = self.B @ u
        Ku = self.K @ u
        th = np.tanh(m / eps)
        E = u @ Ku + self.base + np.sum(self.dq * 0.5 * (1.0 + th))
        grad = 2.0 * Ku + self.B.T @ (self.dq * 0.5 * (1.0 - th * th) / eps)
        return float(E), grad

    def harmonic_start(self):
        u = self.g.copy()
        f = self.free
        u[f] = self.solver.solve(-(self.K[f][:, ~f] @ u[~f]))
        return u

    # coordinate descent ----------------------------------------------
    def cd_sweep(self, u, nodes=None):
        """One exact coordinate-descent sweep (colour by colour)."""
        active = self.free if nodes is None else (self.free & nodes)
        for c in range(1 << self.grid.dim):
            idx = np.flatnonzero(active & (self.colors == c))
            if idx.size == 0:
                continue
            Ku = self.K[idx] @ u
            kd = self.kdiag[idx]
            ui = u[idx]
            r = Ku - kd * ui
            cells = self.inc[idx]
            valid = cells >= 0
            safe = np.where(valid, cells, 0)
            m = self.B @ u
            S = self.n_corner * m[safe] - ui[:, None]
            T = np.where(valid, -S, np.inf)
            D = np.where(valid, self.dq[safe], 0.0)
            order = np.argsort(T, axis=1)
            T = np.take_along_axis(T, order, axis=1)
            D = np.take_along_axis(D, order, axis=1)
            n, k = T.shape
            lo = np.concatenate([np.full((n, 1), -np.inf), T], axis=1)
            hi = np.concatenate([T, np.full((n, 1), np.inf)], axis=1)
            V = np.concatenate([np.zeros((n, 1)), np.cumsum(D, axis=1)], axis=1)
            s_star = -r / kd
            lo_open = lo.copy()
            fin = np.isfinite(lo)
            lo_open[fin] += 1e-13 * (1.0 + np.abs(lo[fin]))
            with np.errstate(invalid="ignore"):
                s = np.clip(s_star[:, None], lo_open, hi)
                Ek = kd[:, None] * s * s + 2.0 * r[:, None] * s + V
            Ek = np.where((lo_open < hi) & np.isfinite(s), Ek, np.inf)
            j = np.argmin(Ek, axis=1)
            best_s = s[np.arange(n), j]
            best_E = Ek[np.arange(n), j]
            cur_V = np.sum(np.where(T < ui[:, None], D, 0.0), axis=1)
            cur_E = kd * ui * ui + 2.0 * r * ui + cur_V
            better = best_E < cur_E - 1e-14 * (np.abs(cur_E) + 1.0)
            u[idx[better]] = best_s[better]
        return u

    def band(self, u):
        """Nodes of cells whose nodal signs are mixed."""
        pos = (u > 0).astype(float)
        frac = self.B @ pos
        mixed = (frac > 0) & (frac < 1)
        nodes = np.zeros(u.size, dtype=bool)
        nodes[np.unique(self.inc_cells_to_nodes(mixed))] = True
        return nodes

    def inc_cells_to_nodes(self, cell_mask):
        idx = np.flatnonzero(cell_mask)
        return np.concatenate([self.grid.ops.corner_nodes[off][idx]
                               for off in self.grid.ops.corner_offsets]) if idx.size else idx

    def phase_solve(self, u, band_nodes, cache):
        """Harmonic re-solve of both phases with the band held fixed."""
        f = self.free & ~band_nodes
        key = f.tobytes()
        if cache.get("key") != key:
            cache["key"] = key
            cache["solver"] = SPDSolver(self.K[f][:, f], method=self.method) if f.any() else None
        v = u.copy()
        if cache["solver"] is not None:
            v[f] = cache["solver"].solve(-(self.K[f][:, ~f] @ v[~f]))
        return v


def _two_plane_start(problem, g, center):
    """Initial guess from the best two-plane fit of the boundary data."""
    grid = problem.grid
    fixed_nodes = ~problem.free
    x = grid.node_coords().reshape(-1, grid.dim) - center
    # boundary layer nodes that touch the region
    layer = fixed_nodes & problem.layer
    if layer.sum() < 4:
        return None
    vals = problem.g[layer]
    if not (np.any(vals > 0) and np.any(vals <= 0)):
        return None
    fit = fit_two_plane(x[layer], vals, grid.radius)
    if fit.alpha <= 0:
        return None
    shift = psi(fit.alpha, vals) - x[layer] @ fit.nu
    offset = 0.5 * (shift.max() + shift.min())
    u = problem.g.copy()
    f = problem.free
    u[f] = phi(fit.alpha, x[f] @ fit.nu + offset)
    return u


def _descend(problem, u, config, trace, best):
    """Continuation in the smoothing width; returns the best exact iterate."""
    h = problem.grid.h
    f = problem.free
    iterations = 0
    for eps_units in config.epsilon:
        eps = eps_units * h
        E, grad = problem.smoothed(u, eps)
        for _ in range(config.max_iter):
            iterations += 1
            d = np.zeros_like(u)
            d[f] = -0.5 * problem.solver.solve(grad[f])
            slope = float(grad[f] @ d[f])
            if slope >= 0:
                break
            t = 1.0
            accepted = False
            while t > 1e-8:
                trial = u + t * d
                E_trial, grad_trial = problem.smoothed(trial, eps)
                if E_trial <= E + config.armijo * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            decrease = E - E_trial
            u, E, grad = trial, E_trial, grad_trial
            exact = problem.exact(u)
            if exact < best[0] - config.accept_rel * abs(best[0]):
                best[0], best[1] = exact, u.copy()
                trace.append(exact)
            if decrease <= config.converge_rel * abs(E):
                break
    return iterations


def _polish(problem, u, config, trace):
    E = problem.exact(u)
    cache = {}
    converged = False
    it = 0
    for it in range(1, config.max_polish + 1):
        E_start = E
        for _ in range(config.cd_sweeps):
            u = problem.cd_sweep(u)
        E_cd = problem.exact(u)
        v = problem.phase_solve(u, problem.band(u), cache)
        E_v = problem.exact(v)
        if E_v <= E_cd:
            u, E = v, E_v
        else:
            E = E_cd
        if not trace or E < trace[-1]:
            trace.append(E)
        if E_start - E <= config.converge_rel * abs(E_start):
            converged = True
            break
    return u, E, it, converged


def minimize(field, g, radius=None, config=None, center=None, initial=None):
    """Discrete minimizer of the two-phase energy in a ball.

    Parameters
    ----------
    field : CoefficientField
    g : GridFunction
        Boundary data; its values on nodes outside the interior of the ball
        are kept.
    radius : float, optional
        Ball radius, default the grid radius.
    config : MinimizeConfig, optional
    initial : GridFunction or sequence of GridFunction, optional
        Additional starting guesses; only their values at free nodes are used.

    Returns
    -------
    MinimizerResult
    """
    config = config or MinimizeConfig()
    grid = g.grid
    if not np.all(np.isfinite(g.values)):
        raise InputError("boundary data must be finite")
    radius = grid.radius if radius is None else float(radius)
    c = grid.center if center is None else np.asarray(center, float)
    cells = grid.ball_cells(radius, c)
    problem = _Problem(field, g, cells, config.method)
    problem.layer = grid.cells_to_nodes(cells).ravel()

    starts = [("harmonic", problem.harmonic_start())]
    if config.two_starts:
        u2 = _two_plane_start(problem, g, c)
        if u2 is not None:
            starts.append(("two-plane", u2))
    if initial is not None:
        guesses = [initial] if isinstance(initial, GridFunction) else list(initial)
        for i, w in enumerate(guesses):
            if not w.grid.compatible(grid):
                raise InputError("initial guess lives on a different grid")
            u0 = problem.g.copy()
            u0[problem.free] = w.values.ravel()[problem.free]
            starts.append((f"initial-{i}", u0))

    results = []
    for name, u0 in starts:
        trace = [problem.exact(u0)]
        best = [trace[0], u0.copy()]
        n_desc = _descend(problem, u0.copy(), config, trace, best)
        u, E, n_pol, converged = _polish(problem, best[1].copy(), config, trace)
        results.append((E, name, u, n_desc + n_pol, converged, tuple(trace)))
        logger.info("start %s: energy %.12g (%d iterations, converged=%s)",
                    name, E, n_desc + n_pol, converged)
    E, name, u, iters, converged, trace = min(results, key=lambda r: r[0])
    u_out = GridFunction(grid, u.reshape(grid.node_shape))
    return MinimizerResult(u=u_out, energy=energy(field, u_out, cells), iterations=iters,
                           converged=converged, trace=trace, start=name)


# ----------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------
def harmonic_gap(field, u, radius, center=None):
    """Distance of ``grad u`` to the gradient of its harmonic replacement.

    Returns
    -------
    gap : float
        ``||grad u - grad u_B||`` averaged over the ball.
    report : dict
        ``bound`` is ``sqrt(Lambda max Q^2)``, which dominates the gap of
        any exact minimizer since the volume terms differ by at most
        ``max Q^2`` per unit volume.
    """
    v = harmonic_replacement(u, field, radius, center)
    diff = u - v
    dens = diff.grad_sq()
    mask = u.grid.ball_cells(radius, center)
    gap = float(np.sqrt(dens[mask].mean()))
    qmax2 = float(max(np.max(field.qplus) ** 2, np.max(field.qminus) ** 2))
    bound = float(np.sqrt(field.lam * qmax2))
    return gap, {"radius": float(radius), "gap": gap, "bound": bound,
                 "within_bound": gap <= bound}


def boundary_strip_energy(u, s, radius, center=None):
    """Integral of ``|grad u|^2 + 1`` over ``{0 < |u| < s}`` in the ball (cell quadrature)."""
    if not (0 < s <= radius / 2 + 1e-12):
        raise PreconditionViolated("need 0 < s <= r/2")
    grid = u.grid
    mask = grid.ball_cells(radius, center)
    m = np.abs(u.cell_means())
    strip = mask & (m > 0) & (m < s)
    return float(grid.cell_volume * np.sum(u.grad_sq()[strip] + 1.0))


def strip_growth_exponent(u, radius, center=None, fractions=(1 / 16, 1 / 8, 1 / 4, 1 / 2)):
    """Least-squares exponent of ``s -> boundary_strip_energy(u, s, r)``."""
    s = np.array([f * radius for f in fractions])
    vals = np.array([boundary_strip_energy(u, si, radius, center) for si in s])
    if np.any(vals <= 0):
        return float("nan"), vals
    slope = np.polyfit(np.log(s), np.log(vals), 1)[0]
    return float(slope), vals


def energy_difference_check(v0, v1, mu, region=None, center=None):
    """Both sides of the sub- and supersolution energy-difference inequalities.

    With ``O0 = {v0 >= 0}`` (closure of the positive set), ``O1 = {v1 > 0}``
    and ``I = int_{O1} (v1 - (v0)^+)``:

    * sub:   ``int_{O0} |grad v0|^2 - int_{O1} |grad v1|^2 >= int_{O1 \\ O0} |grad v1|^2 + 2 mu I``
      when ``Delta v1 >= mu`` on ``{v1 > (v0)^+}``;
    * super: the same left side ``<= int_{O1 \\ O0} |grad v0|^2 - 2 mu I``
      when ``Delta v0 <= -mu`` there.

    Returns
    -------
    lhs, rhs_sub, rhs_super : float
    verdicts : dict
        ``'sub'`` and ``'super'`` map to ``'holds'``, ``'fails'`` or
        ``'not-applicable'`` (hypothesis violated); ``'tolerance'`` is the
        quadrature tolerance ``10 (1 + max|grad v|^2) h`` and ``'failed'``
        lists violated hypotheses.
    """
    grid = v0.grid
    if not grid.compatible(v1.grid):
        raise InputError("v0 and v1 live on different grids")
    if mu < 0:
        raise PreconditionViolated("mu must be nonnegative")
    h = grid.h
    mask = _region_mask(grid, region, center)
    inner = grid.interior_nodes(mask)
    layer = grid.cells_to_nodes(mask) & ~inner
    a, b = v0.values, v1.values
    if np.any(a[grid.cells_to_nodes(mask)] > b[grid.cells_to_nodes(mask)] + 1e-12):
        raise PreconditionViolated("hypothesis v0 <= v1 fails")
    if np.any(np.abs(a[layer] - b[layer]) > 1e-12) or np.any(a[layer] < -1e-12):
        raise PreconditionViolated("hypothesis v0 = v1 >= 0 on the boundary fails")

    lap0 = _laplacian(a, h)
    lap1 = _laplacian(b, h)
    contact = inner & (b > np.maximum(a, 0) + 1e-14)
    stencil_tol = 1e-8 * max(1.0, mu)
    failed = []
    sub_ok = bool(np.all(lap1[contact] >= mu - stencil_tol))
    super_ok = bool(np.all(lap0[contact] <= -mu + stencil_tol))
    if not sub_ok:
        failed.append("Delta v1 >= mu on {v1 > (v0)+}")
    if not super_ok:
        failed.append("Delta v0 <= -mu on {v1 > (v0)+}")

    vol = grid.cell_volume
    g0 = v0.grad_sq()
    g1 = v1.grad_sq()
    m0 = v0.cell_means()
    m1 = v1.cell_means()
    O0 = mask & (m0 >= 0)
    O1 = mask & (m1 > 0)
    diff_set = O1 & ~O0
    excess = (v1 - GridFunction(grid, np.maximum(a, 0))).cell_means()
    I = vol * excess[O1].sum()
    lhs = vol * (g0[O0].sum() - g1[O1].sum())
    rhs_sub = vol * g1[diff_set].sum() + 2 * mu * I
    rhs_super = vol * g0[diff_set].sum() - 2 * mu * I
    gmax = float(max(g0[mask].max(), g1[mask].max()))
    tol = 10.0 * (1.0 + gmax) * h
    verdicts = {
        "sub": ("holds" if lhs >= rhs_sub - tol else "fails") if sub_ok else "not-applicable",
        "super": ("holds" if lhs <= rhs_super + tol else "fails") if super_ok else "not-applicable",
        "tolerance": tol,
        "failed": failed,
    }
    return float(lhs), float(rhs_sub), float(rhs_super), verdicts


def _laplacian(v, h):
    """Standard second-difference Laplacian at interior nodes (zero elsewhere)."""
    out = np.zeros_like(v)
    d = v.ndim
    inner = tuple(slice(1, -1) for _ in range(d))
    for k in range(d):
        lo = tuple(slice(0, -2) if j == k else slice(1, -1) for j in range(d))
        hi = tuple(slice(2, None) if j == k else slice(1, -1) for j in range(d))
        out[inner] += v[hi] + v[lo] - 2 * v[inner]
    return out / (h * h)


__all__ = [
    "EnergyBreakdown", "MinimizeConfig", "MinimizerResult", "energy", "homogenized_field",
    "minimize", "harmonic_gap", "boundary_strip_energy", "strip_growth_exponent",
    "energy_difference_check",
]
