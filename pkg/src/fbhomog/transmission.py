"""The linearized transmission problem on the unit ball.

For ``alpha`` in ``[0, inf]`` find ``w`` harmonic in both half balls
``{x_d > 0}`` and ``{x_d < 0}``, continuous across the flat interface and
satisfying the flux balance ``(1 + alpha^2) d+w = alpha^2 d-w`` there,
with prescribed values on the sphere.  ``alpha = inf`` is the Laplace
equation in the whole ball; ``alpha = 0`` decouples into a Neumann
problem above and a Dirichlet problem below.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import EllipticOperator, RESIDUAL_TOL, backward_scale
from .errors import InputError, NotFlat, PreconditionViolated, SolverDivergence
from .field import Grid, GridFunction
from .twoplane import l_alpha, phi, psi

logger = logging.getLogger(__name__)

ALPHA_INF = 1e8


@dataclass(frozen=True)
class TransmissionProblem:
    """Data of a transmission solve.

    ``alpha`` may be ``np.inf``; ``data`` is a function of node
    coordinates ``(..., d)``; the unit ball is resolved with ``n`` cells
    per unit length (mesh width ``1/n``).
    """

    alpha: float
    data: object
    n: int = 32
    dim: int = 2
    scheme: str = "flux"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise InputError("alpha must be nonnegative")
        if self.n < 4:
            raise InputError("need at least 4 cells per unit length")
        if self.scheme not in ("flux", "one-sided"):
            raise InputError(f"unknown scheme {self.scheme!r}")

    @property
    def grid(self):
        return Grid(self.dim, 1.0, 1.0 / self.n)


@dataclass(frozen=True)
class TransmissionSolution:
    """Solution values and the interface derivatives at the origin."""

    w: GridFunction
    alpha: float
    gamma_plus: float
    gamma_minus: float
    tau: np.ndarray

    def balance(self):
        """``L_alpha(gamma_plus, gamma_minus)`` (``nan`` for ``alpha = inf``)."""
        if np.isinf(self.alpha):
            return float("nan")
        return l_alpha(self.alpha, self.gamma_plus, self.gamma_minus)

    def to_dict(self):
        return {"alpha": "inf" if np.isinf(self.alpha) else float(self.alpha),
                "gamma_plus": self.gamma_plus, "gamma_minus": self.gamma_minus,
                "tau": [float(t) for t in self.tau], "balance": self.balance()}


def _layout(grid):
    cells = grid.ball_cells(1.0)
    free = grid.interior_nodes(cells)
    xd_nodes = grid.node_coords()[..., -1]
    xd_cells = grid.cell_centers()[..., -1]
    return cells, free, xd_nodes, xd_cells


def _solve_flux(grid, alpha, values):
    cells, free, xd_nodes, xd_cells = _layout(grid)
    d = grid.dim
    if np.isinf(alpha) or alpha > ALPHA_INF:
        k = np.ones(grid.cell_shape)
    else:
        a2 = alpha * alpha
        k = np.where(xd_cells > 0, 1.0, a2 / (1.0 + a2))
    A = k.reshape(-1, 1, 1) * np.eye(d)
    if alpha == 0:
        upper = cells & (xd_cells > 0)
        op = EllipticOperator(grid, np.broadcast_to(np.eye(d), A.shape), upper)
        free_up = free & (xd_nodes >= -1e-12) & grid.cells_to_nodes(upper)
        vals = op.solve_dirichlet(values, free_up)
        lower = cells & (xd_cells < 0)
        op = EllipticOperator(grid, np.broadcast_to(np.eye(d), A.shape), lower)
        free_lo = free & (xd_nodes < -1e-12)
        vals = op.solve_dirichlet(vals, free_lo)
        _check(op, vals, free_lo)
        return vals
    op = EllipticOperator(grid, A, cells)
    vals = op.solve_dirichlet(values, free)
    _check(op, vals, free)
    return vals


def _check(op, vals, free):
    res = op.residual(vals, free)
    if res > 1e-9:
        raise SolverDivergence(f"transmission residual {res:.2e}")


def _solve_one_sided(grid, alpha, values):
    """Five point Laplacian off the interface, first-order flux balance on it."""
    cells, free, xd_nodes, _ = _layout(grid)
    h = grid.h
    shape = grid.node_shape
    idx = np.flatnonzero(free.ravel())
    pos = -np.ones(grid.n_nodes, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    multi = np.array(np.unravel_index(idx, shape))
    on_plane = np.abs(xd_nodes.ravel()[idx]) < 0.5 * h
    inf_case = np.isinf(alpha) or alpha > ALPHA_INF
    rows, cols, data = [], [], []
    rhs = np.zeros(idx.size)
    flat_vals = np.asarray(values, float).ravel()

    def add(row_ids, nbr_multi, coef):
        nbr = np.ravel_multi_index(nbr_multi, shape)
        p = pos[nbr]
        inside = p >= 0
        rows.append(row_ids[inside])
        cols.append(p[inside])
        data.append(np.broadcast_to(coef, row_ids.shape)[inside])
        np.subtract.at(rhs, row_ids[~inside],
                       np.broadcast_to(coef, row_ids.shape)[~inside] * flat_vals[nbr[~inside]])

    all_rows = np.arange(idx.size)
    lap = all_rows if inf_case else all_rows[~on_plane]
    for k in range(grid.dim):
        for s in (-1, 1):
            nb = multi[:, lap].copy()
            nb[k] += s
            add(lap, nb, 1.0)
    rows.append(lap)
    cols.append(lap)
    data.append(np.full(lap.size, -2.0 * grid.dim))
    if not inf_case:
        itf = all_rows[on_plane]
        a2 = alpha * alpha
        up = multi[:, itf].copy()
        up[-1] += 1
        dn = multi[:, itf].copy()
        dn[-1] -= 1
        add(itf, up, 1.0 + a2)
        add(itf, dn, a2)
        rows.append(itf)
        cols.append(itf)
        data.append(np.full(itf.size, -(1.0 + 2.0 * a2)))
    M = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(idx.size, idx.size))
    x = spla.spsolve(M.tocsc(), rhs)
    res = np.linalg.norm(M @ x - rhs)
    if res > RESIDUAL_TOL * backward_scale(M, x, rhs):
        raise SolverDivergence(f"transmission residual {res:.2e}")
    out = flat_vals.copy()
    out[idx] = x
    return out.reshape(shape)


def _derivatives(grid, w):
    """Second-order one-sided normal derivatives and central tangential gradient at 0."""
    h = grid.h
    c = grid.half
    centre = (c,) * grid.dim

    def at(offset_d, offset_t=None):
        i = list(centre)
        i[-1] += offset_d
        if offset_t is not None:
            k, s = offset_t
            i[k] += s
        return w[tuple(i)]

    gp = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    gm = (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
    tau = np.array([(at(0, (k, 1)) - at(0, (k, -1))) / (2.0 * h) for k in range(grid.dim - 1)])
    return float(gp), float(gm), tau


def solve_transmission(problem):
    """Solve (T-alpha) on the unit ball; see :class:`TransmissionProblem`."""
    grid = problem.grid
    if grid.half % 1:
        raise PreconditionViolated("the interface must be a node plane")
    values = np.asarray(problem.data(grid.node_coords()), dtype=float)
    values = np.broadcast_to(values, grid.node_shape).copy()
    if not np.all(np.isfinite(values)):
        raise InputError("boundary data must be finite")
    if problem.scheme == "one-sided" and problem.alpha != 0:
        w = _solve_one_sided(grid, problem.alpha, values)
    else:
        w = _solve_flux(grid, problem.alpha, values)
    gp, gm, tau = _derivatives(grid, w)
    alpha = np.inf if problem.alpha > ALPHA_INF else float(problem.alpha)
    return TransmissionSolution(w=GridFunction(grid, w), alpha=alpha, gamma_plus=gp,
                                gamma_minus=gm, tau=tau)


def interface_balance(solution):
    """Discrete first-order balance ``(1+a^2) d+w - a^2 d-w`` at every interface node."""
    w = solution.w
    grid = w.grid
    h = grid.h
    c = grid.half
    a2 = solution.alpha ** 2
    vals = w.values
    cells = grid.ball_cells(1.0)
    free = grid.interior_nodes(cells)
    sl = [slice(None)] * grid.dim
    sl[-1] = c
    row = vals[tuple(sl)]
    sl[-1] = c + 1
    up = vals[tuple(sl)]
    sl[-1] = c - 1
    dn = vals[tuple(sl)]
    sl[-1] = c
    mask = free[tuple(sl)]
    return ((1.0 + a2) * (up - row) - a2 * (row - dn))[mask] / h


def transmission_continuity(alphas, alpha_star, data, n=32, dim=2, scheme="flux"):
    """Sup-norm deviations ``||w_alpha_k - w_alpha*||`` over the closed unit ball."""
    ref = solve_transmission(TransmissionProblem(alpha_star, data, n, dim, scheme)).w
    nodes = ref.grid.cells_to_nodes(ref.grid.ball_cells(1.0))
    out = []
    for a in alphas:
        w = solve_transmission(TransmissionProblem(a, data, n, dim, scheme)).w
        out.append(float(np.abs(w.values - ref.values)[nodes].max()))
    return np.array(out)


def flat_correction(u, alpha, delta, radius=None, center=None):
    """Flat correction ``(Psi_alpha(u) - x_d) / delta`` on the ball.

    Raises :class:`NotFlat` at the first node where ``u`` leaves the
    sandwich ``Phi_alpha(x_d -+ delta)``.  Values outside the ball are
    set to ``nan``.
    """
    if not (alpha > 0 and delta > 0):
        raise InputError("need alpha > 0 and delta > 0")
    grid = u.grid
    radius = grid.radius if radius is None else radius
    c = grid.center if center is None else np.asarray(center, float)
    nodes = grid.cells_to_nodes(grid.ball_cells(radius, c))
    xd = grid.node_coords()[..., -1] - c[-1]
    w = (psi(alpha, u.values) - xd) / delta
    bad = nodes & (np.abs(w) > 1.0 + 1e-12)
    if bad.any():
        i = np.argwhere(bad)[0]
        x = grid.node_coords()[tuple(i)]
        raise NotFlat(f"u is not (alpha, delta)-flat at node {x.tolist()}: |w| = "
                      f"{abs(w[tuple(i)]):.4g}")
    return GridFunction(grid, np.where(nodes, w, np.nan))


def expansion_residual(u, alpha, delta, w, radius=0.5):
    """Smallest ``eta`` with ``Phi(x_d + delta w -+ eta delta)`` sandwiching ``u`` on ``B_radius``.

    ``w`` is a :class:`TransmissionSolution` or a :class:`GridFunction`
    on the grid of ``u`` with ``w(0) = 0``.
    """
    wf = w.w if isinstance(w, TransmissionSolution) else w
    grid = u.grid
    if not grid.compatible(wf.grid):
        raise InputError("u and w must share a grid")
    c = grid.half
    if abs(wf.values[(c,) * grid.dim]) > 1e-9:
        raise PreconditionViolated("w must vanish at the origin")
    nodes = grid.cells_to_nodes(grid.ball_cells(radius))
    xd = grid.node_coords()[..., -1]
    dev = np.abs(psi(alpha, u.values) - xd - delta * wf.values)[nodes]
    return float(dev.max() / delta)


def c11_fit(solution, radii):
    """Fit ``w - w(0)`` by ``tau.x' + g+ (x_d)^+ + g- min(x_d, 0)`` on balls ``B_r``.

    Returns a dict with per-radius coefficients and sup defects, the
    constant ``C = max defect / r^2``, the log-log slope of the defect and
    the coefficient ratio ``(|tau| + |g+| + |g-|) / ||w||_inf``.
    """
    w = solution.w
    grid = w.grid
    x = grid.node_coords()
    w0 = w.values[(grid.half,) * grid.dim]
    out = {"radii": [], "tau": [], "gamma_plus": [], "gamma_minus": [], "defect": []}
    for r in sorted(radii):
        nodes = grid.cells_to_nodes(grid.ball_cells(r))
        pts = x[nodes]
        y = w.values[nodes] - w0
        xd = pts[:, -1]
        cols = [pts[:, k] for k in range(grid.dim - 1)]
        cols += [np.maximum(xd, 0.0), np.minimum(xd, 0.0)]
        B = np.stack(cols, axis=1)
        coef, *_ = np.linalg.lstsq(B, y, rcond=None)
        defect = float(np.abs(y - B @ coef).max())
        out["radii"].append(float(r))
        out["tau"].append(coef[:-2].tolist())
        out["gamma_plus"].append(float(coef[-2]))
        out["gamma_minus"].append(float(coef[-1]))
        out["defect"].append(defect)
    radii_arr = np.array(out["radii"])
    defects = np.array(out["defect"])
    out["constant"] = float(np.max(defects / radii_arr ** 2))
    if len(radii_arr) > 1 and np.all(defects > 0):
        out["slope"] = float(np.polyfit(np.log(radii_arr), np.log(defects), 1)[0])
    else:
        out["slope"] = float("nan")
    wmax = float(np.abs(w.values[grid.cells_to_nodes(grid.ball_cells(1.0))]).max())
    size = np.linalg.norm(solution.tau) + abs(solution.gamma_plus) + abs(solution.gamma_minus)
    out["coefficient_ratio"] = float(size / wmax) if wmax > 0 else 0.0
    return out


def two_plane_perturbation(alpha, delta, w):
    """Nodal ``Phi_alpha(x_d + delta w)`` on the grid of ``w``."""
    wf = w.w if isinstance(w, TransmissionSolution) else w
    xd = wf.grid.node_coords()[..., -1]
    return GridFunction(wf.grid, phi(alpha, xd + delta * wf.values))
