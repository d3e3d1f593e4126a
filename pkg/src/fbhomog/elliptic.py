"""Discrete a-harmonic problems: Dirichlet solves, cell correctors, the
homogenized matrix, dual (Neumann) energies and fits by corrected affine
functions.
"""

from dataclasses import dataclass
import logging
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._stencil import cell_ops
from .errors import InputError, NotHarmonic, PreconditionViolated, SolverDivergence
from .field import Grid, GridFunction

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def pcg(A, b, x0=None, tol=RESIDUAL_TOL, maxiter=None, project=False):
    """Jacobi preconditioned conjugate gradients.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive (semi-)definite matrix.
    b : ndarray
        Right-hand side.
    project : bool
        Remove the mean of iterates and residuals; used for systems whose
        kernel is the constants (periodic or pure Neumann problems).

    Returns
    -------
    x : ndarray
    n_iter : int
    """
    n = b.size
    if maxiter is None:
        maxiter = 50 * max(int(round(n ** 0.5)), 1)
    diag = A.diagonal().copy()
    diag[diag <= 0] = 1.0
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    if project:
        b = b - b.mean()
        x -= x.mean()
    r = b - A @ x
    bnorm = max(np.linalg.norm(b), 1e-300)
    z = r / diag
    if project:
        z -= z.mean()
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it - 1
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        z = r / diag
        if project:
            z -= z.mean()
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(b - A @ x) <= tol * bnorm:
        return x, maxiter
    raise SolverDivergence(
        f"conjugate gradients stalled at relative residual "
        f"{np.linalg.norm(b - A @ x) / bnorm:.3e}"
    )


def backward_scale(A, x, b):
    """Scale ``||A||_1 ||x|| + ||b||`` of the normwise backward error of ``A x = b``."""
    norm_a = float(abs(A).sum(axis=0).max()) if A.shape[0] else 0.0
    return max(norm_a * np.linalg.norm(x) + np.linalg.norm(b), 1e-300)


class SPDSolver:
    """Factorized (or iterative) solver for a fixed sparse SPD matrix."""

    def __init__(self, A, method="direct", tol=RESIDUAL_TOL):
        if method not in ("direct", "cg"):
            raise InputError(f"unknown solver method {method!r}")
        self.A = A.tocsc()
        self.method = method
        self.tol = tol
        self._lu = None
        if method == "direct" and A.shape[0] > 0:
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.size == 0:
            return b.copy()
        if self.method == "direct":
            x = self._lu.solve(b)
            res = np.linalg.norm(self.A @ x - b)
            if res > self.tol * backward_scale(self.A, x, b):
                # one step of iterative refinement before giving up
                x = x + self._lu.solve(b - self.A @ x)
                res = np.linalg.norm(self.A @ x - b)
                if res > self.tol * backward_scale(self.A, x, b):
                    raise SolverDivergence(f"direct solve residual {res:.3e}")
            return x
        x, _ = pcg(self.A, b, tol=self.tol)
        return x


# ----------------------------------------------------------------------
# operators on grids
# ----------------------------------------------------------------------
class EllipticOperator:
    """Discrete Dirichlet energy ``u -> u @ K @ u`` on a set of cells.

    Parameters
    ----------
    grid : Grid
    A : ndarray, shape (n_cells, d, d)
        Cell coefficient matrices.
    cell_mask : ndarray of bool, optional
        Cells that belong to the region; defaults to all cells.
    """

    def __init__(self, grid, A, cell_mask=None):
        self.grid = grid
        self.A = np.asarray(A, dtype=float).reshape(grid.n_cells, grid.dim, grid.dim)
        if cell_mask is None:
            cell_mask = np.ones(grid.cell_shape, dtype=bool)
        self.cell_mask = np.asarray(cell_mask, bool)
        self.weight = self.cell_mask.ravel().astype(float)
        self.K = grid.ops.stiffness(self.A, grid.h, self.weight)

    def energy(self, u):
        u = _values(u).ravel()
        return float(u @ (self.K @ u))

    def solve_dirichlet(self, values, free, method="direct", solver=None, rhs=None):
        """Minimize the energy over ``free`` nodes, other nodes held at ``values``.

        ``rhs`` is an optional additional linear term ``-2 rhs @ u``.
        Returns the full nodal array.  A pre-built :class:`SPDSolver` for
        ``K[free][:, free]`` may be passed to reuse its factorization.
        """
        u = np.array(_values(values), dtype=float).ravel()
        free = np.asarray(free, bool).ravel()
        if not free.any():
            return u.reshape(self.grid.node_shape)
        fixed = ~free
        b = -(self.K[free][:, fixed] @ u[fixed])
        if rhs is not None:
            b = b + np.asarray(rhs, float).ravel()[free]
        if solver is None:
            solver = SPDSolver(self.K[free][:, free], method=method)
        u[free] = solver.solve(b)
        return u.reshape(self.grid.node_shape)

    def residual(self, u, free):
        """Max-norm of the discrete equation on ``free`` nodes, relative to the data."""
        u = _values(u).ravel()
        free = np.asarray(free, bool).ravel()
        r = (self.K @ u)[free]
        scale = np.abs(self.K.diagonal()).max() * max(np.abs(u).max(), 1e-300)
        return float(np.abs(r).max() / scale) if r.size else 0.0


def _values(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def operator_for(grid, field, cell_mask=None):
    """:class:`EllipticOperator` with the coefficients of ``field`` on ``grid``."""
    A, _, _ = field.on_grid(grid)
    return EllipticOperator(grid, A, cell_mask)


def harmonic_replacement(u, field, radius, center=None, method="direct"):
    """Discrete a-harmonic function equal to ``u`` outside the ball.

    Nodes all of whose cells lie in the ball are replaced; the others keep
    the values of ``u``.
    """
    grid = u.grid
    cells = grid.ball_cells(radius, center)
    op = operator_for(grid, field, cells)
    free = grid.interior_nodes(cells)
    return GridFunction(grid, op.solve_dirichlet(u.values, free, method=method))


# ----------------------------------------------------------------------
# periodic cell problems
# ----------------------------------------------------------------------
def _default_resolution(field, m):
    if m is None:
        m = min(field.cell_resolution, 256 if field.dim == 1 else 128)
    m = int(m)
    if m < 2:
        raise InputError("cell resolution must be at least 2")
    return m


@dataclass(frozen=True)
class CorrectorSet:
    """Periodic correctors for the unit vectors together with ``abar``.

    ``values[k]`` holds the mean-zero nodal corrector for ``e_k`` on the
    periodic ``m``-grid of the unit cell.
    """

    m: int
    values: np.ndarray
    abar: np.ndarray
    residuals: tuple

    @property
    def h(self):
        return 1.0 / self.m

    def corrector(self, q):
        """Nodal corrector of the slope ``q`` (by linearity)."""
        q = np.asarray(q, dtype=float)
        return np.tensordot(q, self.values, axes=1)

    def on_grid(self, grid, q=None):
        """Tile the correctors onto an aligned grid.

        Returns an array of shape ``(d,) + grid.node_shape`` or, when ``q``
        is given, the single corrector of ``q``.
        """
        m = grid.cells_per_period()
        if m != self.m:
            raise PreconditionViolated(
                f"grid resolution 1/h={1 / grid.h:g} does not match corrector resolution {self.m}"
            )
        offset = np.round(grid.origin / grid.h).astype(int) % m
        idx = [(np.arange(grid.n) + offset[k]) % m for k in range(grid.dim)]
        sel = (slice(None),) + tuple(np.meshgrid(*idx, indexing="ij"))
        tiled = self.values[sel]
        if q is None:
            return tiled
        return np.tensordot(np.asarray(q, float), tiled, axes=1)


def solve_corrector(field, q, m=None, method="direct"):
    """Mean-zero periodic corrector of the slope ``q``.

    Returns the nodal values on the periodic ``m``-grid of the unit cell
    (shape ``(m,)*d``), so that ``q.x + chi`` is discretely a-harmonic.
    """
    m = _default_resolution(field, m)
    q = np.asarray(q, dtype=float).reshape(field.dim)
    K, ops, A = _periodic_system(field, m)
    b = ops.load(A, q, 1.0 / m)
    chi = _solve_periodic(K, -b, method)
    return chi.reshape((m,) * field.dim)


def _periodic_system(field, m):
    d = field.dim
    ops = cell_ops((m,) * d, True)
    A, _, _ = field.sample_cells(m)
    A = A.reshape(-1, d, d)
    K = ops.stiffness(A, 1.0 / m)
    return K, ops, A


def _solve_periodic(K, b, method):
    """Solve the singular periodic system by pinning one node, then centre."""
    n = K.shape[0]
    b = b - b.mean()
    if method == "cg":
        x, _ = pcg(K, b, project=True)
    else:
        keep = np.arange(1, n)
        solver = SPDSolver(K[keep][:, keep], method="direct")
        x = np.zeros(n)
        x[keep] = solver.solve(b[keep])
    x -= x.mean()
    res = np.linalg.norm(K @ x - b)
    if res > RESIDUAL_TOL * backward_scale(K, x, b):
        raise SolverDivergence(f"periodic solve residual {res:.3e}")
    return x


def correctors(field, m=None, method="direct"):
    """Compute all unit-vector correctors and the homogenized matrix."""
    m = _default_resolution(field, m)
    d = field.dim
    K, ops, A = _periodic_system(field, m)
    h = 1.0 / m
    vals = []
    residuals = []
    for k in range(d):
        e = np.eye(d)[k]
        b = ops.load(A, e, h)
        chi = _solve_periodic(K, -b, method)
        residuals.append(float(np.linalg.norm(K @ chi + b - (b.mean()))))
        vals.append(chi.reshape((m,) * d))
    vals = np.stack(vals)
    abar = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            dens = ops.bilinear(A, vals[i], vals[j], h, P=np.eye(d)[i], Q=np.eye(d)[j])
            abar[i, j] = dens.mean()
    abar = 0.5 * (abar + abar.T)
    return CorrectorSet(m=m, values=vals, abar=abar, residuals=tuple(residuals))


def homogenized_matrix(field_or_correctors, m=None, method="direct"):
    """Homogenized matrix ``abar``.

    Accepts a :class:`CoefficientField` (the correctors are computed) or an
    existing :class:`CorrectorSet`.
    """
    if isinstance(field_or_correctors, CorrectorSet):
        return field_or_correctors.abar.copy()
    return correctors(field_or_correctors, m=m, method=method).abar


def normalize_abar(field, m=None):
    """Rescale a medium with diagonal ``abar`` so that ``abar = I`` at resolution ``m``.

    Each entry ``a_kl`` is divided by ``sqrt(abar_kk abar_ll)``; for a
    diagonal homogenized matrix this maps it exactly to the identity.
    """
    abar = homogenized_matrix(field, m=m)
    off = abar - np.diag(np.diag(abar))
    if np.abs(off).max() > 1e-10 * np.abs(abar).max():
        raise PreconditionViolated("normalization requires a diagonal homogenized matrix")
    return field.transformed(a_scale=1.0 / np.diag(abar), name=field.name)


# ----------------------------------------------------------------------
# dual (Neumann) energies
# ----------------------------------------------------------------------
def dual_energy(field, t, q, h=None, center=None, method="direct"):
    """Averaged Neumann energy ``min_v avg_{B_t} (1/2 grad v.a grad v - q.grad v)``.

    The ball is discretized with mesh width ``h`` (default ``1/M`` for
    the field's resolution, capped at 1/16).  For large ``t`` the value
    approaches ``-1/2 q.abar^{-1} q``.
    """
    d = field.dim
    q = np.asarray(q, dtype=float).reshape(d)
    if h is None:
        h = 1.0 / min(field.cell_resolution, 16)
    if t < 1.0 / 16:
        warnings.warn("dual energy requested below the microscopic scale", stacklevel=2)
    grid = Grid(d, np.ceil(t / h) * h, h, center=center)
    cells = grid.ball_cells(t, grid.center)
    A, _, _ = field.on_grid(grid)
    op = EllipticOperator(grid, A, cells)
    ops = grid.ops
    w = cells.ravel().astype(float)
    ell = np.zeros(grid.n_nodes)
    for k in range(d):
        ell += ops.M[k].T @ (q[k] * w)
    ell *= h ** (d - 1)
    nodes = grid.cells_to_nodes(cells).ravel()
    Ksub = op.K[nodes][:, nodes]
    v = np.zeros(grid.n_nodes)
    # half-energy functional: (1/2) v K v - ell v, stationary at K v = ell
    v[nodes] = _solve_periodic(Ksub.tocsr(), ell[nodes], method)
    volume = cells.sum() * h ** d
    return float(-0.5 * ell @ v / volume)


# ----------------------------------------------------------------------
# fits by corrected affine functions
# ----------------------------------------------------------------------
def al_linear_fit(v, field, r, harmonic_radius=None, center=None, correctors_set=None,
                  check_harmonic=True):
    """Best fit of ``grad v`` by ``xi + grad chi_xi`` in ``L^2(B_r)``.

    Parameters
    ----------
    v : GridFunction
        Discretely a-harmonic in ``B_{harmonic_radius}`` (default ``r``).
    field : CoefficientField
    r : float
        Radius of the fitting ball.

    Returns
    -------
    xi : ndarray, shape (d,)
    residual : float
        Averaged ``L^2(B_r)`` norm of ``grad v - xi - grad chi_xi``.
    """
    grid = v.grid
    d = grid.dim
    if check_harmonic:
        R = r if harmonic_radius is None else harmonic_radius
        cells = grid.ball_cells(R, center)
        op = operator_for(grid, field, cells)
        res = op.residual(v, grid.interior_nodes(cells))
        if res > 1e-6:
            raise NotHarmonic(f"relative residual {res:.2e} exceeds 1e-6")
    if correctors_set is None:
        m = grid.cells_per_period()
        if m is None:
            raise PreconditionViolated("grid must be aligned with the period for corrector fits")
        correctors_set = correctors(field, m=m)
    tiled = correctors_set.on_grid(grid)
    x = grid.node_coords()
    basis = [x[..., k] + tiled[k] for k in range(d)]
    ops = grid.ops
    mask = grid.ball_cells(r, center).ravel()
    # edge derivatives restricted to the ball, one row per edge sample
    def rows(u):
        return np.concatenate([e[:, mask].ravel() for e in ops.edge_diffs(u, grid.h)])

    B = np.stack([rows(b) for b in basis], axis=1)
    y = rows(v.values)
    xi, *_ = np.linalg.lstsq(B, y, rcond=None)
    resid = y - B @ xi
    n_cells = mask.sum()
    # each axis contributes its edge-mean of squared differences
    n_edges = len(ops.D[0])
    residual = np.sqrt(np.sum(resid ** 2) / (n_edges * n_cells))
    return xi, float(residual)
