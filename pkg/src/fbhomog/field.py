"""Periodic coefficient fields, computational grids and grid functions.

The two-phase energy of a function ``u`` on a domain ``V`` is

    J(u; V) = int_V  a grad u . grad u + Q+^2 1{u > 0} + Q-^2 1{u <= 0},

with a symmetric matrix field ``a`` and positive scalars ``Q+``, ``Q-``,
all 1-periodic.  This module holds the data structures describing those
coefficients and the cubical grids on which everything is discretized.
"""

import csv
import struct
from pathlib import Path

import numpy as np

from ._stencil import cell_ops
from .errors import EllipticityViolation, EmptyBall, InputError, NonPositiveGap

_MAGIC = b"FBH1"


# ----------------------------------------------------------------------
# coefficient fields
# ----------------------------------------------------------------------
def _unit_cell_points(m, dim):
    """Centres of the ``m**dim`` sub-cells of the unit cell, shape (m,)*dim + (dim,)."""
    c = (np.arange(m) + 0.5) / m
    return np.stack(np.meshgrid(*([c] * dim), indexing="ij"), axis=-1)


class CoefficientField:
    """1-periodic coefficients ``a``, ``Q+`` and ``Q-`` on the unit cell.

    The field is described by samples at the centres of a uniform
    subdivision of the unit cell.  Optionally the generating functions are
    kept, in which case they are evaluated exactly at any resolution.

    Parameters
    ----------
    a : ndarray, shape (M,)*d + (d, d)
        Samples of the matrix field.
    qplus, qminus : ndarray, shape (M,)*d
        Samples of ``Q+`` and ``Q-`` (not squared).
    lam : float, optional
        Ellipticity constant.  When omitted the smallest admissible value
        is used; when given, every sample is checked against it.
    functions : tuple of callables, optional
        ``(a_fn, qplus_fn, qminus_fn)``, each taking points of shape
        ``(..., d)`` in the unit cell.
    name : str
        Label used in reports.
    """

    def __init__(self, a, qplus, qminus, lam=None, functions=None, name="custom"):
        a = np.asarray(a, dtype=float)
        qplus = np.asarray(qplus, dtype=float)
        qminus = np.asarray(qminus, dtype=float)
        dim = qplus.ndim
        if dim not in (1, 2):
            raise InputError("only dimensions 1 and 2 are supported")
        M = qplus.shape[0]
        if qplus.shape != (M,) * dim or qminus.shape != qplus.shape:
            raise InputError("Q samples must live on a uniform (M,)*d array")
        if a.shape != (M,) * dim + (dim, dim):
            raise InputError("matrix samples must have shape (M,)*d + (d, d)")
        if not np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-12):
            raise InputError("matrix field is not symmetric")
        self.dim = dim
        self.cell_resolution = M
        self._a = a
        self._qplus = qplus
        self._qminus = qminus
        self.functions = functions
        self.name = name
        needed = self._needed_lambda()
        if lam is None:
            lam = needed
        elif needed > lam * (1 + 1e-12):
            raise EllipticityViolation(
                f"coefficients require Lambda >= {needed:.6g}, got {lam:.6g}"
            )
        self.lam = float(lam)
        for arr in (self._a, self._qplus, self._qminus):
            arr.flags.writeable = False

    # construction ------------------------------------------------------
    @classmethod
    def from_functions(cls, a_fn, qplus_fn, qminus_fn, dim=2, cell_resolution=256,
                       lam=None, name="custom"):
        """Sample generating functions at ``cell_resolution`` per axis."""
        pts = _unit_cell_points(cell_resolution, dim)
        a = _eval_matrix(a_fn, pts, dim)
        qp = _eval_scalar(qplus_fn, pts)
        qm = _eval_scalar(qminus_fn, pts)
        return cls(a, qp, qm, lam=lam, functions=(a_fn, qplus_fn, qminus_fn), name=name)

    def _needed_lambda(self):
        eig = np.linalg.eigvalsh(self._a.reshape(-1, self.dim, self.dim))
        vals = np.concatenate([eig.ravel(), self._qplus.ravel(), self._qminus.ravel()])
        if np.any(vals <= 0):
            raise EllipticityViolation("coefficients must be positive definite")
        return float(max(vals.max(), 1.0 / vals.min(), 1.0))

    # accessors ---------------------------------------------------------
    @property
    def a(self):
        return self._a

    @property
    def qplus(self):
        return self._qplus

    @property
    def qminus(self):
        return self._qminus

    def mean_q2(self):
        """Cell averages ``(<Q+^2>, <Q-^2>)`` by midpoint quadrature."""
        return float(np.mean(self._qplus ** 2)), float(np.mean(self._qminus ** 2))

    def gap(self):
        """Averaged phase gap ``<Q+^2> - <Q-^2>``."""
        qp2, qm2 = self.mean_q2()
        return qp2 - qm2

    def mean_a(self):
        """Arithmetic cell average of the matrix field."""
        return self._a.reshape(-1, self.dim, self.dim).mean(axis=0)

    def is_constant(self, tol=1e-14):
        return (np.ptp(self._a.reshape(-1, self.dim * self.dim), axis=0).max() <= tol
                and np.ptp(self._qplus) <= tol and np.ptp(self._qminus) <= tol)

    def sample_cells(self, m):
        """Coefficients at the centres of an ``m``-subdivision of the unit cell.

        Returns ``(a, qplus2, qminus2)`` with shapes ``(m,)*d + (d, d)`` and
        ``(m,)*d``.  Stored functions are evaluated exactly; otherwise the
        nearest stored sample is used.
        """
        m = int(m)
        if self.functions is not None:
            pts = _unit_cell_points(m, self.dim)
            a_fn, qp_fn, qm_fn = self.functions
            a = _eval_matrix(a_fn, pts, self.dim)
            return a, _eval_scalar(qp_fn, pts) ** 2, _eval_scalar(qm_fn, pts) ** 2
        M = self.cell_resolution
        idx = np.floor((np.arange(m) + 0.5) / m * M).astype(int)
        grids = np.meshgrid(*([idx] * self.dim), indexing="ij")
        return (self._a[tuple(grids)], self._qplus[tuple(grids)] ** 2,
                self._qminus[tuple(grids)] ** 2)

    def evaluate(self, x):
        """``(a, Q+^2, Q-^2)`` at arbitrary points ``x`` of shape (..., d)."""
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        if self.functions is not None:
            a_fn, qp_fn, qm_fn = self.functions
            return (_eval_matrix(a_fn, x, self.dim), _eval_scalar(qp_fn, x) ** 2,
                    _eval_scalar(qm_fn, x) ** 2)
        M = self.cell_resolution
        idx = np.minimum(np.floor(x * M).astype(int), M - 1)
        sel = tuple(idx[..., k] for k in range(self.dim))
        return self._a[sel], self._qplus[sel] ** 2, self._qminus[sel] ** 2

    def on_grid(self, grid):
        """Cell coefficients of ``grid``: ``(a, qplus2, qminus2)`` flattened per cell.

        When the mesh width divides the period and the origin is aligned
        the unit-cell samples of :meth:`sample_cells` are tiled, which keeps
        grid computations consistent with periodic cell problems.
        """
        m = grid.cells_per_period()
        if m is not None:
            a, qp2, qm2 = self.sample_cells(m)
            offset = np.round(grid.origin / grid.h).astype(int) % m
            idx = [(np.arange(n) + offset[k]) % m for k, n in enumerate(grid.cell_shape)]
            sel = tuple(np.meshgrid(*idx, indexing="ij"))
            a, qp2, qm2 = a[sel], qp2[sel], qm2[sel]
        else:
            a, qp2, qm2 = self.evaluate(grid.cell_centers())
        d = self.dim
        return a.reshape(-1, d, d), qp2.ravel(), qm2.ravel()

    def transformed(self, a_scale=None, q2_scale=1.0, name=None):
        """New field with ``a`` multiplied entrywise and ``Q^2`` divided by ``q2_scale``.

        ``a_scale`` is a ``(d, d)`` array applied as ``S a S`` with
        ``S = diag(sqrt(a_scale))``; pass a vector of positive factors.
        """
        d = self.dim
        s = np.ones(d) if a_scale is None else np.sqrt(np.asarray(a_scale, float))
        S = np.outer(s, s)
        qs = 1.0 / np.sqrt(q2_scale)
        a = self._a * S
        functions = None
        if self.functions is not None:
            a_fn, qp_fn, qm_fn = self.functions
            functions = (
                lambda x, f=a_fn: _eval_matrix(f, x, d) * S,
                lambda x, f=qp_fn: _eval_scalar(f, x) * qs,
                lambda x, f=qm_fn: _eval_scalar(f, x) * qs,
            )
        out = CoefficientField(a, self._qplus * qs, self._qminus * qs, functions=functions,
                               name=name or self.name)
        # keep the previous constant when it still bounds the rescaled field
        out.lam = max(out.lam, self.lam)
        return out

    def __repr__(self):
        return (f"CoefficientField(name={self.name!r}, dim={self.dim}, "
                f"M={self.cell_resolution}, lam={self.lam:.4g})")


def _eval_matrix(fn, pts, dim):
    pts = np.asarray(pts, float)
    val = np.asarray(fn(pts), dtype=float)
    if val.shape == pts.shape[:-1]:
        val = val[..., None, None] * np.eye(dim)
    return np.broadcast_to(val, pts.shape[:-1] + (dim, dim)).copy()


def _eval_scalar(fn, pts):
    pts = np.asarray(pts, float)
    return np.broadcast_to(np.asarray(fn(pts), dtype=float), pts.shape[:-1]).copy()


def constant_field(a=1.0, qplus2=2.0, qminus2=1.0, dim=2, lam=None, cell_resolution=4):
    """Constant coefficients.  ``a`` is a scalar or a ``(d, d)`` matrix."""
    A = np.asarray(a, dtype=float)
    if A.ndim == 0:
        A = A * np.eye(dim)
    return CoefficientField.from_functions(
        lambda x: np.broadcast_to(A, x.shape[:-1] + (dim, dim)),
        lambda x: np.full(x.shape[:-1], np.sqrt(qplus2)),
        lambda x: np.full(x.shape[:-1], np.sqrt(qminus2)),
        dim=dim, cell_resolution=cell_resolution, lam=lam, name="constant",
    )


def laminate_field(mean=2.0, amplitude=1.0, qplus2=2.0, qminus2=1.0, qplus2_amplitude=0.0,
                   qminus2_amplitude=0.0, dim=2, lam=None, cell_resolution=256):
    """Layered medium ``a = (mean + amplitude sin 2 pi x1) I``.

    The phase constants may oscillate as well:
    ``Q+^2 = qplus2 + qplus2_amplitude sin 2 pi x_d`` and
    ``Q-^2 = qminus2 + qminus2_amplitude cos 2 pi x1``.
    """
    if mean - abs(amplitude) <= 0:
        raise EllipticityViolation("laminate coefficient must stay positive")

    def a_fn(x):
        return (mean + amplitude * np.sin(2 * np.pi * x[..., 0]))[..., None, None] * np.eye(dim)

    def qp_fn(x):
        return np.sqrt(qplus2 + qplus2_amplitude * np.sin(2 * np.pi * x[..., -1]))

    def qm_fn(x):
        return np.sqrt(qminus2 + qminus2_amplitude * np.cos(2 * np.pi * x[..., 0]))

    return CoefficientField.from_functions(a_fn, qp_fn, qm_fn, dim=dim,
                                           cell_resolution=cell_resolution, lam=lam,
                                           name="laminate")


def checkerboard_field(a1=2.0, a2=0.5, qplus2=2.0, qminus2=1.0, dim=2, lam=None,
                       cell_resolution=256):
    """Checkerboard medium: ``a1 I`` on half of the unit-cell quarters, ``a2 I`` on the rest."""

    def a_fn(x):
        parity = np.floor(2 * x).astype(int).sum(axis=-1) % 2
        return np.where(parity == 0, a1, a2)[..., None, None] * np.eye(dim)

    return CoefficientField.from_functions(
        a_fn,
        lambda x: np.full(x.shape[:-1], np.sqrt(qplus2)),
        lambda x: np.full(x.shape[:-1], np.sqrt(qminus2)),
        dim=dim, cell_resolution=cell_resolution, lam=lam, name="checkerboard",
    )


def normalize_coefficients(field):
    """Scale the phase constants so that the averaged gap equals one.

    Returns
    -------
    field : CoefficientField
        Field with ``Q+-^2`` replaced by ``Q+-^2 / gap``.
    gap : float
        The original gap ``<Q+^2> - <Q-^2>``.
    """
    gap = field.gap()
    if not gap > 0:
        raise NonPositiveGap(f"<Q+^2> - <Q-^2> = {gap:.6g} must be positive")
    return field.transformed(q2_scale=gap), gap


# ----------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------
class Grid:
    """Uniform node grid on the cube ``center + [-R, R]^d``.

    ``R / h`` must be an integer.  Node ``i`` along axis ``k`` sits at
    ``origin[k] + i h``; axis ``k`` corresponds to the coordinate ``x_{k+1}``.
    """

    def __init__(self, dim, radius, h, center=None):
        if dim not in (1, 2):
            raise InputError("only dimensions 1 and 2 are supported")
        if not (h > 0 and radius > 0):
            raise InputError("radius and mesh width must be positive")
        half = radius / h
        if abs(half - round(half)) > 1e-9 or round(half) < 2:
            raise InputError("radius / h must be an integer >= 2")
        self.dim = int(dim)
        self.h = float(h)
        self.half = int(round(half))
        self.radius = self.half * self.h
        self.center = np.zeros(dim) if center is None else np.asarray(center, float).reshape(dim)
        self.origin = self.center - self.radius
        self.n = 2 * self.half + 1
        self.node_shape = (self.n,) * self.dim
        self.cell_shape = (self.n - 1,) * self.dim

    @property
    def n_nodes(self):
        return self.n ** self.dim

    @property
    def n_cells(self):
        return (self.n - 1) ** self.dim

    @property
    def cell_volume(self):
        return self.h ** self.dim

    @property
    def ops(self):
        return cell_ops(self.node_shape, False)

    def cells_per_period(self):
        """Integer ``1/h`` when the grid is aligned with the unit period, else None."""
        m = 1.0 / self.h
        if abs(m - round(m)) > 1e-9:
            return None
        if np.any(np.abs(self.origin / self.h - np.round(self.origin / self.h)) > 1e-9):
            return None
        return int(round(m))

    def axis(self, k=0):
        return self.origin[k] + self.h * np.arange(self.n)

    def node_coords(self):
        """Node coordinates, shape ``node_shape + (d,)``."""
        axes = [self.axis(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_centers(self):
        axes = [self.axis(k)[:-1] + 0.5 * self.h for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def ball_cells(self, radius, center=None):
        """Boolean cell mask of the ball: cells whose centre lies in it."""
        c = self.center if center is None else np.asarray(center, float)
        dist = np.linalg.norm(self.cell_centers() - c, axis=-1)
        mask = dist <= radius + 1e-12 * max(radius, 1.0)
        if not mask.any():
            raise EmptyBall(f"ball of radius {radius} contains no cells")
        return mask

    def cells_to_nodes(self, cell_mask):
        """Nodes that are a vertex of at least one masked cell."""
        cell_mask = np.asarray(cell_mask, bool)
        out = np.zeros(self.node_shape, dtype=bool)
        for off in self.ops.corner_offsets:
            sl = tuple(slice(o, o + self.n - 1) for o in off)
            out[sl] |= cell_mask
        return out

    def interior_nodes(self, cell_mask):
        """Nodes all of whose incident cells are masked."""
        cell_mask = np.asarray(cell_mask, bool)
        out = np.zeros(self.node_shape, dtype=bool)
        inner = tuple(slice(1, self.n - 1) for _ in range(self.dim))
        out[inner] = True
        acc = np.ones(self.node_shape, dtype=bool)
        for off in self.ops.corner_offsets:
            tmp = np.zeros(self.node_shape, dtype=bool)
            sl = tuple(slice(o, o + self.n - 1) for o in off)
            tmp[sl] = cell_mask
            acc &= tmp
        return out & acc

    def ball_nodes(self, radius, center=None):
        return self.cells_to_nodes(self.ball_cells(radius, center))

    def compatible(self, other):
        return (self.dim == other.dim and self.n == other.n
                and abs(self.h - other.h) < 1e-14 and np.allclose(self.origin, other.origin))

    def __eq__(self, other):
        return isinstance(other, Grid) and self.compatible(other)

    def __hash__(self):
        return hash((self.dim, self.n, self.h, tuple(self.origin)))

    def __repr__(self):
        return f"Grid(dim={self.dim}, radius={self.radius:g}, h={self.h:g})"


class GridFunction:
    """Immutable nodal values on a :class:`Grid`."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        vals = np.array(values, dtype=float, copy=True)
        if vals.size != grid.n_nodes:
            raise InputError("value array does not match the grid")
        vals = vals.reshape(grid.node_shape)
        vals.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(x)`` with ``x`` of shape ``node_shape + (d,)``."""
        return cls(grid, fn(grid.node_coords()))

    def replace(self, values):
        return GridFunction(self.grid, values)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if not self.grid.compatible(other.grid):
                raise InputError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def cell_means(self):
        return (self.grid.ops.mean @ self.values.ravel()).reshape(self.grid.cell_shape)

    def gradient(self):
        """Cell gradients, shape ``cell_shape + (d,)``."""
        g = self.grid.ops.gradient(self.values, self.grid.h)
        return g.reshape(self.grid.cell_shape + (self.grid.dim,))

    def grad_sq(self):
        """Cell density of ``|grad u|^2``."""
        return self.grid.ops.grad_sq(self.values, self.grid.h).reshape(self.grid.cell_shape)

    # persistence -------------------------------------------------------
    def save(self, path):
        """Write the little-endian binary format (magic ``FBH1``)."""
        g = self.grid
        header = _MAGIC + struct.pack("<II", g.dim, g.n) + struct.pack("<d", g.h)
        header += struct.pack(f"<{g.dim}d", *g.origin)
        payload = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        _atomic_write_bytes(Path(path), header + payload)

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if data[:4] != _MAGIC:
            raise InputError(f"{path}: not a grid function file")
        dim, n = struct.unpack_from("<II", data, 4)
        (h,) = struct.unpack_from("<d", data, 12)
        origin = np.array(struct.unpack_from(f"<{dim}d", data, 20))
        offset = 20 + 8 * dim
        values = np.frombuffer(data, dtype="<f8", offset=offset)
        if values.size != n ** dim:
            raise InputError(f"{path}: truncated grid function file")
        radius = (n - 1) / 2 * h
        grid = Grid(dim, radius, h, center=origin + radius)
        return cls(grid, values)

    def to_csv(self, path):
        """Write ``x1[,x2],value`` rows."""
        coords = self.grid.node_coords().reshape(-1, self.grid.dim)
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k + 1}" for k in range(self.grid.dim)] + ["value"])
            for x, v in zip(coords, self.values.ravel()):
                writer.writerow([f"{c:.17g}" for c in x] + [f"{v:.17g}"])
        tmp.replace(path)

    def __repr__(self):
        return f"GridFunction({self.grid!r})"


def _atomic_write_bytes(path, data):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


# ----------------------------------------------------------------------
# averaged norms
# ----------------------------------------------------------------------
def _cell_values(f, grid):
    if isinstance(f, GridFunction):
        return f.grid, f.cell_means()
    if grid is None:
        raise InputError("a grid is required for cell arrays")
    vals = np.asarray(f, dtype=float)
    if vals.shape != grid.cell_shape:
        raise InputError("cell array does not match the grid")
    return grid, vals


def avg_lp_norm(f, radius, p=2, center=None, grid=None):
    """Volume-averaged ``L^p`` norm over a ball.

    ``f`` is a :class:`GridFunction` (cell means are used) or an array of
    cell values together with ``grid``.  ``p`` may be ``np.inf``.
    """
    grid, vals = _cell_values(f, grid)
    mask = grid.ball_cells(radius, center)
    v = np.abs(vals[mask])
    if np.isinf(p):
        return float(v.max())
    return float(np.mean(v ** p) ** (1.0 / p))


def grad_lp_norm(u, radius, p=2, center=None):
    """Volume-averaged ``L^p`` norm of ``grad u`` over a ball."""
    dens = u.grad_sq()
    return avg_lp_norm(np.sqrt(dens), radius, p=p, center=center, grid=u.grid)
