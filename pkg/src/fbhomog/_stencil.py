"""Sparse edge-difference operators shared by the solvers.

Nodal values live on a tensor grid (``ij`` indexing).  Every cell of the
grid has ``2**(d-1)`` edges parallel to each axis; the discrete energy
density of a cell is built from the differences along those edges.  For
a cell with coefficient matrix ``A`` the density is

    sum_k A_kk * mean_e (D_ke u / h)**2
        + sum_{k != l} A_kl * (M_k u / h) * (M_l u / h),

where ``D_ke`` is the difference along edge ``e`` in direction ``k`` and
``M_k`` the mean of those differences.  For a diagonal matrix this is the
classical five point (three point in 1D) stencil whose edge weights are
the averages of the flanking cell values.
"""

from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp


class CellOps:
    """Node-to-cell difference operators for one grid shape.

    Parameters
    ----------
    node_shape : tuple of int
        Number of nodes per axis.
    periodic : bool
        If true the last node wraps onto the first one and the number of
        cells per axis equals the number of nodes per axis.
    """

    def __init__(self, node_shape, periodic=False):
        self.node_shape = tuple(int(n) for n in node_shape)
        self.periodic = bool(periodic)
        d = len(self.node_shape)
        self.dim = d
        if periodic:
            self.cell_shape = self.node_shape
        else:
            self.cell_shape = tuple(n - 1 for n in self.node_shape)
        self.n_nodes = int(np.prod(self.node_shape))
        self.n_cells = int(np.prod(self.cell_shape))
        cell_idx = np.indices(self.cell_shape).reshape(d, -1)
        rows = np.arange(self.n_cells)

        self.corner_offsets = list(product((0, 1), repeat=d))
        corner_nodes = {}
        for off in self.corner_offsets:
            idx = cell_idx + np.asarray(off)[:, None]
            if periodic:
                idx = idx % np.asarray(self.node_shape)[:, None]
            corner_nodes[off] = np.ravel_multi_index(idx, self.node_shape)
        self.corner_nodes = corner_nodes

        shape = (self.n_cells, self.n_nodes)
        self.D = []
        for k in range(d):
            edges = []
            for off in self.corner_offsets:
                if off[k] != 0:
                    continue
                hi = list(off)
                hi[k] = 1
                lo_nodes = corner_nodes[off]
                hi_nodes = corner_nodes[tuple(hi)]
                data = np.concatenate([np.ones(self.n_cells), -np.ones(self.n_cells)])
                cols = np.concatenate([hi_nodes, lo_nodes])
                mat = sp.csr_matrix((data, (np.concatenate([rows, rows]), cols)), shape=shape)
                edges.append(mat)
            self.D.append(edges)
        self.M = [sum(edges) / len(edges) for edges in self.D]
        n_corner = len(self.corner_offsets)
        cols = np.concatenate([corner_nodes[off] for off in self.corner_offsets])
        self.mean = sp.csr_matrix(
            (np.full(cols.size, 1.0 / n_corner), (np.tile(rows, n_corner), cols)),
            shape=shape,
        )

    # ------------------------------------------------------------------
    def stiffness(self, A, h, weight=None):
        """Assemble the symmetric matrix ``K`` with ``u @ K @ u`` = energy.

        Parameters
        ----------
        A : ndarray, shape (n_cells, d, d)
            Cell coefficient matrices.
        h : float
            Mesh width.
        weight : ndarray, shape (n_cells,), optional
            Cell weights, typically the indicator of the region.
        """
        d = self.dim
        A = np.asarray(A, dtype=float).reshape(self.n_cells, d, d)
        w = np.ones(self.n_cells) if weight is None else np.asarray(weight, float).ravel()
        scale = h ** (d - 2)
        K = sp.csr_matrix((self.n_nodes, self.n_nodes))
        for k in range(d):
            ne = len(self.D[k])
            diag = sp.diags(A[:, k, k] * w / ne)
            for Dk in self.D[k]:
                K = K + Dk.T @ diag @ Dk
            for l in range(d):
                if l == k:
                    continue
                K = K + self.M[k].T @ sp.diags(A[:, k, l] * w) @ self.M[l]
        return (scale * K).tocsr()

    def load(self, A, P, h, weight=None):
        """Vector ``b`` such that the cross term of ``P + grad v`` is ``2 b @ v``.

        ``P`` is a constant vector or an array of shape (n_cells, d).
        """
        d = self.dim
        A = np.asarray(A, dtype=float).reshape(self.n_cells, d, d)
        w = np.ones(self.n_cells) if weight is None else np.asarray(weight, float).ravel()
        P = np.broadcast_to(np.asarray(P, dtype=float), (self.n_cells, d))
        AP = np.einsum("ckl,cl->ck", A, P)
        b = np.zeros(self.n_nodes)
        for k in range(d):
            b += self.M[k].T @ (AP[:, k] * w)
        return h ** (d - 1) * b

    def edge_diffs(self, u, h):
        """List over axes of arrays (n_edges, n_cells) of edge derivatives."""
        u = np.asarray(u, dtype=float).ravel()
        return [np.stack([Dk @ u for Dk in self.D[k]]) / h for k in range(self.dim)]

    def gradient(self, u, h):
        """Cell gradient (mean of the edge derivatives), shape (n_cells, d)."""
        u = np.asarray(u, dtype=float).ravel()
        return np.stack([Mk @ u for Mk in self.M], axis=-1) / h

    def grad_sq(self, u, h):
        """Cell density of ``|grad u|^2`` used by the discrete energy."""
        return sum(np.mean(e ** 2, axis=0) for e in self.edge_diffs(u, h))

    def density(self, A, u, h, P=None):
        """Cell energy density of ``P + grad u`` for coefficients ``A``."""
        d = self.dim
        A = np.asarray(A, dtype=float).reshape(self.n_cells, d, d)
        diffs = self.edge_diffs(u, h)
        if P is not None:
            P = np.broadcast_to(np.asarray(P, dtype=float), (self.n_cells, d))
            diffs = [diffs[k] + P[None, :, k] for k in range(d)]
        means = [e.mean(axis=0) for e in diffs]
        out = np.zeros(self.n_cells)
        for k in range(d):
            out += A[:, k, k] * np.mean(diffs[k] ** 2, axis=0)
            for l in range(d):
                if l != k:
                    out += A[:, k, l] * means[k] * means[l]
        return out

    def bilinear(self, A, u, v, h, P=None, Q=None):
        """Cell density of the bilinear form of ``P + grad u`` and ``Q + grad v``."""
        d = self.dim
        A = np.asarray(A, dtype=float).reshape(self.n_cells, d, d)
        du = self.edge_diffs(u, h)
        dv = self.edge_diffs(v, h)
        if P is not None:
            P = np.broadcast_to(np.asarray(P, dtype=float), (self.n_cells, d))
            du = [du[k] + P[None, :, k] for k in range(d)]
        if Q is not None:
            Q = np.broadcast_to(np.asarray(Q, dtype=float), (self.n_cells, d))
            dv = [dv[k] + Q[None, :, k] for k in range(d)]
        mu = [e.mean(axis=0) for e in du]
        mv = [e.mean(axis=0) for e in dv]
        out = np.zeros(self.n_cells)
        for k in range(d):
            out += A[:, k, k] * np.mean(du[k] * dv[k], axis=0)
            for l in range(d):
                if l != k:
                    out += A[:, k, l] * mu[k] * mv[l]
        return out

    # ------------------------------------------------------------------
    def incident_cells(self):
        """Array (n_nodes, 2**d) of cells touching each node, -1 if absent."""
        inc = np.full((self.n_nodes, len(self.corner_offsets)), -1, dtype=np.int64)
        cells = np.arange(self.n_cells)
        for slot, off in enumerate(self.corner_offsets):
            inc[self.corner_nodes[off], slot] = cells
        return inc

    def node_colors(self):
        """Parity colouring: nodes of equal colour share no cell."""
        idx = np.indices(self.node_shape).reshape(self.dim, -1)
        return sum((idx[k] % 2) << k for k in range(self.dim))


@lru_cache(maxsize=16)
def cell_ops(node_shape, periodic=False):
    """Cached :class:`CellOps` for a grid shape."""
    return CellOps(tuple(node_shape), periodic)
