import numpy as np
import pytest
import scipy.sparse as sp

from fbhomog.elliptic import (EllipticOperator, SPDSolver, al_linear_fit, correctors, dual_energy,
                              harmonic_replacement, homogenized_matrix, normalize_abar, pcg,
                              solve_corrector)
from fbhomog.errors import InputError, NotHarmonic, PreconditionViolated
from fbhomog.field import Grid, GridFunction, checkerboard_field, constant_field, laminate_field


def _laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_pcg_matches_direct(rng):
    A = _laplacian_1d(50)
    b = rng.normal(size=50)
    x, info = pcg(A, b)
    np.testing.assert_allclose(A @ x, b, atol=1e-8)
    np.testing.assert_allclose(SPDSolver(A).solve(b), x, atol=1e-8)
    np.testing.assert_allclose(SPDSolver(A, method="cg").solve(b), x, atol=1e-8)


def test_solver_rejects_unknown_method():
    with pytest.raises(InputError):
        SPDSolver(_laplacian_1d(3), method="magic")


def test_dirichlet_solve_reproduces_affine_functions(lam_field):
    # affine data are not a-harmonic for a laminate, but they are for a = I
    grid = Grid(2, 2.0, 0.25)
    field = constant_field(1.0, 2.0, 1.0)
    op = EllipticOperator(grid, field.on_grid(grid)[0])
    g = 0.3 + 1.2 * grid.node_coords()[..., 0] - 0.7 * grid.node_coords()[..., 1]
    free = grid.interior_nodes(np.ones(grid.cell_shape, bool))
    data = np.where(free, 0.0, g)
    u = op.solve_dirichlet(data, free)
    np.testing.assert_allclose(u, g, atol=1e-12)
    assert op.residual(u, free) < 1e-12


def test_layered_affine_solution_is_reproduced(lam_field):
    # a = a(x1) I: u = x2 is exactly a-harmonic
    grid = Grid(2, 2.0, 0.25)
    u0 = GridFunction.from_function(grid, lambda x: x[..., 1])
    v = harmonic_replacement(u0, lam_field, 1.5)
    np.testing.assert_allclose(v.values, u0.values, atol=1e-12)


def test_constant_medium_has_zero_correctors():
    cs = correctors(constant_field(1.0, 2.0, 1.0), m=8)
    assert np.abs(cs.values).max() < 1e-12
    np.testing.assert_allclose(cs.abar, np.eye(2), atol=1e-12)


def test_laminate_homogenized_matrix():
    # harmonic mean across the layers, arithmetic mean along them
    abar = homogenized_matrix(laminate_field(), m=128)
    np.testing.assert_allclose(abar, np.diag([np.sqrt(3.0), 2.0]), atol=1e-3)
    np.testing.assert_allclose(abar, abar.T, atol=1e-12)


def test_checkerboard_satisfies_geometric_mean_in_the_limit():
    # the isotropic checkerboard has abar = sqrt(a1 a2) I in the continuum limit
    abar = homogenized_matrix(checkerboard_field(2.0, 0.5), m=32)
    assert abar[0, 0] == pytest.approx(1.0, rel=0.1)
    assert abar[0, 0] == pytest.approx(abar[1, 1], rel=1e-10)


def test_corrector_is_mean_zero_and_linear():
    f = laminate_field()
    cs = correctors(f, m=32)
    chi = solve_corrector(f, [1.0, 0.0], m=32)
    np.testing.assert_allclose(chi, cs.values[0], atol=1e-10)
    assert abs(chi.mean()) < 1e-12
    np.testing.assert_allclose(cs.corrector([2.0, -1.0]), 2 * cs.values[0] - cs.values[1],
                               atol=1e-12)


def test_corrector_tiling_requires_alignment():
    cs = correctors(laminate_field(), m=4)
    tiled = cs.on_grid(Grid(2, 2.0, 0.25))
    assert tiled.shape == (2, 17, 17)
    np.testing.assert_allclose(tiled[0][:4, 0], tiled[0][4:8, 0])
    with pytest.raises(PreconditionViolated):
        cs.on_grid(Grid(2, 2.0, 0.5))


def test_normalize_abar_gives_identity():
    f = normalize_abar(laminate_field(), m=8)
    np.testing.assert_allclose(homogenized_matrix(f, m=8), np.eye(2), atol=1e-10)


def test_dual_energy_identity_medium():
    q = np.array([0.4, -1.1])
    mu = dual_energy(constant_field(1.0, 2.0, 1.0), 2.0, q, h=0.25)
    assert mu == pytest.approx(-0.5 * q @ q, abs=1e-10)


def test_al_linear_fit_recovers_slope():
    f = laminate_field()
    grid = Grid(2, 4.0, 0.25)
    cs = correctors(f, m=4)
    xi0 = np.array([0.7, -0.2])
    x = grid.node_coords()
    v = GridFunction(grid, x @ xi0 + cs.on_grid(grid, xi0))
    xi, res = al_linear_fit(v, f, 3.0, correctors_set=cs)
    np.testing.assert_allclose(xi, xi0, atol=1e-10)
    assert res < 1e-10


def test_al_linear_fit_rejects_non_harmonic():
    grid = Grid(2, 2.0, 0.25)
    v = GridFunction.from_function(grid, lambda x: x[..., 0] ** 2)
    with pytest.raises(NotHarmonic):
        al_linear_fit(v, constant_field(1.0, 2.0, 1.0), 1.5)
