import numpy as np
import pytest

from fbhomog.errors import EllipticityViolation, InputError, NonPositiveGap
from fbhomog.field import (CoefficientField, Grid, GridFunction, avg_lp_norm,
                           checkerboard_field, constant_field,
                           normalize_coefficients, grad_lp_norm, laminate_field)


def test_constant_field_values():
    f = constant_field(1.0, 2.0, 1.0)
    x = np.array([[0.1, 0.2], [3.7, -1.2]])
    a, qp, qm = f.evaluate(x)
    np.testing.assert_allclose(a, np.broadcast_to(np.eye(2), (2, 2, 2)))
    np.testing.assert_allclose(qp, 2.0)
    np.testing.assert_allclose(qm, 1.0)
    assert f.is_constant()
    assert f.gap() == pytest.approx(1.0)


def test_laminate_is_periodic_and_layered():
    f = laminate_field()
    x = np.array([[0.3, 0.1], [1.3, 0.1], [0.3, 5.6], [-0.7, 2.0]])
    a = f.evaluate(x)[0]
    for k in range(1, 4):
        np.testing.assert_allclose(a[k], a[0], atol=1e-12)
    assert f.mean_a()[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_checkerboard_symmetry():
    f = checkerboard_field()
    a = f.evaluate(np.array([[0.25, 0.25], [0.75, 0.25], [0.75, 0.75]]))[0]
    assert a[0, 0, 0] == pytest.approx(a[2, 0, 0])
    assert a[0, 0, 0] != pytest.approx(a[1, 0, 0])


def test_gap_must_be_positive():
    with pytest.raises(NonPositiveGap):
        normalize_coefficients(constant_field(1.0, 1.0, 1.0))


def test_ellipticity_is_checked():
    with pytest.raises(EllipticityViolation):
        constant_field(1.0, 2.0, 1.0, lam=0.5)
    with pytest.raises(EllipticityViolation):
        CoefficientField.from_functions(lambda x: -np.ones(x.shape[:-1]), lambda x: 2.0,
                                        lambda x: 1.0)


def test_transformed_scales_coefficients():
    f = laminate_field()
    g = f.transformed(a_scale=0.5, q2_scale=2.0)
    np.testing.assert_allclose(g.a, 0.5 * f.a)
    np.testing.assert_allclose(g.qplus ** 2, f.qplus ** 2 / 2.0)
    assert g.lam >= f.lam


def test_grid_geometry():
    grid = Grid(2, 2.0, 0.5)
    assert grid.node_shape == (9, 9)
    assert grid.n_cells == 64
    assert grid.cell_volume == pytest.approx(0.25)
    assert grid.cells_per_period() == 2
    x = grid.node_coords()
    assert x[grid.half, grid.half].tolist() == [0.0, 0.0]
    assert grid.ball_cells(1.0).sum() == 12


def test_grid_rejects_bad_spacing():
    with pytest.raises(InputError):
        Grid(2, 1.0, 0.3)
    with pytest.raises(InputError):
        Grid(2, 1.0, -0.5)


def test_gradient_of_linear_function_is_exact():
    grid = Grid(2, 2.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: 3 * x[..., 0] - 2 * x[..., 1] + 1)
    g = u.gradient()
    np.testing.assert_allclose(g[..., 0], 3.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], -2.0, atol=1e-12)
    np.testing.assert_allclose(u.grad_sq(), 13.0, atol=1e-11)
    assert grad_lp_norm(u, 1.5) == pytest.approx(np.sqrt(13.0))


def test_avg_norm_of_constant():
    grid = Grid(2, 2.0, 0.25)
    u = GridFunction(grid, np.full(grid.node_shape, -2.0))
    assert avg_lp_norm(u, 1.0) == pytest.approx(2.0)
    assert avg_lp_norm(u, 1.0, p=1) == pytest.approx(2.0)


def test_save_load_round_trip(tmp_path, rng):
    grid = Grid(2, 1.0, 0.25)
    u = GridFunction(grid, rng.normal(size=grid.node_shape))
    path = tmp_path / "u.fbh"
    u.save(path)
    v = GridFunction.load(path)
    assert v.grid.compatible(grid)
    np.testing.assert_array_equal(v.values, u.values)
    u.to_csv(tmp_path / "u.csv")
    rows = (tmp_path / "u.csv").read_text().splitlines()
    assert len(rows) == grid.n_nodes + 1


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.fbh"
    path.write_bytes(b"not a grid function")
    with pytest.raises(InputError):
        GridFunction.load(path)


def test_grid_function_arithmetic():
    grid = Grid(2, 1.0, 0.5)
    u = GridFunction(grid, np.ones(grid.node_shape))
    w = u - u
    assert np.all(w.values == 0)
    with pytest.raises(InputError):
        u - GridFunction(Grid(2, 1.0, 0.25), np.ones((9, 9)))
