import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from fbhomog.errors import InputError, PreconditionViolated
from fbhomog.field import Grid, GridFunction, constant_field
from fbhomog.minimize import (MinimizeConfig, boundary_strip_energy, energy,
                              energy_difference_check, harmonic_gap, homogenized_field, minimize,
                              strip_growth_exponent)
from fbhomog.twoplane import phi


def test_energy_of_affine_function(const_field):
    grid = Grid(2, 2.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: 3 * x[..., 0] + 0.01)
    e = energy(const_field, u)
    area = 16.0
    assert e.dirichlet == pytest.approx(9 * area)
    # half of the cells have positive mean
    assert e.volume_plus == pytest.approx(2.0 * area / 2)
    assert e.volume_minus == pytest.approx(1.0 * area / 2)
    assert e.total == pytest.approx(9 * area + 1.5 * area)


def test_energy_region_mask(const_field):
    grid = Grid(2, 2.0, 0.25)
    u = GridFunction(grid, np.ones(grid.node_shape))
    with pytest.raises(InputError):
        energy(const_field, u, np.zeros((3, 3), bool))
    e = energy(const_field, u, 1.0)
    assert e.volume_plus == pytest.approx(2.0 * grid.cell_volume * grid.ball_cells(1.0).sum())


def test_one_dimensional_free_boundary():
    # u = x on the boundary of [-1, 1]; the optimal interface s minimizes
    # 2/(1 - s^2) + 3 - s, the energy of the piecewise linear competitors
    field = constant_field(1.0, 2.0, 1.0, dim=1)
    grid = Grid(1, 1.0, 1 / 100)
    g = GridFunction.from_function(grid, lambda x: x[..., 0])
    res = minimize(field, g, 1.0)
    x, u = grid.axis(0), res.u.values
    k = int(np.flatnonzero((u[:-1] <= 0) & (u[1:] > 0))[0])
    s = x[k] - u[k] * (x[k + 1] - x[k]) / (u[k + 1] - u[k])
    s_star = minimize_scalar(lambda s: 2 / (1 - s * s) + 3 - s, bounds=(-0.9, 0.9),
                             method="bounded").x
    assert s == pytest.approx(s_star, abs=0.02)
    assert res.converged


def test_two_plane_data_is_reproduced(const_field):
    grid = Grid(2, 2.0, 1 / 8)
    g = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1]))
    res = minimize(const_field, g, 2.0)
    nodes = grid.cells_to_nodes(grid.ball_cells(2.0))
    assert np.abs(res.u.values - g.values)[nodes].max() <= 3 * grid.h
    assert res.energy.total <= energy(const_field, g, 2.0).total + 1e-10


def test_minimizer_is_locally_optimal(const_field, rng):
    grid = Grid(2, 2.0, 0.25)
    g = GridFunction.from_function(grid, lambda x: phi(0.5, x[..., 1] + 0.2 * x[..., 0] ** 2))
    res = minimize(const_field, g, 2.0)
    E0 = res.energy.total
    free = np.argwhere(grid.interior_nodes(grid.ball_cells(2.0)))
    for i in rng.choice(len(free), 10, replace=False):
        for step in (-0.05, 0.05):
            v = res.u.values.copy()
            v[tuple(free[i])] += step
            assert energy(const_field, GridFunction(grid, v), 2.0).total >= E0 - 1e-9
    # the trace records accepted energies and never increases
    assert np.all(np.diff(res.trace) <= 1e-9 * abs(E0))


def test_initial_guess_must_share_grid(const_field):
    grid = Grid(2, 1.0, 0.25)
    g = GridFunction(grid, np.ones(grid.node_shape))
    other = GridFunction(Grid(2, 1.0, 0.125), np.ones((17, 17)))
    with pytest.raises(InputError):
        minimize(const_field, g, initial=other)
    res = minimize(const_field, g, initial=g)
    assert res.start in ("harmonic", "two-plane", "initial-0")


def test_config_validation():
    with pytest.raises(InputError):
        MinimizeConfig(epsilon=(1.0, 2.0))
    with pytest.raises(InputError):
        MinimizeConfig(epsilon=())
    assert MinimizeConfig(epsilon=[3, 1]).epsilon == (3.0, 1.0)


def test_homogenized_field_uses_phase_averages(lam_field):
    f = homogenized_field(lam_field, np.diag([2.0, 3.0]))
    assert f.is_constant()
    np.testing.assert_allclose(f.a[0, 0], np.diag([2.0, 3.0]))


def test_harmonic_gap_within_bound(const_field):
    grid = Grid(2, 2.0, 0.25)
    g = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1]))
    res = minimize(const_field, g)
    gap, info = harmonic_gap(const_field, res.u, 1.5)
    assert 0 <= gap <= info["bound"]


def test_strip_energy_of_linear_function():
    grid = Grid(2, 4.0, 0.125)
    u = GridFunction.from_function(grid, lambda x: x[..., 1])
    # the strip {0 < |u| < s} has area about 2 s (2 r) and density 2
    e = boundary_strip_energy(u, 1.0, 2.0)
    assert e == pytest.approx(2.0 * 2 * 2 * np.sqrt(4 - 0.25), rel=0.1)
    expo, vals = strip_growth_exponent(u, 2.0)
    assert expo == pytest.approx(1.0, abs=0.1)
    with pytest.raises(PreconditionViolated):
        boundary_strip_energy(u, 3.0, 2.0)


def test_energy_difference_explicit_pairs():
    grid = Grid(1, 1.0, 1 / 200)
    x = grid.node_coords()[..., 0]
    lhs, rs, rp, v = energy_difference_check(GridFunction(grid, x ** 4), GridFunction(grid, x ** 2),
                                             2.0, 1.0)
    assert v["sub"] == "holds"
    assert v["super"] != "fails"
    lhs, rs, rp, v = energy_difference_check(GridFunction(grid, 1 - x ** 2),
                                             GridFunction(grid, 1 - x ** 4), 2.0, 1.0)
    assert v["super"] == "holds"


def test_energy_difference_hypotheses():
    grid = Grid(1, 1.0, 1 / 50)
    x = grid.node_coords()[..., 0]
    with pytest.raises(PreconditionViolated):
        energy_difference_check(GridFunction(grid, x ** 2), GridFunction(grid, x ** 4), 1.0, 1.0)
    with pytest.raises(PreconditionViolated):
        energy_difference_check(GridFunction(grid, x ** 4), GridFunction(grid, x ** 2), -1.0, 1.0)
