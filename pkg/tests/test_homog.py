import numpy as np
import pytest

from fbhomog.elliptic import correctors
from fbhomog.errors import PreconditionViolated, RadiiBelowMicroscale, ScaleTooLarge
from fbhomog.field import Grid, GridFunction
from fbhomog.homog import (ZETA, downscale, fb_distance, hom_error_report, nodal_gradient,
                           strip_gradient_check, upscale)
from fbhomog.twoplane import phi


def test_cutoff_profile():
    s = np.array([0.0, 1.0, 1.5, 2.0, 5.0])
    np.testing.assert_allclose(ZETA(s), [0.0, 0.0, 0.5, 1.0, 1.0])
    fine = np.linspace(0, 3, 3001)
    assert np.abs(ZETA.derivative(fine)).max() == pytest.approx(ZETA.max_slope, rel=1e-4)
    np.testing.assert_allclose(np.gradient(ZETA(fine), fine)[100:-100],
                               ZETA.derivative(fine)[100:-100], atol=1e-2)


def test_fb_distance_to_flat_interface():
    grid = Grid(2, 4.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: x[..., 1] - 0.1)
    d = fb_distance(u, 3.0)
    c = grid.half
    # nodes of the cells straddling x2 = 0.1 are at x2 = 0 and x2 = 0.25
    assert d.values[c, c] == 0.0
    assert d.values[c, c + 4] == pytest.approx(0.75)
    assert d.values[c, c - 4] == pytest.approx(1.0)
    # outside the ball the distance vanishes
    assert d.values[0, 0] == 0.0


def test_upscale_is_identity_for_linear_functions():
    # averages of an affine function over discs are exact
    grid = Grid(2, 8.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1]))
    ubar = upscale(u, 1.0, 6.0)
    np.testing.assert_allclose(ubar.values, u.values, atol=1e-12)
    with pytest.raises(ScaleTooLarge):
        upscale(u, 4.0, 6.0)


def test_nodal_gradient_of_affine():
    grid = Grid(2, 2.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: 2 * x[..., 0] - x[..., 1])
    g = nodal_gradient(u)
    np.testing.assert_allclose(g[..., 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], -1.0, atol=1e-12)


def test_downscale_adds_corrector_away_from_interface(lam_field):
    grid = Grid(2, 8.0, 0.25)
    u0 = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1] - 3.0) + x[..., 0])
    cs = correctors(lam_field, m=4)
    t = 1.0
    u0t = downscale(u0, lam_field, t, 6.0, correctors_set=cs)
    d = fb_distance(u0, 6.0)
    far = d.values >= 2 * t
    grad = nodal_gradient(u0)
    expected = u0.values + sum(cs.on_grid(grid)[k] * grad[..., k] for k in range(2))
    np.testing.assert_allclose(u0t.values[far], expected[far], atol=1e-12)
    near = d.values == 0
    np.testing.assert_allclose(u0t.values[near], u0.values[near])


def test_downscale_requires_aligned_grid(lam_field):
    grid = Grid(2, 4.0, 0.4)
    u0 = GridFunction.from_function(grid, lambda x: x[..., 1])
    with pytest.raises(PreconditionViolated):
        downscale(u0, lam_field, 1.0, 3.0)


def test_strip_check_holds_for_identity():
    grid = Grid(2, 8.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1]))
    out = strip_gradient_check(u, u, 1.0, 6.0)
    assert out["holds"]
    assert out["lhs"] <= out["rhs"]


def test_hom_error_constant_medium_is_consistent(const_field):
    rep = hom_error_report(const_field, lambda x: phi(1.0, x[..., 1]), [4.0], h=0.5)
    # constant coefficients: nothing to homogenize
    for key in ("energy", "q_volume"):
        assert abs(rep.defects[key][0]) <= 0.5
    assert rep.defects["q_volume"][0] < 1e-12
    d = rep.to_dict()
    assert d["radii"] == [4.0]


def test_hom_error_rejects_small_radii(const_field):
    with pytest.raises(RadiiBelowMicroscale):
        hom_error_report(const_field, lambda x: x[..., 1], [1.0, 2.0])
