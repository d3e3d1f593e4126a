import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fbhomog.errors import (DegenerateSlope, EtaTooLarge, InvalidComposition,
                            PreconditionViolated, ZeroTau)
from fbhomog.field import Grid, GridFunction
from fbhomog.twoplane import (SlopePair, compose_slopes, flat_fit_stability, flatness_at,
                              l_alpha, measure_flatness, phi, psi, stability_holds,
                              tilt_direction, verify_slope_shift)

alphas = st.floats(0.05, 20.0)
small = st.floats(-3.0, 3.0)


@given(alphas, st.floats(-50, 50))
def test_psi_inverts_phi(alpha, t):
    assert psi(alpha, phi(alpha, t)) == pytest.approx(t, abs=1e-12 * (1 + abs(t)))


@given(alphas, st.floats(-50, 50), st.floats(-50, 50))
def test_phi_is_increasing(alpha, s, t):
    assume(s < t)
    assert phi(alpha, s) < phi(alpha, t)


@given(alphas)
def test_slopes_are_normalized(alpha):
    pair = SlopePair.from_alpha(alpha)
    assert pair.is_normalized()
    t = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(phi(pair, t), phi(alpha, t))


@settings(max_examples=300)
@given(st.floats(0.05, 5.0), small, small, st.floats(0.0, 0.2))
def test_composition_identity(alpha, gp, gm, delta):
    try:
        a_new, lam = compose_slopes(alpha, gp, gm, delta)
    except InvalidComposition:
        return
    assume(1 + delta * gp > 0)
    z = np.linspace(-2, 2, 41)
    lhs = np.where(z > 0, np.sqrt(1 + alpha ** 2) * (1 + delta * gp) * z,
                   alpha * (1 + delta * gm) * z)
    np.testing.assert_allclose(phi(a_new, lam * z), lhs, atol=1e-12 * max(1, np.abs(lhs).max()))


def test_composition_at_zero_delta():
    assert compose_slopes(1.5, 0.3, -0.2, 0.0) == pytest.approx((1.5, 1.0))


def test_balance_is_linear_in_gamma():
    assert l_alpha(1.0, 1.0, 2.0) == pytest.approx(0.0)
    assert l_alpha(0.0, 3.0, 7.0) == pytest.approx(3.0)


@given(st.floats(0.0, 2.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(1e-4, 0.05))
def test_slope_shift_defect_is_second_order(p, gp, gm, delta):
    err = verify_slope_shift(lambda x: np.full(len(x), p), gp, gm, delta, n=41)
    assert err <= 4 * delta ** 2 * (abs(p) + 1) * (abs(gp) + abs(gm) + 1)


def test_tilt_direction_is_unit():
    e = tilt_direction([0.5], 0.4)
    assert np.linalg.norm(e) == pytest.approx(1.0)
    assert e[1] == pytest.approx(np.cos(0.2))
    with pytest.raises(ZeroTau):
        tilt_direction([0.0], 0.1)
    with pytest.raises(PreconditionViolated):
        tilt_direction([10.0], 1.0)


def test_degenerate_slopes_are_rejected():
    with pytest.raises(DegenerateSlope):
        psi(0.0, 1.0)
    with pytest.raises(DegenerateSlope):
        SlopePair(0.0, 1.0)
    with pytest.raises(DegenerateSlope):
        phi(-1.0, 0.0)


@pytest.mark.parametrize("alpha", [0.3, 1.0, 3.0])
def test_exact_two_plane_is_flat(alpha, two_plane):
    u = two_plane(alpha)
    fit = measure_flatness(u, 3.0)
    assert fit.delta < 1e-4
    assert fit.alpha == pytest.approx(alpha, rel=1e-3)
    np.testing.assert_allclose(fit.nu, [0.0, 1.0], atol=1e-4)
    assert fit.achieved


def test_rotated_two_plane_recovers_direction():
    grid = Grid(2, 4.0, 0.125)
    nu = np.array([np.sin(0.3), np.cos(0.3)])
    u = GridFunction.from_function(grid, lambda x: phi(2.0, x @ nu))
    fit = measure_flatness(u, 3.0)
    np.testing.assert_allclose(fit.nu, nu, atol=1e-3)
    assert flatness_at(u, 3.0, 2.0, nu) < 1e-12


def test_one_phase_fit_has_alpha_zero():
    grid = Grid(2, 4.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: np.maximum(x[..., 1], 0.0))
    fit = measure_flatness(u, 3.0)
    assert fit.alpha == 0.0
    assert fit.delta < 1e-4
    assert not fit.achieved


def test_stability_bounds_on_shifted_data():
    grid = Grid(2, 4.0, 1 / 16)
    u = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1] + 0.01))
    eta, ratio, direction, fit = flat_fit_stability(u, 2.0, 1.0, [0.0, 1.0])
    assert eta == pytest.approx(0.005, rel=1e-6)
    assert all(stability_holds(eta, ratio, direction))


def test_stability_guard():
    grid = Grid(2, 4.0, 0.25)
    u = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1] + 0.5))
    with pytest.raises(EtaTooLarge):
        flat_fit_stability(u, 2.0, 1.0, [0.0, 1.0])
