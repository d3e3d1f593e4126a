import numpy as np
import pytest

from fbhomog.errors import InputError, NotFlat, PreconditionViolated
from fbhomog.field import Grid, GridFunction
from fbhomog.transmission import (TransmissionProblem, c11_fit, expansion_residual,
                                  flat_correction, interface_balance, solve_transmission,
                                  transmission_continuity, two_plane_perturbation)
from fbhomog.twoplane import l_alpha, phi


def _data(x):
    return np.exp(0.5 * x[..., 0]) * np.cos(x[..., 1]) + 0.7 * x[..., 1]


def _piecewise(gp, gm):
    return lambda x: (0.3 + 0.5 * x[..., 0] + gp * np.maximum(x[..., 1], 0)
                      + gm * np.minimum(x[..., 1], 0))


@pytest.mark.parametrize("scheme", ["flux", "one-sided"])
@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_piecewise_linear_solutions_are_exact(alpha, scheme):
    gm = 0.8
    gp = alpha ** 2 * gm / (1 + alpha ** 2)
    assert l_alpha(alpha, gp, gm) == pytest.approx(0.0)
    w = _piecewise(gp, gm)
    sol = solve_transmission(TransmissionProblem(alpha, w, 16, scheme=scheme))
    np.testing.assert_allclose(sol.w.values, w(sol.w.grid.node_coords()), atol=1e-9)
    assert sol.gamma_plus == pytest.approx(gp, abs=1e-9)
    assert sol.gamma_minus == pytest.approx(gm, abs=1e-9)
    np.testing.assert_allclose(sol.tau, [0.5], atol=1e-9)
    assert abs(sol.balance()) < 1e-8
    np.testing.assert_allclose(interface_balance(sol), 0.0, atol=1e-8)


def test_infinite_alpha_is_harmonic():
    plane = lambda x: 0.2 - 0.4 * x[..., 0] + 1.3 * x[..., 1]  # noqa: E731
    sol = solve_transmission(TransmissionProblem(np.inf, plane, 16))
    np.testing.assert_allclose(sol.w.values, plane(sol.w.grid.node_coords()), atol=1e-10)
    assert np.isnan(sol.balance())


def test_alpha_zero_decouples_the_phases():
    sol = solve_transmission(TransmissionProblem(0.0, _data, 16))
    assert np.all(np.isfinite(sol.w.values))
    assert sol.to_dict()["alpha"] == 0.0


def test_continuity_in_alpha():
    dev = transmission_continuity([1.5, 1.25, 1.125], 1.0, _data, n=16)
    assert np.all(np.diff(dev) < 0)
    assert dev[-1] < 0.05


def test_balance_converges_with_refinement():
    bal = [abs(solve_transmission(TransmissionProblem(1.5, _data, n)).balance()) for n in (8, 16, 32)]
    assert bal[2] < bal[0]
    assert bal[2] <= 1 / 32


def test_problem_validation():
    with pytest.raises(InputError):
        TransmissionProblem(-1.0, _data)
    with pytest.raises(InputError):
        TransmissionProblem(1.0, _data, n=2)
    with pytest.raises(InputError):
        TransmissionProblem(1.0, _data, scheme="upwind")
    with pytest.raises(InputError):
        solve_transmission(TransmissionProblem(1.0, lambda x: np.full(x.shape[:-1], np.nan), 8))


def test_flat_correction_of_two_plane_perturbation():
    alpha, delta = 1.0, 0.05
    sol = solve_transmission(TransmissionProblem(alpha, _piecewise(0.4, 0.8), 16))
    # shift so that w(0) = 0
    w0 = sol.w.replace(sol.w.values - 0.3)
    u = two_plane_perturbation(alpha, delta, w0)
    w = flat_correction(u, alpha, delta * 2, radius=1.0)
    nodes = ~np.isnan(w.values)
    np.testing.assert_allclose(w.values[nodes], w0.values[nodes] / 2, atol=1e-12)
    assert expansion_residual(u, alpha, delta, w0) < 1e-12


def test_flat_correction_detects_non_flat_data():
    grid = Grid(2, 1.0, 1 / 8)
    u = GridFunction.from_function(grid, lambda x: phi(1.0, x[..., 1] + 0.5))
    with pytest.raises(NotFlat):
        flat_correction(u, 1.0, 0.1)


def test_expansion_residual_requires_w_zero_at_origin():
    sol = solve_transmission(TransmissionProblem(1.0, _piecewise(0.5, 1.0), 8))
    u = two_plane_perturbation(1.0, 0.1, sol.w)
    with pytest.raises(PreconditionViolated):
        expansion_residual(u, 1.0, 0.1, sol.w)


def test_c11_fit_of_exact_solution():
    sol = solve_transmission(TransmissionProblem(1.0, _piecewise(0.4, 0.8), 16))
    out = c11_fit(sol, [0.25, 0.5])
    assert max(out["defect"]) < 1e-9
    assert out["gamma_plus"][0] == pytest.approx(0.4)
    assert out["tau"][1] == pytest.approx([0.5])
