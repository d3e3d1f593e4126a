import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fbhomog import (Homogenizer, ScaleProfiler, TransmissionSolver, TwoPhaseMinimizer,
                     TwoPlaneFlatness)
from fbhomog.errors import InputError
from fbhomog.estimators import two_plane_data
from fbhomog.field import Grid


def test_params_round_trip():
    est = TwoPhaseMinimizer(radius=2.0, max_iter=10)
    assert est.get_params()["max_iter"] == 10
    other = clone(est).set_params(max_iter=20)
    assert other.max_iter == 20 and est.max_iter == 10


@pytest.mark.parametrize("est,method,arg", [
    (Homogenizer(), "predict", np.eye(2)),
    (TwoPhaseMinimizer(), "predict", np.zeros((1, 2))),
    (TwoPlaneFlatness(), "predict", np.zeros((1, 2))),
    (TransmissionSolver(), "predict", np.zeros((1, 2))),
])
def test_unfitted_estimators_raise(est, method, arg):
    with pytest.raises(NotFittedError):
        getattr(est, method)(arg)


def test_homogenizer_laminate(lam_field):
    est = Homogenizer(m=64).fit(lam_field)
    np.testing.assert_allclose(est.abar_, np.diag([np.sqrt(3), 2.0]), atol=2e-3)
    np.testing.assert_allclose(est.predict([[1.0, 1.0]]), [est.abar_ @ [1.0, 1.0]])
    assert est.transform([[1.0, 0.0], [0.0, 1.0]]).shape == (2, 64, 64)
    with pytest.raises(InputError):
        est.predict([[1.0, 2.0, 3.0]])


def test_minimizer_and_flatness_pipeline(const_field):
    grid = Grid(2, 2.0, 0.125)
    g = two_plane_data(grid, 1.0)
    mini = TwoPhaseMinimizer().fit(const_field, g)
    assert mini.converged_
    assert mini.score() == pytest.approx(-mini.energy_.total)
    vals = mini.predict([[0.0, 0.5], [0.0, -0.5]])
    assert vals[0] > 0 > vals[1]
    flat = TwoPlaneFlatness(radius=1.0).fit(mini.u_)
    assert flat.alpha_ == pytest.approx(1.0, rel=0.2)
    w = flat.transform(mini.u_)
    assert np.abs(w.values[grid.ball_nodes(1.0)]).max() == pytest.approx(flat.delta_, rel=1e-6)


def test_transmission_solver():
    # piecewise linear with (1 + a^2) g+ = a^2 g- is an exact solution
    est = TransmissionSolver(alpha=1.0, n=16).fit(
        lambda x: x[..., 0] + 0.5 * np.maximum(x[..., 1], 0) + np.minimum(x[..., 1], 0))
    np.testing.assert_allclose(est.predict([[0.5, 0.5], [0.0, -0.5]]), [0.75, -0.5], atol=1e-10)
    assert est.gamma_plus_ == pytest.approx(0.5)
    with pytest.raises(InputError):
        TransmissionSolver().fit(3.0)


def test_scale_profiler(two_plane):
    u = two_plane(1.0, radius=8.0)
    prof = ScaleProfiler(what="gradient", radii=[2.0, 4.0], r0=1.0).fit(u).profile_
    assert len(prof.values) == 2
    est = ScaleProfiler(what="liouville", radii=[2.0, 4.0, 6.0], r0=1.0).fit(u)
    assert est.alpha_ == pytest.approx(1.0, rel=1e-3)
    with pytest.raises(InputError):
        ScaleProfiler(what="curvature", r0=1.0, radii=[2.0]).fit(u)
