"""Estimator-style front ends for the main computations.

Each class stores its parameters in ``__init__`` (so ``get_params`` and
``set_params`` work as usual), does the expensive work in ``fit`` and
exposes the results as attributes with a trailing underscore.
"""

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as val
from .elliptic import correctors
from .errors import InputError
from .field import GridFunction
from .minimize import MinimizeConfig, energy, homogenized_field, minimize
from .regularity import flatness_profile, gradient_profile, liouville_fit
from .transmission import TransmissionProblem, solve_transmission
from .twoplane import measure_flatness, phi, psi


def _interpolator(u):
    grid = u.grid
    axes = [grid.axis(k) for k in range(grid.dim)]
    return RegularGridInterpolator(axes, u.values, bounds_error=False, fill_value=np.nan)


class Homogenizer(BaseEstimator, TransformerMixin):
    """Periodic correctors and the homogenized matrix of a medium.

    ``fit(field)`` sets ``correctors_``, ``abar_`` and ``homogenized_``
    (the constant medium of the homogenized energy).  ``transform(Q)``
    maps slopes ``(n, d)`` to their correctors on the unit cell grid and
    ``predict(Q)`` gives the effective fluxes ``abar q``.
    """

    def __init__(self, m=None, method="direct"):
        self.m = m
        self.method = method

    def fit(self, field, y=None):
        val.check_field(field)
        self.correctors_ = correctors(field, m=self.m, method=self.method)
        self.abar_ = self.correctors_.abar
        self.homogenized_ = homogenized_field(field, self.abar_)
        self.dim_ = field.dim
        return self

    def transform(self, Q):
        check_is_fitted(self, "correctors_")
        Q = val.check_points(Q, self.dim_)
        return np.stack([self.correctors_.corrector(q) for q in Q])

    def predict(self, Q):
        check_is_fitted(self, "abar_")
        Q = val.check_points(Q, self.dim_)
        return Q @ self.abar_.T


class TwoPhaseMinimizer(BaseEstimator):
    """Minimizer of the two-phase energy with given boundary values.

    ``fit(field, g)`` takes a :class:`GridFunction` with the boundary data;
    ``predict(X)`` interpolates the minimizer at points ``(n, d)``.
    """

    def __init__(self, radius=None, epsilon=(4.0, 2.0, 1.0), max_iter=150, two_starts=True,
                 method="direct", seed=0):
        self.radius = radius
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.two_starts = two_starts
        self.method = method
        self.seed = seed

    def _config(self):
        return MinimizeConfig(epsilon=tuple(self.epsilon), max_iter=int(self.max_iter),
                              two_starts=bool(self.two_starts), method=self.method,
                              seed=int(self.seed))

    def fit(self, field, g):
        val.check_field(field)
        val.check_grid_function(g, "g")
        res = minimize(field, g, self.radius, self._config())
        self.result_ = res
        self.u_ = res.u
        self.energy_ = res.energy
        self.converged_ = res.converged
        self.field_ = field
        return self

    def predict(self, X):
        check_is_fitted(self, "u_")
        X = val.check_points(X, self.u_.grid.dim)
        return _interpolator(self.u_)(X)

    def score(self, field=None, g=None):
        """Negative energy of the fitted minimizer in its ball (higher is better)."""
        check_is_fitted(self, "u_")
        radius = self.u_.grid.radius if self.radius is None else self.radius
        return -energy(self.field_ if field is None else field, self.u_, radius).total


class TwoPlaneFlatness(BaseEstimator, TransformerMixin):
    """Best two-plane fit of a grid function in a ball.

    After ``fit(u)``: ``delta_``, ``alpha_``, ``nu_`` and ``achieved_``.
    ``predict(X)`` evaluates the fitted two-plane solution and
    ``transform(u)`` returns ``Psi_alpha(u) - x.nu`` as a grid function.
    """

    def __init__(self, radius=1.0, center=None, rel_tol=1e-4, tie_tol=1e-6):
        self.radius = radius
        self.center = center
        self.rel_tol = rel_tol
        self.tie_tol = tie_tol

    def fit(self, u, y=None):
        val.check_grid_function(u)
        val.check_scalar(self.radius, "radius", low=0, inclusive=False)
        fit = measure_flatness(u, self.radius, self.center, self.rel_tol, self.tie_tol)
        self.fit_ = fit
        self.delta_, self.alpha_, self.nu_, self.achieved_ = fit.delta, fit.alpha, fit.nu, fit.achieved
        self.center_ = u.grid.center if self.center is None else np.asarray(self.center, float)
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = val.check_points(X, len(self.nu_))
        return phi(self.alpha_, (X - self.center_) @ self.nu_)

    def transform(self, u):
        check_is_fitted(self, "fit_")
        val.check_grid_function(u)
        x = u.grid.node_coords() - self.center_
        return u.replace(psi(self.alpha_, u.values) - x @ self.nu_)


class TransmissionSolver(BaseEstimator):
    """Solver of the transmission problem on the unit ball.

    ``fit(data)`` takes a callable boundary datum of node coordinates and
    stores ``solution_``; ``predict(X)`` interpolates ``w``.
    """

    def __init__(self, alpha=1.0, n=32, dim=2, scheme="flux"):
        self.alpha = alpha
        self.n = n
        self.dim = dim
        self.scheme = scheme

    def fit(self, data, y=None):
        if not callable(data):
            raise InputError("data must be a callable of node coordinates")
        val.check_scalar(self.alpha, "alpha", low=0, allow_inf=True)
        self.solution_ = solve_transmission(
            TransmissionProblem(float(self.alpha), data, int(self.n), int(self.dim), self.scheme))
        self.gamma_plus_ = self.solution_.gamma_plus
        self.gamma_minus_ = self.solution_.gamma_minus
        self.tau_ = self.solution_.tau
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = val.check_points(X, int(self.dim))
        return _interpolator(self.solution_.w)(X)


class ScaleProfiler(BaseEstimator):
    """Gradient, flatness or Liouville profile over a list of radii.

    ``fit(u)`` stores ``profile_`` (a :class:`ScaleProfile`), and for the
    Liouville profile also ``alpha_`` and ``nu_``.
    """

    def __init__(self, what="gradient", radii=(4.0, 8.0, 16.0), r0=4.0, center=None):
        self.what = what
        self.radii = radii
        self.r0 = r0
        self.center = center

    def fit(self, u, y=None):
        val.check_grid_function(u)
        radii = val.check_radii(self.radii, self.r0)
        if self.what == "gradient":
            self.profile_ = gradient_profile(u, radii, self.center, self.r0)
        elif self.what == "flatness":
            self.profile_ = flatness_profile(u, radii, self.center, self.r0)
        elif self.what == "liouville":
            self.alpha_, self.nu_, self.profile_ = liouville_fit(u, radii, self.center, self.r0)
        else:
            raise InputError(f"unknown profile {self.what!r}")
        return self


def two_plane_data(grid, alpha, nu=None, offset=0.0):
    """Boundary data ``Phi_alpha(x.nu + offset)`` as a grid function."""
    nu = np.eye(grid.dim)[-1] if nu is None else np.asarray(nu, float) / np.linalg.norm(nu)
    return GridFunction.from_function(grid, lambda x: phi(alpha, x @ nu + offset))


__all__ = ["Homogenizer", "TwoPhaseMinimizer", "TwoPlaneFlatness", "TransmissionSolver",
           "ScaleProfiler", "two_plane_data"]
