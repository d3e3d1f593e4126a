"""Numerical study of two-phase free boundary problems in periodic media.

The package discretizes the two-phase energy on uniform grids, computes
periodic correctors and homogenized coefficients, measures flatness
against two-plane solutions, solves the linearized transmission problem,
and assembles multi-scale regularity diagnostics.
"""

from .errors import FBHomogError
from .estimators import (Homogenizer, ScaleProfiler, TransmissionSolver, TwoPhaseMinimizer,
                         TwoPlaneFlatness, two_plane_data)
from .field import (CoefficientField, Grid, GridFunction, checkerboard_field, constant_field,
                    laminate_field)

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "Grid", "GridFunction", "FBHomogError",
    "constant_field", "laminate_field", "checkerboard_field",
    "Homogenizer", "TwoPhaseMinimizer", "TwoPlaneFlatness", "TransmissionSolver",
    "ScaleProfiler", "two_plane_data",
]
