"""Input validation helpers shared by the estimators and the command line."""

import numbers

import numpy as np

from .errors import InputError, RadiiBelowMicroscale
from .field import CoefficientField, GridFunction


def check_field(field):
    if not isinstance(field, CoefficientField):
        raise InputError(f"expected a CoefficientField, got {type(field).__name__}")
    return field


def check_grid_function(u, name="u"):
    if not isinstance(u, GridFunction):
        raise InputError(f"{name} must be a GridFunction, got {type(u).__name__}")
    if not np.all(np.isfinite(u.values)):
        raise InputError(f"{name} has non-finite values")
    return u


def check_scalar(value, name, low=None, high=None, inclusive=True, allow_inf=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise InputError(f"{name} must be a real number")
    value = float(value)
    if np.isnan(value) or (np.isinf(value) and not allow_inf):
        raise InputError(f"{name} must be finite")
    if low is not None and (value < low or (not inclusive and value == low)):
        raise InputError(f"{name} must be {'>=' if inclusive else '>'} {low}")
    if high is not None and (value > high or (not inclusive and value == high)):
        raise InputError(f"{name} must be {'<=' if inclusive else '<'} {high}")
    return value


def check_radii(radii, r0=0.0):
    """Sorted positive radii at or above ``r0``."""
    try:
        out = sorted(float(r) for r in radii)
    except TypeError:
        raise InputError("radii must be a sequence of numbers") from None
    if not out or out[0] <= 0:
        raise InputError("radii must be positive and nonempty")
    if out[-1] < r0:
        raise RadiiBelowMicroscale(f"all radii are below the microscale {r0:g}")
    return out


def check_points(x, dim):
    """Array of points with trailing dimension ``dim``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and x.size == dim:
        x = x[None, :]
    if x.shape[-1] != dim:
        raise InputError(f"points must have trailing dimension {dim}, got shape {x.shape}")
    return x
