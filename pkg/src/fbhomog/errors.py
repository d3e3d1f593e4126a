"""Exception hierarchy used across the package.

Every error raised on purpose derives from :class:`FBHomogError`, so a
caller (the command line driver in particular) can distinguish a
rejected input from a genuine bug.
"""


class FBHomogError(Exception):
    """Base class for all package errors."""


class InputError(FBHomogError, ValueError):
    """Invalid input detected before any computation started."""


class NonPositiveGap(InputError):
    """The averaged phase gap <Q+^2> - <Q-^2> is not positive."""


class EllipticityViolation(InputError):
    """A coefficient sample leaves the admissible ellipticity band."""


class EmptyBall(InputError):
    """A ball contains no grid cells."""


class NotHarmonic(InputError):
    """A function expected to be discretely a-harmonic is not."""


class DegenerateSlope(InputError):
    """A two-plane slope is outside the admissible range."""


class InvalidComposition(InputError):
    """Slope shift parameters violate their admissibility condition."""


class ZeroTau(InputError):
    """A tangential tilt vector of zero length was supplied."""


class EtaTooLarge(InputError):
    """The closeness parameter exceeds the range where the bounds apply."""


class PreconditionViolated(InputError):
    """A documented precondition of a routine does not hold."""


class ScaleTooLarge(InputError):
    """A requested radius does not fit into the computational ball."""


class RadiiBelowMicroscale(InputError):
    """All requested radii are below the microscopic floor."""


class ConfigInvalid(InputError):
    """A configuration file is malformed or contains unknown keys."""


class SolverDivergence(FBHomogError, RuntimeError):
    """A linear solve did not reach its residual tolerance."""


class NotConverged(FBHomogError, RuntimeError):
    """An iterative minimization stopped before meeting its criterion."""


class NotFlat(FBHomogError, RuntimeError):
    """A function is too far from every two-plane solution."""


class NoInterface(FBHomogError, RuntimeError):
    """No sign change is present where one is required."""


class NoNegativePhase(FBHomogError, RuntimeError):
    """The negative phase is empty where it is required to exist."""
