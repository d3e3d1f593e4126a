import numpy as np
import pytest

from fbhomog.field import Grid, GridFunction, constant_field, laminate_field
from fbhomog.twoplane import phi


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def const_field():
    return constant_field(1.0, 2.0, 1.0)


@pytest.fixture
def lam_field():
    return laminate_field()


@pytest.fixture
def two_plane():
    """Factory for Phi_alpha(x_d) on a 2D grid."""
    def make(alpha=1.0, radius=4.0, h=0.25):
        grid = Grid(2, radius, h)
        return GridFunction.from_function(grid, lambda x: phi(alpha, x[..., 1]))
    return make
