import numpy as np
import pytest

from ldokit import Grid, RswParams, StateField
from ldokit.ldo_features import quadratic_basis


@pytest.fixture(scope="session")
def params():
    return RswParams(1000.0, 0.05)


@pytest.fixture(scope="session")
def quad():
    return quadratic_basis()


@pytest.fixture
def small_grid():
    return Grid(8, 6, 1.0)


def random_field(grid, seed=0, scale=1.0, eta_offset=1.0):
    """Smooth-ish random state used where analytic fields are not needed."""
    rng = np.random.default_rng(seed)
    vals = scale * rng.uniform(-1.0, 1.0, (3, grid.ny, grid.nx))
    vals[2] += eta_offset
    return StateField(grid, vals)
