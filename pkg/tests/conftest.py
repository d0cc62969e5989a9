import numpy as np
import pytest

from reweight.core import Dataset, make_rng


@pytest.fixture
def rng():
    return make_rng(0, 0)


@pytest.fixture
def poisson_data(rng):
    return Dataset(rng.poisson(5.0, 60).astype(float))


@pytest.fixture
def logistic_data(rng):
    x = rng.uniform(-3.0, 3.0, 50)
    y = (rng.uniform(size=50) < 1.0 / (1.0 + np.exp(-0.8 * x))).astype(float)
    return Dataset(y, x[:, None])


@pytest.fixture
def linreg_data(rng):
    x = rng.normal(0.0, 2.0, 50)
    y = 1.5 + 0.7 * x + 0.5 * rng.standard_normal(50)
    return Dataset(y, x[:, None])
