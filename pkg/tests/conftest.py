import numpy as np
import pytest

from hoft.densemat import Rng, gaussian_matrix


@pytest.fixture
def rng():
    return Rng(1234)


def gauss(seed, m, n):
    return gaussian_matrix(Rng(seed), m, n)


def pytest_configure(config):
    np.set_printoptions(precision=4)
