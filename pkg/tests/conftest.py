import numpy as np
import pytest

from gp_experts.core.models import ExpertHyper, HmcConfig, PriorTable


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def priors():
    return PriorTable()


@pytest.fixture
def hmc_config():
    return HmcConfig(adaptation_iterations=5)


@pytest.fixture
def hyper():
    return ExpertHyper(1.3, np.array([0.4, 0.7]), 0.05)


@pytest.fixture
def toy_data(rng):
    X = rng.uniform(size=(12, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1] + 0.05 * rng.standard_normal(12)
    return X, (y - y.mean()) / y.std()


@pytest.fixture
def central_difference():
    def gradient(f, x, step=1e-6):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = step
            grad[k] = (f(x + e) - f(x - e)) / (2 * step)
        return grad
    return gradient
