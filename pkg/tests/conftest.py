import numpy as np
import pytest

from condensate.activations import get_activation
from condensate.nn import InitSpec, NetworkConfig, init_parameters


def central_difference_gradient(loss_fn, theta):
    """Oracle: central differences with step 1e-6 * (1 + |theta_i|)."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    for i in range(theta.size):
        h = 1e-6 * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (loss_fn(tp) - loss_fn(tm)) / (2.0 * h)
    return out


def make_net(widths=(1, 5, 1), activation="tanh", std=0.7, seed=0, bias=True):
    config = NetworkConfig(widths, get_activation(activation), 1.0,
                           InitSpec.direct(std, std, seed=seed), has_bias=bias)
    return config, init_parameters(config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
