import numpy as np
import pytest

from odelearn.fields import FuncField
from odelearn import ops


def pendulum_rhs(y):
    p = y[..., 0]
    q = y[..., 1]
    return ops.stack_last([-0.2 * p - 8.91 * ops.sin(q), p])


@pytest.fixture
def pendulum_field():
    return FuncField(pendulum_rhs, 2, name="pendulum")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def central_difference_gradient(fn, theta, step_scale=1e-6):
    """Finite-difference oracle: central differences with per-coordinate
    step 1e-6 * max(1, |theta_i|)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        h = step_scale * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def relative_gradient_error(g_ad, g_fd):
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom))
