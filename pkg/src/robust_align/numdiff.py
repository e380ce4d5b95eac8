"""Central finite-difference helpers used by tests and constant estimation."""

from __future__ import annotations

import numpy as np

DEFAULT_GRAD_STEP = 1e-5


def fd_step(theta, step=DEFAULT_GRAD_STEP):
    """Step scaled as step * max(1, ||theta||)."""
    return step * max(1.0, float(np.linalg.norm(theta)))


def fd_gradient(f, theta, step=DEFAULT_GRAD_STEP):
    """Central finite-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    h = fd_step(theta, step)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return grad


def fd_hessian_from_grad(grad_f, theta, step=DEFAULT_GRAD_STEP):
    """Central finite-difference Hessian built from an exact gradient callable.

    Symmetrized: much better conditioned than double differencing of values.
    """
    theta = np.asarray(theta, dtype=float)
    h = fd_step(theta, step)
    d = theta.size
    hess = np.empty((d, d))
    for i in range(d):
        e = np.zeros_like(theta)
        e[i] = h
        hess[i] = (grad_f(theta + e) - grad_f(theta - e)) / (2.0 * h)
    return 0.5 * (hess + hess.T)
