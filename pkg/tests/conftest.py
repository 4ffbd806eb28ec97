"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from gpcore import Dataset


def central_fd(fun, w, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    w = np.asarray(w, dtype=float)
    g = np.empty(w.size)
    for i in range(w.size):
        e = np.zeros(w.size)
        e[i] = h
        g[i] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def regression_data():
    """Smooth 2-D regression problem, n=20."""
    r = np.random.default_rng(7)
    X = r.uniform(-2, 2, size=(20, 2))
    y = np.sin(1.5 * X[:, 0]) + 0.4 * X[:, 1] + 0.2 * r.standard_normal(20)
    return Dataset(X, y)


@pytest.fixture
def classification_data():
    """Labels in {-1, +1} from a noisy latent, n=20."""
    r = np.random.default_rng(8)
    X = r.uniform(-2, 2, size=(20, 2))
    f = np.sin(1.5 * X[:, 0]) + 0.4 * X[:, 1]
    y = np.where(f + 0.4 * r.standard_normal(20) > 0, 1.0, -1.0)
    return Dataset(X, y)


@pytest.fixture
def count_data():
    r = np.random.default_rng(9)
    X = r.uniform(-2, 2, size=(20, 1))
    E = r.uniform(0.5, 2.0, 20)
    y = r.poisson(E * np.exp(0.8 * np.sin(X[:, 0]))).astype(float)
    return Dataset(X, y, exposure=E)
