"""Gauss-Hermite rules for one-dimensional Gaussian integrals."""

from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

DEFAULT_NODES = 31


@lru_cache(maxsize=None)
def hermgauss(n=DEFAULT_NODES):
    """Nodes and log-weights of the physicists' rule for weight exp(-x^2)."""
    x, w = np.polynomial.hermite.hermgauss(n)
    x.setflags(write=False)
    logw = np.log(w)
    logw.setflags(write=False)
    return x, logw


def gaussian_nodes(mean, var, n=DEFAULT_NODES):
    """Nodes and probability weights for expectations under N(mean, var).

    ``mean`` and ``var`` broadcast; the node axis is appended last.
    """
    x, logw = hermgauss(n)
    mean = np.asarray(mean, dtype=float)[..., None]
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))[..., None]
    f = mean + np.sqrt(2.0) * sd * x
    w = np.exp(logw) / np.sqrt(np.pi)
    return f, w


def expect(func, mean, var, n=DEFAULT_NODES):
    """E[func(f)] for f ~ N(mean, var), elementwise over broadcast shapes."""
    f, w = gaussian_nodes(mean, var, n)
    return np.sum(func(f) * w, axis=-1)


def log_integral(log_h, center, scale, n=DEFAULT_NODES):
    """log of the integral of exp(log_h(f)) with nodes placed at center +- scale.

    ``log_h`` receives an array whose last axis holds the nodes. Returns the
    log integral together with the node locations and normalized weights of
    the integrand, which callers use to form moments.
    """
    x, logw = hermgauss(n)
    center = np.asarray(center, dtype=float)[..., None]
    scale = np.asarray(scale, dtype=float)[..., None]
    f = center + np.sqrt(2.0) * scale * x
    terms = log_h(f) + x**2 + logw
    logZ = logsumexp(terms, axis=-1) + np.log(np.sqrt(2.0) * scale[..., 0])
    with np.errstate(invalid="ignore"):
        p = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))
    return logZ, f, p
