"""Closed-form inference for Gaussian likelihoods."""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import ValidationError
from .kernels import kern_train_matrix_grads
from .likelihoods import LOG2PI, lik_pred
from .model import total_cross_cov, total_diag, total_train_cov, validate

Prediction = namedtuple("Prediction", "Eft Varft Eyt Varyt lpyt")
Prediction.__doc__ = """Latent and observation predictive summaries.

``Eyt``/``Varyt`` are ``None`` for component (``predcf``) predictions and
``lpyt`` is ``None`` unless test targets were supplied."""


@dataclass(frozen=True, eq=False)
class ExactState:
    """Fitted Gaussian posterior.

    ``L`` is the lower Cholesky factor of ``K_y = K + sigma2*I (+ jitter)``
    and ``alpha = K_y^{-1} y``. With a mean basis, ``A_chol`` factors
    ``A = B^{-1} + H K_y^{-1} H^T`` (or ``A_v`` for a vague prior) and
    ``beta`` holds the posterior weight mean.
    """

    model: object
    data: object
    y: np.ndarray
    aux: dict
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    H: np.ndarray = None
    A_chol: np.ndarray = None
    beta: np.ndarray = None


def _noise(model):
    return model.likelihood.params["sigma2"]


def _ky(model, X):
    K = total_train_cov(model, X)
    n = X.shape[0]
    return K + _noise(model) * np.eye(n)


def exact_fit(model, data):
    """Factorize ``K_y`` and solve for ``alpha``."""
    model, y, aux = validate(model, data)
    if model.likelihood.family != "gaussian":
        raise ValidationError("model.exact_likelihood", "exact inference needs a gaussian likelihood")
    L, jit = la.chol_escalate(_ky(model, data.X))
    alpha = la.chol_solve(L, y)
    H = A_chol = beta = None
    mb = model.mean
    if mb is not None:
        H = mb.H(data.X)
        KiHt = la.chol_solve(L, H.T)
        A = H @ KiHt
        rhs = H @ alpha
        if mb.vague:
            if np.linalg.matrix_rank(H) < H.shape[0]:
                raise ValidationError("mean.rank", "vague mean basis needs H of full row rank")
        else:
            Binv = np.linalg.inv(mb.B)
            A = A + Binv
            rhs = rhs + Binv @ mb.b
        A_chol, _ = la.chol_escalate(la.symmetrize(A))
        beta = la.chol_solve(A_chol, rhs)
    return ExactState(model, data, y, aux, L, alpha, jit, H, A_chol, beta)


def exact_predict(state, Xt, predcf=None, yt=None, full_cov=False, aux_t=None):
    """Posterior predictive distribution at ``Xt``.

    Parameters
    ----------
    predcf : int or sequence of int, optional
        Restrict the latent prediction to these additive components.
    yt : array_like, optional
        Test targets; adds their log predictive densities.
    full_cov : bool
        Return the full latent covariance in place of ``Varft``.
    """
    model = state.model
    Xt = np.asarray(Xt, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    X = state.data.X
    Ks = total_cross_cov(model, X, Xt, predcf)
    V = la.tri_solve(state.L, Ks)
    if state.H is not None and predcf is None:
        return _meanfn_predict(state, Xt, Ks, V, yt, full_cov)
    mean = Ks.T @ state.alpha
    if full_cov:
        cov = total_cross_cov(model, Xt, Xt, predcf) - V.T @ V
        var = la.symmetrize(cov)
    else:
        var = np.maximum(total_diag(model, Xt, predcf) - np.sum(V**2, axis=0), 0.0)
    if predcf is not None:
        return Prediction(mean, var, None, None, None)
    vdiag = np.diag(var) if full_cov else var
    Ey, Vy, lp = lik_pred(model.likelihood, mean, vdiag, yt, aux_t)
    return Prediction(mean, var, Ey, Vy, lp)


def exact_lml(state):
    """Log marginal likelihood ``log N(y | 0, K_y)``, or the mean-basis forms."""
    if state.H is not None:
        return meanfn_lml(state)
    n = state.y.size
    return float(-0.5 * state.y @ state.alpha - 0.5 * la.chol_logdet(state.L) - 0.5 * n * LOG2PI)


def _grad_from_Q(state, Q):
    """Contract ``0.5 * tr(Q dK_j)`` for each free parameter, Q symmetric."""
    model = state.model
    X = state.data.X
    g = []
    for k in model.kernels:
        for dK in kern_train_matrix_grads(k, X):
            g.append(0.5 * np.sum(Q * dK))
    if model.likelihood.free_names():
        g.append(0.5 * _noise(model) * np.trace(Q))
    return np.array(g)


def exact_lml_grad(state):
    """Gradient of :func:`exact_lml` w.r.t. the packed log parameters."""
    if state.H is not None:
        return meanfn_lml_grad(state)
    Kinv = la.inv_from_chol(state.L)
    Q = np.outer(state.alpha, state.alpha) - Kinv
    return _grad_from_Q(state, Q)


def exact_loo(state):
    """Analytic leave-one-out predictive for each observation.

    Returns ``(mu, var, lpd)``: the LOO mean and variance of ``y_i`` and
    ``log p(y_i | y_{-i})``.
    """
    if state.H is not None:
        if state.model.mean.vague:
            raise ValidationError("loo.vague", "analytic LOO is not available for a vague mean basis")
        N = _ky(state.model, state.data.X) + state.H.T @ state.model.mean.B @ state.H
        L, _ = la.chol_escalate(la.symmetrize(N))
        r = state.y - state.H.T @ state.model.mean.b
        a = la.chol_solve(L, r)
        Kinv = la.inv_from_chol(L)
    else:
        a = state.alpha
        Kinv = la.inv_from_chol(state.L)
        r = state.y
    d = np.diag(Kinv)
    var = 1.0 / d
    mu = state.y - a / d
    lpd = -0.5 * (LOG2PI + np.log(var)) - 0.5 * (state.y - mu) ** 2 / var
    return mu, var, lpd


# --------------------------------------------------------------------------
# explicit basis mean functions

def _meanfn_predict(state, Xt, Ks, V, yt, full_cov):
    model = state.model
    Ht = model.mean.H(Xt)
    KiKs = la.chol_solve(state.L, Ks)
    R = Ht - state.H @ KiKs
    mean = Ks.T @ state.alpha + R.T @ state.beta
    W = la.tri_solve(state.A_chol, R)
    if full_cov:
        cov = total_cross_cov(model, Xt, Xt) - V.T @ V + W.T @ W
        var = la.symmetrize(cov)
        vdiag = np.diag(var)
    else:
        var = np.maximum(total_diag(model, Xt) - np.sum(V**2, axis=0), 0.0) + np.sum(W**2, axis=0)
        vdiag = var
    Ey, Vy, lp = lik_pred(model.likelihood, mean, vdiag, yt)
    return Prediction(mean, var, Ey, Vy, lp)


def meanfn_predict(state, Xt, full_cov=False):
    """Mean-basis predictive mean and variance (exact or vague prior)."""
    p = exact_predict(state, Xt, full_cov=full_cov)
    return p.Eft, p.Varft


def meanfn_lml(state):
    """Log marginal likelihood for the mean-basis model.

    Exact prior: ``log N(y | H^T b, K_y + H^T B H)`` assembled through
    ``A``. Vague prior: the limiting form with ``(n - m)/2 log(2 pi)``.
    """
    mb = state.model.mean
    y, H = state.y, state.H
    n, m = y.size, H.shape[0]
    ldK = la.chol_logdet(state.L)
    ldA = la.chol_logdet(state.A_chol)
    if mb.vague:
        KiHt = la.chol_solve(state.L, H.T)
        u = KiHt.T @ y
        quad = -0.5 * y @ state.alpha + 0.5 * u @ la.chol_solve(state.A_chol, u)
        return float(quad - 0.5 * ldK - 0.5 * ldA - 0.5 * (n - m) * LOG2PI)
    M = H.T @ mb.b - y
    NiM = _Ninv(state, M)
    _, ldB = np.linalg.slogdet(mb.B)
    return float(-0.5 * M @ NiM - 0.5 * ldK - 0.5 * ldB - 0.5 * ldA - 0.5 * n * LOG2PI)


def _Ninv(state, v):
    # N^{-1} = K^{-1} - K^{-1} H^T A^{-1} H K^{-1}
    Kv = la.chol_solve(state.L, v)
    KiHt = la.chol_solve(state.L, state.H.T)
    return Kv - KiHt @ la.chol_solve(state.A_chol, state.H @ Kv)


def meanfn_lml_grad(state):
    """Gradient of :func:`meanfn_lml`.

    Each component is ``0.5 a^T dK a - 0.5 tr(K^{-1} dK) - 0.5 tr(A^{-1} dA)``
    with ``dA = -H K^{-1} dK K^{-1} H^T``; ``a = N^{-1} M`` for the exact prior
    and ``a = K^{-1}(y - G)`` for the vague one.
    """
    mb = state.model.mean
    y, H = state.y, state.H
    Kinv = la.inv_from_chol(state.L)
    KiHt = Kinv @ H.T
    if mb.vague:
        G = H.T @ state.beta
        a = Kinv @ (y - G)
    else:
        a = _Ninv(state, H.T @ mb.b - y)
    C = KiHt @ la.chol_solve(state.A_chol, KiHt.T)
    Q = np.outer(a, a) - Kinv + C
    return _grad_from_Q(state, la.symmetrize(Q))
