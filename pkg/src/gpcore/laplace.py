"""Laplace approximation for non-Gaussian likelihoods."""

from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import ConvergenceError, NumericalError
from .exact import Prediction
from .kernels import kern_train_matrix_grads
from .likelihoods import LOG_CONCAVE, lik_llg, lik_llg_param, lik_pred, ll_terms
from .model import total_cross_cov, total_diag, total_train_cov, validate

DEFAULTS = dict(laplace_max_iter=100, laplace_max_halvings=20,
                laplace_obj_tol=1e-10, laplace_f_tol=1e-8)


@dataclass(frozen=True, eq=False)
class LaplaceState:
    """Mode of the latent posterior and the Gaussian approximation there.

    ``Sigma`` is the approximate posterior covariance ``(K^{-1} + W)^{-1}``
    and ``logdetB`` is ``log|I + K W|`` (absolute value when indefinite).
    """

    model: object
    data: object
    y: np.ndarray
    aux: dict
    K: np.ndarray
    f: np.ndarray
    a: np.ndarray
    W: np.ndarray
    dlp: np.ndarray
    Sigma: np.ndarray
    logdetB: float
    converged: bool
    iterations: int
    objective_trace: tuple


def _opts(model):
    o = dict(DEFAULTS)
    o.update({k: v for k, v in model.latent_opts.items() if k in DEFAULTS})
    return o


def _psi(lik, f, a, y, aux):
    return float(np.sum(ll_terms(lik, f, y, aux)) - 0.5 * a @ f)


def _newton_direction_B(K, W, f, d1):
    """Target ``a`` of a full Newton step (log-concave case)."""
    sW = np.sqrt(np.maximum(W, 0.0))
    n = K.shape[0]
    B = np.eye(n) + sW[:, None] * K * sW[None, :]
    L, _ = la.chol_escalate(B)
    b = W * f + d1
    a_new = b - sW * la.chol_solve(L, sW * (K @ b))
    return a_new


def _newton_direction_L(LK, K, W, f, a, d1):
    """Newton step ``df = (K^{-1} + W + lam I)^{-1} (d1 - a)`` with a Levenberg shift."""
    n = K.shape[0]
    g = d1 - a
    lam = 0.0
    for _ in range(200):
        M = np.eye(n) + LK.T @ ((W + lam)[:, None] * LK)
        try:
            LM = np.linalg.cholesky(la.symmetrize(M))
            break
        except np.linalg.LinAlgError:
            lam = 1e-10 if lam == 0.0 else 2.0 * lam
    else:
        raise NumericalError("Levenberg shift failed to make the Newton system positive definite")
    df = LK @ la.chol_solve(LM, LK.T @ g)
    return df


def laplace_fit(model, data, f0=None):
    """Find the posterior mode by damped Newton iteration.

    Log-concave likelihoods use the ``B = I + W^{1/2} K W^{1/2}`` form;
    others (Student-t) solve ``(K^{-1} + W + lam I) df = grad`` with the
    shift ``lam`` doubled from 1e-10 until the system is positive definite.
    Every step is halved until the objective does not decrease.
    """
    model, y, aux = validate(model, data)
    lik = model.likelihood
    opts = _opts(model)
    K = total_train_cov(model, data.X)
    n = y.size
    concave = lik.family in LOG_CONCAVE
    LK = None
    if not concave:
        LK, jit = la.chol_escalate(K)
        if jit:
            K = K + jit * np.eye(n)
    f = np.zeros(n) if f0 is None else np.array(f0, dtype=float)
    if f0 is None:
        a = np.zeros(n)
    else:
        a = la.chol_solve(LK, f) if LK is not None else np.linalg.solve(K, f)
    psi = _psi(lik, f, a, y, aux)
    trace = [psi]
    converged = False
    it = 0
    for it in range(1, opts["laplace_max_iter"] + 1):
        d1 = lik_llg(lik, f, y, aux, 1)
        W = -lik_llg(lik, f, y, aux, 2)
        if concave:
            da = _newton_direction_B(K, W, f, d1) - a
            df = K @ da
        else:
            df = _newton_direction_L(LK, K, W, f, a, d1)
            da = la.chol_solve(LK, df)
        t = 1.0
        for _ in range(opts["laplace_max_halvings"] + 1):
            f_new, a_new = f + t * df, a + t * da
            psi_new = _psi(lik, f_new, a_new, y, aux)
            if np.isfinite(psi_new) and psi_new >= psi - 1e-12 * abs(psi):
                break
            t *= 0.5
        else:
            f_new, a_new, psi_new = f, a, psi
        step = np.max(np.abs(f_new - f)) if n else 0.0
        dpsi = psi_new - psi
        f, a, psi = f_new, a_new, psi_new
        trace.append(psi)
        if abs(dpsi) < opts["laplace_obj_tol"] and step < opts["laplace_f_tol"]:
            converged = True
            break
    state = _finish(model, data, y, aux, K, f, a, converged, it, trace)
    if not converged:
        raise ConvergenceError(
            f"Laplace mode search did not converge in {opts['laplace_max_iter']} iterations",
            state,
        )
    return state


def _finish(model, data, y, aux, K, f, a, converged, it, trace):
    lik = model.likelihood
    d1 = lik_llg(lik, f, y, aux, 1)
    W = -lik_llg(lik, f, y, aux, 2)
    n = y.size
    if np.all(W >= 0):
        sW = np.sqrt(W)
        L, _ = la.chol_escalate(np.eye(n) + sW[:, None] * K * sW[None, :])
        logdetB = la.chol_logdet(L)
        V = la.tri_solve(L, sW[:, None] * K)
        Sigma = K - V.T @ V
    else:
        IKW = np.eye(n) + K * W[None, :]
        sign, logdetB = np.linalg.slogdet(IKW)
        Sigma = la.symmetrize(np.linalg.solve(IKW, K))
    return LaplaceState(model, data, y, aux, K, f, a, W, d1, la.symmetrize(Sigma),
                        float(logdetB), converged, it, tuple(trace))


def laplace_lml(state):
    """``-1/2 a^T f + log p(y|f) - 1/2 log|I + K W|`` at the mode."""
    ll = np.sum(ll_terms(state.model.likelihood, state.f, state.y, state.aux))
    return float(-0.5 * state.a @ state.f + ll - 0.5 * state.logdetB)


def laplace_lml_grad(state):
    """Gradient of :func:`laplace_lml` including the implicit mode dependence."""
    model = state.model
    lik = model.likelihood
    Sigma, W, a = state.Sigma, state.W, state.a
    R = np.diag(W) - (W[:, None] * Sigma * W[None, :])
    d3 = lik_llg(lik, state.f, state.y, state.aux, 3)
    s2 = 0.5 * np.diag(Sigma) * d3
    g = []
    for k in model.kernels:
        for dK in kern_train_matrix_grads(k, state.data.X):
            explicit = 0.5 * a @ dK @ a - 0.5 * np.sum(R * dK)
            b = dK @ a
            df = b - Sigma @ (W * b)
            g.append(explicit + s2 @ df)
    dS = np.diag(Sigma)
    for dll, dd1, dd2 in lik_llg_param(lik, state.f, state.y, state.aux):
        g.append(np.sum(dll) + 0.5 * dS @ dd2 + s2 @ (Sigma @ dd1))
    return np.array(g)


def laplace_predict(state, Xt, predcf=None, yt=None, aux_t=None):
    """Predictive latent moments and observation-space summaries."""
    model = state.model
    Xt = np.asarray(Xt, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    Ks = total_cross_cov(model, state.data.X, Xt, predcf)
    mean = Ks.T @ state.dlp
    W = state.W
    R = np.diag(W) - (W[:, None] * state.Sigma * W[None, :])
    var = total_diag(model, Xt, predcf) - np.sum(Ks * (R @ Ks), axis=0)
    var = np.maximum(var, 0.0)
    if predcf is not None:
        return Prediction(mean, var, None, None, None)
    Ey, Vy, lp = lik_pred(model.likelihood, mean, var, yt, aux_t)
    return Prediction(mean, var, Ey, Vy, lp)


def laplace_marginals(state):
    return state.f.copy(), np.diag(state.Sigma).copy()
