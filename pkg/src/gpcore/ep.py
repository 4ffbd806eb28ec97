"""Expectation propagation with sequential, damped site updates.

Sites are stored in natural parameters: precision ``tau`` (= 1/site
variance) and ``nu`` (= site mean * tau).
"""

from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import ConvergenceError
from .exact import Prediction
from .kernels import kern_train_matrix_grads
from .likelihoods import lik_pred, lik_tilted_moments
from .model import total_cross_cov, total_diag, total_train_cov, validate

DEFAULTS = dict(ep_damping=0.8, ep_tol=1e-6, ep_max_sweeps=200)


@dataclass(frozen=True, eq=False)
class EPState:
    """Converged site approximation and the implied Gaussian posterior.

    ``tau_cav``/``nu_cav`` are the cavity natural parameters and
    ``logZ_sites`` the tilted normalizers at the final cavities.
    """

    model: object
    data: object
    y: np.ndarray
    aux: dict
    K: np.ndarray
    tau: np.ndarray
    nu: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    tau_cav: np.ndarray
    nu_cav: np.ndarray
    logZ_sites: np.ndarray
    logZ: float
    sweeps: int
    max_delta: float
    converged: bool
    skipped: int

    @property
    def site_mean(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.nu / self.tau

    @property
    def site_var(self):
        with np.errstate(divide="ignore"):
            return 1.0 / self.tau


def _opts(model):
    o = dict(DEFAULTS)
    if model.likelihood.family == "gaussian":
        # Gaussian sites are exact after one undamped update
        o["ep_damping"] = 1.0
    o.update({k: v for k, v in model.latent_opts.items() if k in DEFAULTS})
    return o


def _posterior(K, tau, nu):
    """``Sigma = (K^{-1} + S)^{-1}`` and ``mu = Sigma nu`` without inverting K."""
    n = K.shape[0]
    if np.all(tau >= 0):
        sW = np.sqrt(tau)
        L, _ = la.chol_escalate(np.eye(n) + sW[:, None] * K * sW[None, :])
        V = la.tri_solve(L, sW[:, None] * K)
        Sigma = K - V.T @ V
        logdet = la.chol_logdet(L)
    else:
        A = np.eye(n) + K * tau[None, :]
        Sigma = np.linalg.solve(A.T, K.T).T
        logdet = np.linalg.slogdet(A)[1]
    Sigma = la.symmetrize(Sigma)
    return Sigma, Sigma @ nu, float(logdet)


def ep_fit(model, data):
    """Run sequential EP to convergence."""
    model, y, aux = validate(model, data)
    lik = model.likelihood
    o = _opts(model)
    delta = o["ep_damping"]
    K = total_train_cov(model, data.X)
    n = y.size
    tau = np.zeros(n)
    nu = np.zeros(n)
    Sigma = K.copy()
    mu = np.zeros(n)
    skipped = 0
    converged = False
    max_delta = np.inf
    sweep = 0
    auxi = [{k: v[i:i + 1] for k, v in aux.items()} for i in range(n)]
    for sweep in range(1, o["ep_max_sweeps"] + 1):
        tau_old, nu_old = tau.copy(), nu.copy()
        for i in range(n):
            s_ii = Sigma[i, i]
            tc = 1.0 / s_ii - tau[i]
            nc = mu[i] / s_ii - nu[i]
            if not tc > 0:
                skipped += 1
                continue
            _, mhat, vhat = lik_tilted_moments(lik, y[i:i + 1], np.array([nc / tc]),
                                              np.array([1.0 / tc]), auxi[i])
            t_new = 1.0 / vhat[0] - tc
            n_new = mhat[0] / vhat[0] - nc
            t_new = (1 - delta) * tau[i] + delta * t_new
            n_new = (1 - delta) * nu[i] + delta * n_new
            dt = t_new - tau[i]
            tau[i], nu[i] = t_new, n_new
            si = Sigma[:, i].copy()
            Sigma -= (dt / (1.0 + dt * s_ii)) * np.outer(si, si)
            mu = Sigma @ nu
        # refresh from scratch to stop rank-one drift
        Sigma, mu, _ = _posterior(K, tau, nu)
        max_delta = max(np.max(np.abs(tau - tau_old)), np.max(np.abs(nu - nu_old)))
        if max_delta < o["ep_tol"]:
            converged = True
            break
    state = _finish(model, data, y, aux, K, tau, nu, sweep, max_delta, converged, skipped)
    if not converged:
        raise ConvergenceError(f"EP did not converge in {o['ep_max_sweeps']} sweeps", state)
    return state


def _cavities(Sigma, mu, tau, nu):
    d = np.diag(Sigma)
    return 1.0 / d - tau, mu / d - nu


def _finish(model, data, y, aux, K, tau, nu, sweeps, max_delta, converged, skipped):
    Sigma, mu, logdetB = _posterior(K, tau, nu)
    tc, nc = _cavities(Sigma, mu, tau, nu)
    if np.any(tc <= 0):
        logZ_sites = np.full(y.size, np.nan)
        logZ = -np.inf
    else:
        logZ_sites = lik_tilted_moments(model.likelihood, y, nc / tc, 1.0 / tc, aux)[0]
        logZ = (np.sum(logZ_sites) - 0.5 * logdetB + 0.5 * nu @ Sigma @ nu
                + np.sum(0.5 * np.log1p(tau / tc)
                         + 0.5 * (nc**2 * tau - 2 * nc * nu * tc - nu**2 * tc) / (tc * (tc + tau))))
    return EPState(model, data, y, aux, K, tau, nu, Sigma, mu, tc, nc, logZ_sites,
                   float(logZ), sweeps, float(max_delta), converged, skipped)


def ep_lml(state):
    """EP approximation ``log Z_EP`` of the log marginal likelihood."""
    return state.logZ


def _bR(state):
    tau, Sigma = state.tau, state.Sigma
    b = state.nu - tau * state.mu
    R = np.diag(tau) - tau[:, None] * Sigma * tau[None, :]
    return b, R


def ep_lml_grad(state):
    """Gradient of ``log Z_EP`` at fixed site parameters."""
    model = state.model
    b, R = _bR(state)
    Q = np.outer(b, b) - R
    g = [0.5 * np.sum(Q * dK) for k in model.kernels
         for dK in kern_train_matrix_grads(k, state.data.X)]
    lik = model.likelihood
    if lik.free_names():
        tc, nc = state.tau_cav, state.nu_cav
        _, _, _, dlz = lik_tilted_moments(lik, state.y, nc / tc, 1.0 / tc, state.aux,
                                          param_grad=True)
        g.extend(float(np.sum(d)) for d in dlz)
    return np.array(g)


def ep_predict(state, Xt, predcf=None, yt=None, aux_t=None):
    model = state.model
    Xt = np.asarray(Xt, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    b, R = _bR(state)
    Ks = total_cross_cov(model, state.data.X, Xt, predcf)
    mean = Ks.T @ b
    var = np.maximum(total_diag(model, Xt, predcf) - np.sum(Ks * (R @ Ks), axis=0), 0.0)
    if predcf is not None:
        return Prediction(mean, var, None, None, None)
    Ey, Vy, lp = lik_pred(model.likelihood, mean, var, yt, aux_t)
    return Prediction(mean, var, Ey, Vy, lp)


def ep_loo(state):
    """Cavity distributions as leave-one-out predictives.

    Returns ``(mu_cav, var_cav, lpd)`` where the first two describe the
    latent value and ``lpd = log p(y_i | D_{-i})`` is the tilted normalizer.
    """
    return state.nu_cav / state.tau_cav, 1.0 / state.tau_cav, state.logZ_sites.copy()


def ep_marginals(state):
    return state.mu.copy(), np.diag(state.Sigma).copy()
