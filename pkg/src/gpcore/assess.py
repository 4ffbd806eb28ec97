"""Predictive assessment: k-fold CV, LOO summaries, DIC, WAIC and p_eff."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _linalg as la
from . import ep, exact, inference, laplace
from .errors import InputError, ValidationError
from .hyper import map_optimize, parallel_map
from .likelihoods import ll_terms
from .model import total_train_cov
from .params import slots
from .quadrature import DEFAULT_NODES, gaussian_nodes


@dataclass
class CVResult:
    """k-fold cross-validation summary.

    ``lpd`` and ``sq_err`` are per observation in data order; ``folds``
    lists the held-out indices of every fold. ``*_bc`` fields carry the
    first-order bias correction and ``*_var`` the fold-based variance of
    the corresponding mean.
    """

    lpd: np.ndarray
    sq_err: np.ndarray
    mlpd: float
    rmse: float
    mlpd_bc: float
    rmse_bc: float
    mlpd_var: float
    mse_var: float
    folds: list
    seed: int
    k: int
    fold_mlpd: np.ndarray = field(default=None)


@dataclass
class ICResult:
    """Information criteria for one fitted model.

    ``bu_t``/``gu_t`` are mean Bayes and Gibbs training utilities, ``v`` the
    functional variance summed over observations.
    """

    dic: float
    p_d: float
    waic_v: float
    waic_g: float
    bu_t: float
    gu_t: float
    v: float
    peff: float


def fold_assignment(n, k, seed=0):
    """Seeded random permutation split into ``k`` contiguous chunks."""
    if not 2 <= k <= n:
        raise InputError(f"k must satisfy 2 <= k <= n (got k={k}, n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(c) for c in np.array_split(perm, k)]


def _fit(model, data, optimize, gtol):
    if optimize and slots(model):
        model = map_optimize(model, data, gtol=gtol).model
    return inference.fit(model, data)


def _score(state, data):
    p = inference.predict(state, data.X, yt=data.y, aux_t=data.aux)
    return p.lpyt, (data.y - p.Eyt) ** 2


def kfold_cv(model, data, k=10, seed=0, optimize=True, gtol=1e-5):
    """k-fold cross-validation with a first-order bias correction.

    Parameters
    ----------
    optimize : bool
        Re-optimize hyperparameters (MAP) for every fold and for the
        full-data fit. With ``False`` the given values are used throughout.

    Notes
    -----
    The corrected score is ``CV + S(full fit, D) - mean_j S(fold fit j, D)``
    where ``S(., D)`` is the mean score over all observations.
    """
    if model.sparse is not None and model.sparse.kind == "PIC":
        raise ValidationError("assess.pic", "kfold_cv does not support PIC block bookkeeping")
    n = data.n
    folds = fold_assignment(n, k, seed)

    def run(test):
        train = np.setdiff1d(np.arange(n), test)
        st = _fit(model, data.subset(train), optimize, gtol)
        lpd_t, se_t = _score(st, data.subset(test))
        lpd_all, se_all = _score(st, data)
        return lpd_t, se_t, float(np.mean(lpd_all)), float(np.mean(se_all))

    out = parallel_map(run, folds)
    lpd = np.empty(n)
    se = np.empty(n)
    for test, (l, s, _, _) in zip(folds, out):
        lpd[test] = l
        se[test] = s
    full = _fit(model, data, optimize, gtol)
    lpd_tr, se_tr = _score(full, data)
    mlpd = float(np.mean(lpd))
    mse = float(np.mean(se))
    mlpd_bc = mlpd + float(np.mean(lpd_tr)) - float(np.mean([o[2] for o in out]))
    mse_bc = mse + float(np.mean(se_tr)) - float(np.mean([o[3] for o in out]))
    fold_mlpd = np.array([np.mean(o[0]) for o in out])
    fold_mse = np.array([np.mean(o[1]) for o in out])
    return CVResult(
        lpd, se, mlpd, float(np.sqrt(mse)), mlpd_bc, float(np.sqrt(max(mse_bc, 0.0))),
        float(np.var(fold_mlpd, ddof=1) / k), float(np.var(fold_mse, ddof=1) / k),
        folds, int(seed), int(k), fold_mlpd,
    )


def loo_summary(state):
    """Mean LOO log predictive density and the per-point values."""
    lpd = inference.loo(state)
    return float(np.mean(lpd)), lpd


def _latent(state):
    m, v = inference.marginals(state)
    return np.asarray(m, dtype=float), np.maximum(np.asarray(v, dtype=float), 0.0)


def _ll_nodes(state, n_nodes):
    m, v = _latent(state)
    f, w = gaussian_nodes(m, v, n_nodes)
    ll = ll_terms(state.model.likelihood, f, state.y, state.aux)
    return m, ll, w


def dic_latent(state, n_nodes=DEFAULT_NODES):
    """DIC with focus on the latent values: ``(DIC, p_D)``.

    ``D(f) = -2 log p(y|f)``; ``E[D]`` uses Gauss-Hermite quadrature over
    each latent marginal and the plug-in term is ``D(E[f])``.
    """
    m, ll, w = _ll_nodes(state, n_nodes)
    ED = -2.0 * float(np.sum(ll @ w))
    D_hat = -2.0 * float(np.sum(ll_terms(state.model.likelihood, m, state.y, state.aux)))
    p_d = ED - D_hat
    return ED + p_d, p_d


def waic(state, n_nodes=DEFAULT_NODES):
    """WAIC in both forms: ``(WAIC_V, WAIC_G, V, BU_t, GU_t)``.

    ``BU_t`` is the mean of ``log E[p(y_i|f_i)]``, ``GU_t`` the mean of
    ``E[log p(y_i|f_i)]`` and ``V`` the summed variance of
    ``log p(y_i|f_i)``, all over the latent marginals.
    """
    _, ll, w = _ll_nodes(state, n_nodes)
    n = ll.shape[0]
    with np.errstate(divide="ignore"):
        bu = logsumexp(ll + np.log(w), axis=-1)
    e1 = ll @ w
    e2 = (ll**2) @ w
    V = float(np.sum(np.maximum(e2 - e1**2, 0.0)))
    bu_t = float(np.mean(bu))
    gu_t = float(np.mean(e1))
    return bu_t - V / n, bu_t - 2.0 * (bu_t - gu_t), V, bu_t, gu_t


def _site_precision(state):
    if isinstance(state, laplace.LaplaceState):
        return state.W
    if isinstance(state, ep.EPState):
        return state.tau
    lik = state.model.likelihood
    if lik.family != "gaussian":
        raise ValidationError("assess.peff", f"no site precisions for {type(state).__name__}")
    return np.full(state.y.size, 1.0 / lik.params["sigma2"])


def peff_fast(state):
    """Effective number of parameters ``n - tr(K^{-1} (K^{-1} + W)^{-1})``.

    Evaluated as ``tr(W Sigma)``, the equivalent form that only needs the
    posterior marginal variances. ``W`` is ``1/sigma2`` for Gaussian
    models, the Laplace curvature or the EP site precisions.
    """
    W = _site_precision(state)
    if isinstance(state, (laplace.LaplaceState, ep.EPState)):
        return float(np.sum(W * np.diag(state.Sigma)))
    if isinstance(state, exact.ExactState) and state.H is not None:
        # GP part only: the basis weights are not latent values
        K = total_train_cov(state.model, state.data.X)
        V = la.tri_solve(state.L, K)
        return float(np.sum(W * (np.diag(K) - np.sum(V**2, axis=0))))
    _, v = _latent(state)
    return float(np.sum(W * v))


def information_criteria(state, n_nodes=DEFAULT_NODES):
    """DIC, WAIC (both forms) and ``p_eff`` bundled as an :class:`ICResult`."""
    dic, p_d = dic_latent(state, n_nodes)
    wv, wg, V, bu, gu = waic(state, n_nodes)
    return ICResult(dic, p_d, wv, wg, bu, gu, V, peff_fast(state))
