"""Inducing-point approximations for Gaussian-likelihood regression.

All kinds share the evidence ``log N(y | 0, Q_ff + Lambda + sigma2 I)``
with ``Q_ff = K_fu K_uu^{-1} K_uf``; they differ in ``Lambda``:

* FIC: ``diag(K_ff - Q_ff)``
* PIC: block-diagonal part of ``K_ff - Q_ff``
* DTC, SOR, VAR: zero (VAR subtracts ``tr(K_ff - Q_ff) / (2 sigma2)``)
* CSFIC: FIC residual of the global kernels plus the full compactly
  supported kernels.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import InputError, ValidationError
from .exact import Prediction
from .kernels import (kern_cross_matrix, kern_cross_matrix_grads, kern_diag,
                      kern_diag_grads, kern_train_matrix, kern_train_matrix_grads)
from .likelihoods import LOG2PI, lik_pred
from .model import cs_kernel_indices, validate


class SORVarianceWarning(UserWarning):
    """SOR produced negative predictive variances that were clipped."""


@dataclass(frozen=True, eq=False)
class SparseState:
    model: object
    data: object
    y: np.ndarray
    aux: dict
    Luu: np.ndarray
    Kfu: np.ndarray
    U: np.ndarray        # K_uu^{-1} K_uf
    Lam: object          # vector (diagonal) or dense matrix
    Cinv: np.ndarray
    alpha: np.ndarray
    logdetC: float
    trace_term: float    # tr(K_ff - Q_ff) of the global kernels


def _split(model):
    cs = set(cs_kernel_indices(model)) if model.sparse.kind == "CSFIC" else set()
    glob = [k for i, k in enumerate(model.kernels) if i not in cs]
    local = [k for i, k in enumerate(model.kernels) if i in cs]
    return glob, local


def _dense(K):
    return K.toarray() if hasattr(K, "toarray") else K


def sparse_components(model, X, Xu=None):
    """``(K_uu, K_fu, Lambda)`` for the model's sparse kind, plus factors.

    ``Lambda`` is a vector for the diagonal kinds and a dense matrix for PIC
    and CSFIC. Model jitter is added to both ``K_uu`` and ``K_ff``. The
    extra outputs are the Cholesky factor ``L_uu``, the whitened cross
    covariance ``V = L_uu^{-1} K_uf`` and the diagonals of ``K_ff`` and
    ``Q_ff``.
    """
    sp = model.sparse
    Xu = sp.Xu if Xu is None else Xu
    glob, local = _split(model)
    Kuu = sum(_dense(kern_train_matrix(k, Xu)) for k in glob) + model.jitter * np.eye(Xu.shape[0])
    Kfu = sum(kern_cross_matrix(k, X, Xu) for k in glob)
    Luu, _ = la.chol_escalate(Kuu)
    V = la.tri_solve(Luu, Kfu.T)
    kdiag = sum(kern_diag(k, X) for k in glob) + model.jitter
    qdiag = np.sum(V**2, axis=0)
    kind = sp.kind
    if kind in ("DTC", "SOR", "VAR"):
        Lam = np.zeros(X.shape[0])
    elif kind == "FIC":
        Lam = kdiag - qdiag
    elif kind == "PIC":
        Lam = np.zeros((X.shape[0],) * 2)
        for b in sp.blocks:
            Kb = sum(_dense(kern_train_matrix(k, X[b])) for k in glob)
            Kb = Kb + model.jitter * np.eye(b.size)
            Lam[np.ix_(b, b)] = Kb - V[:, b].T @ V[:, b]
    else:  # CSFIC
        Lam = np.diag(kdiag - qdiag)
        for k in local:
            Lam = Lam + _dense(kern_train_matrix(k, X))
    return Kuu, Kfu, Lam, Luu, V, kdiag, qdiag


def sparse_fit(model, data):
    """Factorize ``C = Q_ff + Lambda + sigma2 I`` through the Woodbury identity."""
    model, y, aux = validate(model, data)
    if model.sparse is None:
        raise ValidationError("sparse.missing", "model has no sparse specification")
    X = data.X
    n = y.size
    s2 = model.likelihood.params["sigma2"]
    Kuu, Kfu, Lam, Luu, V, kdiag, qdiag = sparse_components(model, X)
    if Lam.ndim == 1:
        d = Lam + s2
        if np.any(d <= 0):
            raise ValidationError("sparse.D", "Lambda + sigma2 must be positive")
        Dinv = np.diag(1.0 / d)
        DiVt = V.T / d[:, None]
        logdetD = np.sum(np.log(d))
    else:
        # dense factorization of the (block or sparse) residual
        LD, _ = la.chol_escalate(la.symmetrize(Lam) + s2 * np.eye(n))
        Dinv = la.inv_from_chol(LD)
        DiVt = Dinv @ V.T
        logdetD = la.chol_logdet(LD)
    m = V.shape[0]
    A = np.eye(m) + V @ DiVt
    LA, _ = la.chol_escalate(la.symmetrize(A))
    Cinv = la.symmetrize(Dinv - DiVt @ la.chol_solve(LA, DiVt.T))
    alpha = Cinv @ y
    logdetC = logdetD + la.chol_logdet(LA)
    U = la.tri_solve(Luu, V, trans=True)
    trace_term = float(np.sum(kdiag - qdiag))
    return SparseState(model, data, y, aux, Luu, Kfu, U, Lam, Cinv, alpha, float(logdetC),
                       trace_term)


def sparse_lml(state):
    """Approximate log evidence (the variational bound for VAR)."""
    n = state.y.size
    v = -0.5 * state.y @ state.alpha - 0.5 * state.logdetC - 0.5 * n * LOG2PI
    if state.model.sparse.kind == "VAR":
        v -= 0.5 * state.trace_term / state.model.likelihood.params["sigma2"]
    return float(v)


def _dlam(kind, model, X, dKdiag, dQ, dKff_block):
    if kind in ("DTC", "SOR", "VAR"):
        return None
    if kind == "FIC":
        return np.diag(dKdiag - np.diag(dQ))
    if kind == "PIC":
        out = np.zeros_like(dQ)
        for b, dKb in zip(model.sparse.blocks, dKff_block):
            out[np.ix_(b, b)] = dKb - dQ[np.ix_(b, b)]
        return out
    return np.diag(dKdiag - np.diag(dQ))


def sparse_lml_grad(state, fd_inducing=True):
    """Gradient of :func:`sparse_lml` w.r.t. the packed parameters.

    Kernel and noise terms are analytic; inducing inputs (when free) use
    central differences with step ``1e-5 * (1 + |x|)``.
    """
    model = state.model
    sp = model.sparse
    X, Xu = state.data.X, sp.Xu
    s2 = model.likelihood.params["sigma2"]
    Q = np.outer(state.alpha, state.alpha) - state.Cinv
    U = state.U
    glob, local = _split(model)
    is_local = set(cs_kernel_indices(model)) if sp.kind == "CSFIC" else set()
    g = []
    for i, k in enumerate(model.kernels):
        if i in is_local:
            for dK in kern_train_matrix_grads(k, X):
                g.append(0.5 * np.sum(Q * dK))
            continue
        dKuu = kern_train_matrix_grads(k, Xu)
        dKfu = kern_cross_matrix_grads(k, X, Xu)
        dKd = kern_diag_grads(k, X)
        blocks = ([kern_train_matrix_grads(k, X[b]) for b in sp.blocks]
                  if sp.kind == "PIC" else None)
        for j in range(len(dKuu)):
            # dQ = dK_fu U + U^T dK_uf - U^T dK_uu U
            T = dKfu[j] @ U
            dQ = T + T.T - U.T @ dKuu[j] @ U
            dC = dQ.copy()
            dL = _dlam(sp.kind, model, X, dKd[j], dQ,
                       [bl[j] for bl in blocks] if blocks else None)
            if dL is not None:
                dC += dL
            val = 0.5 * np.sum(Q * dC)
            if sp.kind == "VAR":
                val -= 0.5 * (np.sum(dKd[j]) - np.trace(dQ)) / s2
            g.append(val)
    if model.likelihood.free_names():
        val = 0.5 * s2 * np.trace(Q)
        if sp.kind == "VAR":
            val += 0.5 * state.trace_term / s2
        g.append(val)
    if sp.optimize_inducing and fd_inducing:
        g.extend(_inducing_fd(model, state.data))
    return np.array(g)


def _inducing_fd(model, data):
    sp = model.sparse
    base = sp.Xu.ravel()
    out = []
    for i in range(base.size):
        h = 1e-5 * (1 + abs(base[i]))
        vals = []
        for sgn in (1, -1):
            xu = base.copy()
            xu[i] += sgn * h
            m = model.replace(sparse=sp.with_Xu(xu.reshape(sp.Xu.shape)))
            vals.append(sparse_lml(sparse_fit(m, data)))
        out.append((vals[0] - vals[1]) / (2 * h))
    return out


def sparse_predict(state, Xt, test_blocks=None, yt=None, aux_t=None):
    """Predictive distribution under the sparse prior.

    Parameters
    ----------
    test_blocks : sequence of int, optional
        PIC only: block index of each test point (required for PIC). ``-1``
        puts a test point in a block of its own, which has no training
        members, so it is predicted as under FIC.

    Returns a :class:`~gpcore.exact.Prediction`. Negative SOR variances
    are clipped at zero with a :class:`SORVarianceWarning`.
    """
    model = state.model
    sp = model.sparse
    Xt = np.asarray(Xt, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    X, Xu = state.data.X, sp.Xu
    glob, local = _split(model)
    Ksu = sum(kern_cross_matrix(k, Xt, Xu) for k in glob)
    Ws = la.tri_solve(state.Luu, Ksu.T)            # L_uu^{-1} K_u*
    Wf = la.tri_solve(state.Luu, state.Kfu.T)
    Qsf = Ws.T @ Wf                                # Q_*f
    cross = Qsf.copy()
    kss = sum(kern_diag(k, Xt) for k in glob)
    if sp.kind == "PIC":
        if test_blocks is None:
            raise InputError("PIC prediction needs a block index per test point")
        tb = np.asarray(test_blocks, dtype=int).ravel()
        if tb.size != Xt.shape[0] or np.any(tb < -1) or np.any(tb >= len(sp.blocks)):
            raise InputError("test_blocks must give a valid block index per test point")
        for bi, b in enumerate(sp.blocks):
            rows = np.nonzero(tb == bi)[0]
            if rows.size and b.size:
                Ksb = sum(kern_cross_matrix(k, Xt[rows], X[b]) for k in glob)
                cross[np.ix_(rows, b)] = Ksb
    if sp.kind == "CSFIC":
        for k in local:
            cross = cross + kern_cross_matrix(k, Xt, X)
            kss = kss + kern_diag(k, Xt)
    mean = cross @ state.alpha
    red = np.sum(cross * (cross @ state.Cinv), axis=1)
    if sp.kind == "SOR":
        qss = np.sum(Ws**2, axis=0)
        var = qss - red
        if np.any(var < -1e-10):
            warnings.warn(f"{int(np.sum(var < -1e-10))} negative SOR variance(s) clipped at 0",
                          SORVarianceWarning, stacklevel=2)
    else:
        var = kss - red
    var = np.maximum(var, 0.0)
    Ey, Vy, lp = lik_pred(model.likelihood, mean, var, yt, aux_t)
    return Prediction(mean, var, Ey, Vy, lp)


def sparse_marginals(state):
    """Posterior latent mean and variance at the training inputs."""
    p = sparse_predict(state, state.data.X,
                       test_blocks=_train_blocks(state) if state.model.sparse.kind == "PIC" else None)
    return p.Eft, p.Varft


def _train_blocks(state):
    tb = np.empty(state.y.size, dtype=int)
    for i, b in enumerate(state.model.sparse.blocks):
        tb[b] = i
    return tb
