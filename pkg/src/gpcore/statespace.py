"""Linear-time inference for 1-D Gaussian regression through the SDE form.

A stationary kernel with a rational spectral density is rewritten as

    df(t)/dt = F f(t) + L w(t),   y_k = H f(t_k) + eps_k,

with white noise of spectral density ``Qc``. The GP evidence and the
smoothed posterior then follow from a Kalman filter and a
Rauch-Tung-Striebel smoother in ``O(n)`` time.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, expm, solve_continuous_lyapunov

from .errors import InputError, ValidationError
from .exact import Prediction
from .likelihoods import LOG2PI, lik_pred
from .model import validate
from .params import pack, unpack


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Matrices of the SDE ``df = F f dt + L dw`` with ``E[dw dw^T] = Qc dt``."""

    F: np.ndarray
    L: np.ndarray
    Qc: np.ndarray
    H: np.ndarray
    Pinf: np.ndarray

    @property
    def dim(self):
        return self.F.shape[0]

    def lyapunov_residual(self):
        R = self.F @ self.Pinf + self.Pinf @ self.F.T + self.L @ self.Qc @ self.L.T
        return float(np.max(np.abs(R)))


def _scalar_hyper(kern, name):
    v = np.asarray(kern.hyper[name], dtype=float).ravel()
    if v.size != 1:
        raise ValidationError("model.kalman_dim", f"{kern.family}.{name} must be scalar for 1-D input")
    return float(v[0])


def _single(kern):
    fam = kern.family
    if fam == "constant":
        s2 = _scalar_hyper(kern, "constSigma2")
        return StateSpaceModel(np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)),
                               np.ones((1, 1)), np.array([[s2]]))
    if fam not in ("exp", "matern32", "matern52"):
        raise ValidationError(
            "model.kalman_kernel",
            f"kernel family {fam!r} has no state-space form; use the exact backend",
        )
    s2 = _scalar_hyper(kern, "magnSigma2")
    ell = _scalar_hyper(kern, "lengthScale")
    if fam == "exp":
        F = np.array([[-1.0 / ell]])
        L = np.ones((1, 1))
        Qc = np.array([[2.0 * s2 / ell]])
        Pinf = np.array([[s2]])
        H = np.ones((1, 1))
    elif fam == "matern32":
        lam = np.sqrt(3.0) / ell
        F = np.array([[0.0, 1.0], [-lam**2, -2.0 * lam]])
        L = np.array([[0.0], [1.0]])
        Qc = np.array([[4.0 * lam**3 * s2]])
        Pinf = np.diag([s2, lam**2 * s2])
        H = np.array([[1.0, 0.0]])
    else:
        lam = np.sqrt(5.0) / ell
        F = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-lam**3, -3.0 * lam**2, -3.0 * lam]])
        L = np.array([[0.0], [0.0], [1.0]])
        Qc = np.array([[16.0 / 3.0 * s2 * lam**5]])
        # no printed closed form; solve F P + P F^T + L Qc L^T = 0
        Pinf = solve_continuous_lyapunov(F, -L @ Qc @ L.T)
        Pinf = 0.5 * (Pinf + Pinf.T)
        H = np.array([[1.0, 0.0, 0.0]])
    return StateSpaceModel(F, L, Qc, H, Pinf)


def to_statespace(kernels):
    """State-space form of one kernel or of a sum of kernels.

    Sums stack the components block-diagonally and concatenate ``H``.
    """
    if not isinstance(kernels, (list, tuple)):
        kernels = [kernels]
    parts = [_single(k) for k in kernels]
    if len(parts) == 1:
        return parts[0]
    return StateSpaceModel(
        block_diag(*[p.F for p in parts]),
        block_diag(*[p.L for p in parts]),
        block_diag(*[p.Qc for p in parts]),
        np.hstack([p.H for p in parts]),
        block_diag(*[p.Pinf for p in parts]),
    )


def discretize(ssm, dt):
    """Transition ``A = expm(F dt)`` and noise ``Q = Pinf - A Pinf A^T``.

    ``dt`` may be a scalar or a vector; a vector returns stacked arrays.
    """
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(~np.isfinite(dt_arr)):
        raise InputError("time steps must be finite")
    if np.any(dt_arr < 0):
        raise InputError("time steps must be nonnegative")
    scalar = dt_arr.ndim == 0
    dts = np.atleast_1d(dt_arr)
    A = expm(ssm.F[None, :, :] * dts[:, None, None])
    Q = ssm.Pinf[None] - np.einsum("kij,jl,kml->kim", A, ssm.Pinf, A)
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    if scalar:
        return A[0], Q[0]
    return A, Q


@dataclass(frozen=True, eq=False)
class KalmanResult:
    """Evidence and smoothed latent moments.

    ``mean``/``var`` follow the order of the training inputs; ``mean_t``/
    ``var_t`` that of the requested test times.
    """

    lml: float
    mean: np.ndarray
    var: np.ndarray
    mean_t: np.ndarray
    var_t: np.ndarray


def _run(ssm, t, y, observed, s2, smooth=True):
    n = t.size
    s = ssm.dim
    H = ssm.H[0]
    dts = np.diff(t, prepend=t[0])
    A, Q = discretize(ssm, dts)
    mp = np.empty((n, s))
    Pp = np.empty((n, s, s))
    mf = np.empty((n, s))
    Pf = np.empty((n, s, s))
    m = np.zeros(s)
    P = ssm.Pinf.copy()
    lml = 0.0
    for k in range(n):
        if k:
            m = A[k] @ m
            P = A[k] @ P @ A[k].T + Q[k]
        mp[k], Pp[k] = m, P
        if observed[k]:
            PH = P @ H
            S = H @ PH + s2
            v = y[k] - H @ m
            K = PH / S
            m = m + K * v
            P = P - np.outer(K, K) * S
            P = 0.5 * (P + P.T)
            lml -= 0.5 * (LOG2PI + np.log(S) + v * v / S)
        mf[k], Pf[k] = m, P
    if not smooth:
        return lml, None, None
    ms = mf.copy()
    Ps = Pf.copy()
    for k in range(n - 2, -1, -1):
        # G = Pf_k A_{k+1}^T Pp_{k+1}^{-1}
        C = Pf[k] @ A[k + 1].T
        try:
            G = np.linalg.solve(Pp[k + 1], C.T).T
        except np.linalg.LinAlgError:
            G = C @ np.linalg.pinv(Pp[k + 1])
        ms[k] = mf[k] + G @ (ms[k + 1] - mp[k + 1])
        Pk = Pf[k] + G @ (Ps[k + 1] - Pp[k + 1]) @ G.T
        Ps[k] = 0.5 * (Pk + Pk.T)
    mean = ms @ H
    var = np.maximum(np.einsum("i,kij,j->k", H, Ps, H), 0.0)
    return lml, mean, var


def kalman_fit_predict(model, data, t_test=None, smooth=True):
    """Kalman filter and RTS smoother over training and test times.

    Test times enter as missing observations. Inputs are sorted internally
    (stable sort, training points first on ties) and the outputs are
    returned in the caller's order.
    """
    model, y, _ = validate(model, data)
    if model.backend != "kalman":
        raise ValidationError("model.backend", "kalman_fit_predict needs the kalman backend")
    ssm = to_statespace(list(model.kernels))
    s2 = model.likelihood.params["sigma2"]
    t = data.X[:, 0]
    tt = np.zeros(0) if t_test is None else np.asarray(t_test, dtype=float).ravel()
    if not np.all(np.isfinite(tt)):
        raise InputError("test times must be finite")
    times = np.concatenate([t, tt])
    obs = np.concatenate([np.ones(t.size, bool), np.zeros(tt.size, bool)])
    yy = np.concatenate([y, np.zeros(tt.size)])
    order = np.argsort(times, kind="stable")
    lml, mean, var = _run(ssm, times[order], yy[order], obs[order], s2, smooth)
    if not smooth:
        return KalmanResult(float(lml), None, None, None, None)
    back = np.empty_like(order)
    back[order] = np.arange(order.size)
    mean, var = mean[back], var[back]
    n = t.size
    return KalmanResult(float(lml), mean[:n], var[:n], mean[n:], var[n:])


@dataclass(frozen=True, eq=False)
class KalmanState:
    model: object
    data: object
    y: np.ndarray
    aux: dict
    result: KalmanResult


def kalman_fit(model, data):
    model, y, aux = validate(model, data)
    return KalmanState(model, data, y, aux, kalman_fit_predict(model, data))


def kalman_lml(state):
    return state.result.lml


def kalman_lml_grad(state, h=1e-5):
    """Central finite differences of the filter evidence in ``w``."""
    model, data = state.model, state.data
    w = pack(model).w
    g = np.empty(w.size)
    for i in range(w.size):
        vals = []
        for sgn in (1.0, -1.0):
            wi = w.copy()
            wi[i] += sgn * h
            vals.append(kalman_fit_predict(unpack(model, wi), data, smooth=False).lml)
        g[i] = (vals[0] - vals[1]) / (2 * h)
    return g


def kalman_predict(state, Xt, yt=None, aux_t=None):
    Xt = np.asarray(Xt, dtype=float)
    if Xt.ndim == 2:
        if Xt.shape[1] != 1:
            raise ValidationError("model.kalman_dim", "the kalman backend needs 1-D inputs")
        Xt = Xt[:, 0]
    r = kalman_fit_predict(state.model, state.data, Xt)
    Ey, Vy, lp = lik_pred(state.model.likelihood, r.mean_t, r.var_t, yt, aux_t)
    return Prediction(r.mean_t, r.var_t, Ey, Vy, lp)


def kalman_marginals(state):
    return state.result.mean.copy(), state.result.var.copy()
