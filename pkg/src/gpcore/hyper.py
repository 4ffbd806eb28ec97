"""Hyperparameter inference: MAP optimization and integration over ``w``.

Everything works in the packed, log-transformed parameter space ``w`` with
the energy ``E(w) = -log p(y | w) - log p(w)``. Integration schemes
(grid, CCD, importance sampling) share a mode ``w*`` and an FD Hessian
of ``E`` there, and describe points through whitened coordinates ``z``
with ``w = w* + V diag(lambda)^{-1/2} z``.
"""

import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp

from . import inference
from .errors import GPError, NumericalError, ValidationError
from .params import energy_in_w, pack, unpack

GRID_STEP = 1.0
GRID_THRESHOLD = 2.5
GRID_MAX_POINTS = 20000
CCD_F0 = 1.1
CCD_MAX_DIM = 6
HESSIAN_STEP = 1e-4
FLAT_RATIO = 1e-9


def n_threads():
    """Worker count from ``GPCORE_THREADS`` (default: all CPUs)."""
    v = os.environ.get("GPCORE_THREADS")
    if v:
        try:
            return max(1, int(v))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """``[fn(x) for x in items]`` on a thread pool; output keeps input order."""
    items = list(items)
    k = min(n_threads(), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# energy targets

class Target:
    """Energy function over ``w`` with gradient and optional latent fits.

    Subclasses implement :meth:`energy_grad`; :meth:`fit_point` returns the
    model and fitted state at a point (``None`` for synthetic targets).
    """

    key = None

    def energy_grad(self, w):
        raise NotImplementedError

    def energy(self, w):
        return self.energy_grad(w)[0]

    def safe_energy(self, w):
        """Energy, or ``inf`` where the backend or parameter checks fail."""
        try:
            E = float(self.energy(w))
        except (GPError, np.linalg.LinAlgError, FloatingPointError):
            return np.inf
        return E if np.isfinite(E) else np.inf

    def fit_point(self, w):
        return None, None

    def initial(self):
        raise NotImplementedError


class ModelTarget(Target):
    def __init__(self, model, data):
        self.model = model
        self.data = data
        h = hashlib.sha256(json.dumps(model.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(data.X).tobytes())
        h.update(np.ascontiguousarray(data.y).tobytes())
        self.key = h.hexdigest()

    def energy_grad(self, w):
        return energy_in_w(self.model, self.data, w)

    def fit_point(self, w):
        m = unpack(self.model, w)
        return m, inference.fit(m, self.data)

    def initial(self):
        return pack(self.model).w


class GaussianTarget(Target):
    """Exactly Gaussian log posterior ``E(w) = 1/2 (w-m)^T P (w-m)``.

    A test harness for the integration schemes.
    """

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float).ravel()
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.prec = np.linalg.inv(self.cov)
        self.key = "gauss:" + hashlib.sha256(self.mean.tobytes() + self.cov.tobytes()).hexdigest()

    def energy_grad(self, w):
        r = np.asarray(w, dtype=float) - self.mean
        g = self.prec @ r
        return 0.5 * r @ g, g

    def initial(self):
        return np.zeros_like(self.mean)


def _as_target(model, data):
    if isinstance(model, Target):
        return model
    if data is None:
        raise ValidationError("hyper.data", "a dataset is required with a model")
    return ModelTarget(model, data)


# --------------------------------------------------------------------------
# MAP

@dataclass
class MapResult:
    """Outcome of :func:`map_optimize`.

    ``trace`` holds the energy after every accepted iteration (first entry
    is the starting energy); ``converged`` means ``max|grad| < gtol``.
    """

    model: object
    w: np.ndarray
    energy: float
    grad: np.ndarray
    trace: list
    converged: bool
    n_iter: int
    message: str
    labels: tuple = ()


def _safe_energy(target):
    """Energy wrapper that turns backend failures into a large penalty.

    The penalty makes the line search shorten the step instead of aborting.
    """
    best = {"E": np.inf}

    def f(w):
        try:
            E, g = target.energy_grad(w)
            E = float(E)
            g = np.asarray(g, dtype=float)
            if not (np.isfinite(E) and np.all(np.isfinite(g))):
                raise NumericalError("non-finite energy")
        except (GPError, np.linalg.LinAlgError, FloatingPointError):
            base = best["E"] if np.isfinite(best["E"]) else 0.0
            return abs(base) + 1e10, np.zeros_like(w)
        best["E"] = min(best["E"], E)
        return E, g

    return f


def map_optimize(model, data=None, gtol=1e-5, max_iter=1000, w0=None):
    """Minimize the energy with L-BFGS-B.

    Parameters
    ----------
    model : GPModel or Target
    data : Dataset
    gtol : float
        Convergence when the largest absolute gradient entry is below this.
    w0 : array_like, optional
        Starting point (defaults to the model's current values).

    Returns
    -------
    MapResult
    """
    target = _as_target(model, data)
    w0 = target.initial() if w0 is None else np.asarray(w0, dtype=float)
    if w0.size == 0:
        raise ValidationError("hyper.no_params", "the model has no free parameters")
    f = _safe_energy(target)
    E0, g0 = f(w0)
    trace = [E0]
    if np.max(np.abs(g0)) < gtol:
        res_w, res_E, res_g, nit, msg = w0, E0, g0, 0, "already converged"
    else:
        cache = {}

        def fun(w):
            k = w.tobytes()
            if k not in cache:
                cache.clear()
                cache[k] = f(w)
            return cache[k]

        def cb(wk):
            trace.append(fun(wk)[0])

        res = minimize(lambda w: fun(w), w0, jac=True, method="L-BFGS-B", callback=cb,
                       options=dict(maxiter=max_iter, gtol=gtol, ftol=1e-15, maxcor=20))
        res_w = np.asarray(res.x, dtype=float)
        res_E, res_g = fun(res_w)
        if res_E > E0:
            # never return a worse point than the start
            res_w, res_E, res_g = w0, E0, g0
        nit, msg = int(res.nit), str(res.message)
    converged = bool(np.max(np.abs(res_g)) < gtol)
    fitted = unpack(target.model, res_w) if isinstance(target, ModelTarget) else None
    labels = pack(target.model).labels if isinstance(target, ModelTarget) else ()
    return MapResult(fitted, res_w, float(res_E), res_g, trace, converged, nit, msg, labels)


# --------------------------------------------------------------------------
# Hessian and whitening

_HESS_CACHE = {}


def fd_hessian(model, data=None, w=None, h=HESSIAN_STEP):
    """Symmetrized central-difference Hessian of ``E`` from its gradient.

    Results are cached per (target, point), so grid, CCD and IS runs at the
    same mode reuse one matrix.
    """
    target = _as_target(model, data)
    w = target.initial() if w is None else np.asarray(w, dtype=float)
    key = (target.key, w.tobytes(), h)
    if target.key is not None and key in _HESS_CACHE:
        return _HESS_CACHE[key].copy()
    d = w.size

    def col(i):
        e = np.zeros(d)
        e[i] = h
        return (target.energy_grad(w + e)[1] - target.energy_grad(w - e)[1]) / (2 * h)

    Hm = np.column_stack(parallel_map(col, range(d)))
    Hm = 0.5 * (Hm + Hm.T)
    if target.key is not None:
        if len(_HESS_CACHE) > 64:
            _HESS_CACHE.clear()
        _HESS_CACHE[key] = Hm.copy()
    return Hm


def _whitening(Hm, method):
    lam, V = np.linalg.eigh(Hm)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        hint = "use MAP or CCD" if method == "grid" else "use MAP"
        raise NumericalError(
            f"Hessian at the mode is not positive definite (min eigenvalue {lam.min():.3g}); {hint}"
        )
    if lam.min() < FLAT_RATIO * lam.max():
        # a flat direction (typically an improper prior on an irrelevant
        # parameter) would send the design points off to infinity
        raise NumericalError(
            f"posterior is nearly flat along some direction (Hessian eigenvalues "
            f"{lam.min():.3g} vs {lam.max():.3g}); give the parameters proper priors or use MAP"
        )
    return V / np.sqrt(lam)[None, :]


# --------------------------------------------------------------------------
# weighted point sets

@dataclass
class WeightedParamSet:
    """Hyperparameter points with normalized integration weights.

    Attributes
    ----------
    points : ndarray, shape (k, d)
        Points in ``w`` space; the first row is the mode for grid and CCD.
    log_post : ndarray
        Unnormalized log posterior ``-E`` at each point.
    weights : ndarray
        Nonnegative weights summing to one.
    models, states : list
        Model and fitted latent state per point (``None`` for synthetic
        targets).
    method : str
    info : dict
        Method extras: ``z`` coordinates, ``mode``, ``hessian``, CCD
        ``densities`` and ``moment_residual``, IS ``ess`` and ``seed``.
    """

    points: np.ndarray
    log_post: np.ndarray
    weights: np.ndarray
    models: list
    states: list
    method: str
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]

    def mean(self):
        return self.weights @ self.points


def _normalize(logw):
    logw = np.asarray(logw, dtype=float)
    return np.exp(logw - logsumexp(logw))


def _mode_and_transform(target, method, mode=None, gtol=1e-5):
    if mode is None:
        r = map_optimize(target, gtol=gtol)
        mode = r.w
        if not r.converged:
            warnings.warn(f"MAP search did not reach gtol ({r.message}); integrating around it",
                          RuntimeWarning, stacklevel=3)
    mode = _polish(target, np.asarray(mode, dtype=float))
    Hm = fd_hessian(target, w=mode)
    T = _whitening(Hm, method)
    return mode, Hm, T


def _polish(target, w, steps=3):
    """Newton steps with the FD Hessian, kept only while they improve.

    The optimizer stops at ``max|grad| < gtol``; the shell densities of the
    integration schemes are sensitive to the remaining offset.
    """
    try:
        E, g = target.energy_grad(w)
        for _ in range(steps):
            if np.max(np.abs(g)) < 1e-13:
                break
            Hm = fd_hessian(target, w=w)
            if np.any(np.linalg.eigvalsh(Hm) <= 0):
                break
            w_new = w - np.linalg.solve(Hm, g)
            E_new, g_new = target.energy_grad(w_new)
            if not (E_new <= E and np.max(np.abs(g_new)) < np.max(np.abs(g))):
                break
            w, E, g = w_new, E_new, g_new
    except (GPError, np.linalg.LinAlgError):
        pass
    return w


def _finish_set(target, points, E, E_mode, logw_extra, method, info, fit_states):
    points = np.asarray(points, dtype=float)
    E = np.asarray(E, dtype=float)
    ok = np.isfinite(E)
    if not np.all(ok):
        # points where the model cannot be evaluated carry no weight
        warnings.warn(f"{int(np.sum(~ok))} integration point(s) failed to evaluate and were dropped",
                      RuntimeWarning, stacklevel=3)
        logw_extra = np.broadcast_to(np.asarray(logw_extra, dtype=float), E.shape)[ok]
        for key in ("z", "densities", "base_weights"):
            if key in info and np.ndim(info[key]) and len(info[key]) == E.size:
                info[key] = np.asarray(info[key])[ok]
        points, E = points[ok], E[ok]
    info["dropped"] = int(np.sum(~ok))
    log_post = -E
    logw = -(E - E_mode) + logw_extra
    weights = _normalize(logw)
    models, states = [None] * len(points), [None] * len(points)
    if fit_states and isinstance(target, ModelTarget):
        out = parallel_map(target.fit_point, list(points))
        models = [o[0] for o in out]
        states = [o[1] for o in out]
    return WeightedParamSet(points, log_post, weights, models, states, method, info)


def ia_grid(model, data=None, step=GRID_STEP, threshold=GRID_THRESHOLD, mode=None,
            max_points=GRID_MAX_POINTS, fit_states=True):
    """Grid integration in whitened coordinates.

    Starting from the mode, neighbours on the lattice ``step * Z^d`` are
    added breadth-first while ``E - E_mode < threshold``. All points get
    ``Delta = 1``, so weights are proportional to ``exp(-(E - E_mode))``.
    """
    target = _as_target(model, data)
    mode, Hm, T = _mode_and_transform(target, "grid", mode)
    d = mode.size
    E_mode = target.energy(mode)
    seen = {(0,) * d: E_mode}
    keep = [(0,) * d]
    frontier = [(0,) * d]
    dirs = [tuple(int(s) * (j == i) for j in range(d)) for i in range(d) for s in (1, -1)]
    while frontier:
        cand = []
        for p in frontier:
            for dv in dirs:
                q = tuple(a + b for a, b in zip(p, dv))
                if q not in seen:
                    seen[q] = None
                    cand.append(q)
        Es = parallel_map(lambda q: target.safe_energy(mode + T @ (step * np.array(q, float))), cand)
        frontier = []
        for q, Eq in zip(cand, Es):
            seen[q] = Eq
            # ties at the threshold are excluded with a rounding margin so
            # that the kept set stays symmetric for symmetric posteriors
            if np.isfinite(Eq) and Eq - E_mode < threshold - 1e-9 * max(1.0, threshold):
                keep.append(q)
                frontier.append(q)
        if len(keep) > max_points:
            raise ValidationError("ia.grid_size", f"grid exceeded {max_points} points; use CCD")
    Z = step * np.array(keep, dtype=float)
    points = mode[None, :] + Z @ T.T
    E = np.array([seen[q] for q in keep])
    info = dict(z=Z, mode=mode, hessian=Hm, step=step, threshold=threshold)
    return _finish_set(target, points, E, E_mode, 0.0, "grid", info, fit_states)


def ccd_design(d, f0=CCD_F0):
    """Central composite design in ``z``: centre, corners and star points.

    For ``d = 1`` only the centre and the two star points are used.

    Returns ``(Z, base_weights, moment_residual)``. Corners and star points
    lie on the sphere of radius ``f0 * sqrt(d)``; the centre and shell
    weights solve ``E[1] = 1`` and ``E[z^T z] = d`` under ``N(0, I)``.
    """
    if d > CCD_MAX_DIM:
        raise ValidationError("ia.ccd_dim", f"CCD is limited to d <= {CCD_MAX_DIM} (got {d})")
    r = f0 * np.sqrt(d)
    star = np.vstack([r * np.eye(d), -r * np.eye(d)])
    if d > 1:
        corners = np.array(list(product((-1.0, 1.0), repeat=d))) * f0
        Z = np.vstack([np.zeros((1, d)), corners, star])
    else:
        # in one dimension the corners coincide with the star points
        Z = np.vstack([np.zeros((1, d)), star])
    ns = Z.shape[0] - 1
    # [1, ns; 0, ns r^2] [w0; w1] = [1; d]
    M = np.array([[1.0, ns], [0.0, ns * r * r]])
    rhs = np.array([1.0, float(d)])
    w0, w1 = np.linalg.solve(M, rhs)
    resid = float(np.max(np.abs(M @ np.array([w0, w1]) - rhs)))
    base = np.concatenate([[w0], np.full(ns, w1)])
    return Z, base, resid


def ia_ccd(model, data=None, f0=CCD_F0, mode=None, fit_states=True):
    """Central composite design integration.

    The weight of point ``k`` is ``base_k * exp(-(E_k - E_mode)) /
    exp(-|z_k|^2 / 2)``. The ratio ``exp(-(E_k - E_mode) + |z_k|^2 / 2)``
    is reported as the per-point density; it is 1 everywhere when the
    posterior is Gaussian.
    """
    target = _as_target(model, data)
    mode, Hm, T = _mode_and_transform(target, "ccd", mode)
    Z, base, resid = ccd_design(mode.size, f0)
    points = mode[None, :] + Z @ T.T
    E = np.array(parallel_map(target.safe_energy, list(points)))
    E_mode = E[0]
    zz = np.sum(Z**2, axis=1)
    with np.errstate(divide="ignore"):
        logw_extra = np.log(base) + 0.5 * zz
    dens = np.exp(-(E - E_mode) + 0.5 * zz)
    info = dict(z=Z, mode=mode, hessian=Hm, f0=f0, base_weights=base, densities=dens,
                moment_residual=resid)
    return _finish_set(target, points, E, E_mode, logw_extra, "ccd", info, fit_states)


def ia_is(model, data=None, M=200, proposal="gaussian", nu=4.0, seed=0, mode=None,
          fit_states=True):
    """Importance sampling from a Gaussian or Student-t proposal at the mode.

    The proposal covariance is the inverse Hessian. Weights are
    self-normalized; ``info['ess']`` is ``1 / sum(w^2)``.
    """
    if proposal not in ("gaussian", "student_t"):
        raise ValidationError("ia.proposal", f"unknown proposal {proposal!r}")
    if M < 1:
        raise ValidationError("ia.M", "M must be at least 1")
    target = _as_target(model, data)
    mode, Hm, T = _mode_and_transform(target, "is", mode)
    d = mode.size
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((M, d))
    if proposal == "student_t":
        s = rng.chisquare(nu, size=M) / nu
        Z = Z / np.sqrt(s)[:, None]
        zz = np.sum(Z**2, axis=1)
        log_g = (gammaln((nu + d) / 2) - gammaln(nu / 2) - 0.5 * d * np.log(nu * np.pi)
                 - 0.5 * (nu + d) * np.log1p(zz / nu))
    else:
        zz = np.sum(Z**2, axis=1)
        log_g = -0.5 * d * np.log(2 * np.pi) - 0.5 * zz
    points = mode[None, :] + Z @ T.T
    E = np.array(parallel_map(target.safe_energy, list(points)))
    E_mode = target.energy(mode)
    pset = _finish_set(target, points, E, E_mode, -log_g, "is",
                       dict(z=Z, mode=mode, hessian=Hm, proposal=proposal, seed=seed,
                            nu=nu if proposal == "student_t" else None),
                       fit_states)
    pset.info["ess"] = float(1.0 / np.sum(pset.weights**2))
    return pset


# --------------------------------------------------------------------------
# mixture prediction

@dataclass
class IAPrediction:
    """Mixture predictive summaries.

    ``density`` is ``(grid, values)`` with one row per test point when
    requested, else ``None``.
    """

    Eft: np.ndarray
    Varft: np.ndarray
    Eyt: np.ndarray
    Varyt: np.ndarray
    lpyt: np.ndarray
    density: tuple = None


def mixture_moments(weights, means, variances):
    """``(sum w m, sum w (v + m^2) - mean^2)`` along the first axis."""
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    mean = np.tensordot(w, m, axes=1)
    var = np.tensordot(w, v + m * m, axes=1) - mean * mean
    return mean, np.maximum(var, 0.0)


def ia_predict(pset, Xt, yt=None, aux_t=None, test_blocks=None, density_points=0):
    """Predict with the mixture over the points of ``pset``.

    Parameters
    ----------
    density_points : int
        When positive, also evaluate the latent mixture density at this many
        points spanning ``mean +- 5 sd`` for every test input.
    """
    if any(s is None for s in pset.states):
        raise ValidationError("ia.states", "the point set carries no fitted states")
    preds = parallel_map(
        lambda s: inference.predict(s, Xt, yt=yt, aux_t=aux_t, test_blocks=test_blocks),
        pset.states,
    )
    w = pset.weights
    M = np.array([p.Eft for p in preds])
    V = np.array([p.Varft for p in preds])
    mean, var = mixture_moments(w, M, V)
    Ey = Vy = lp = None
    if preds[0].Eyt is not None:
        Ey, Vy = mixture_moments(w, np.array([p.Eyt for p in preds]),
                                 np.array([p.Varyt for p in preds]))
    if preds[0].lpyt is not None:
        L = np.array([p.lpyt for p in preds])
        with np.errstate(divide="ignore"):
            lp = logsumexp(L + np.log(w)[:, None], axis=0)
    dens = None
    if density_points:
        sd = np.sqrt(np.maximum(var, 1e-300))
        u = np.linspace(-5.0, 5.0, int(density_points))
        grid = mean[:, None] + sd[:, None] * u[None, :]
        Vc = np.maximum(V, 1e-300)
        comp = (np.exp(-0.5 * (grid[None] - M[:, :, None]) ** 2 / Vc[:, :, None])
                / np.sqrt(2 * np.pi * Vc[:, :, None]))
        dens = (grid, np.tensordot(w, comp, axes=1))
    return IAPrediction(mean, var, Ey, Vy, lp, dens)
