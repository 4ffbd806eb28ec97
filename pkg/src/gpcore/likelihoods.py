"""Single-latent observation models.

Every routine here is elementwise: ``f`` may carry extra trailing axes (the
quadrature code passes an ``(n, nodes)`` array), while ``y`` and the
auxiliary vectors are broadcast against it after :func:`_bcast`.

Auxiliary data lives in a plain dict with the optional keys ``exposure``
(Poisson and negative binomial), ``trials`` (binomial) and ``censoring``
(Weibull, 1 = right censored).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln, log_ndtr, logsumexp, ndtr

from .errors import InputError, ValidationError
from .priors import Prior
from .quadrature import DEFAULT_NODES, expect, log_integral

LOG2PI = np.log(2 * np.pi)

PARAMS = {
    "gaussian": (("sigma2", 0.1),),
    "student_t": (("sigma2", 0.1), ("nu", 4.0)),
    "probit": (),
    "logit": (),
    "poisson": (),
    "negbin": (("disper", 10.0),),
    "binomial": (),
    "weibull": (("shape", 1.0),),
}

AUX_REQUIRED = {
    "poisson": ("exposure",),
    "negbin": ("exposure",),
    "binomial": ("trials",),
    "weibull": ("censoring",),
}

LOG_CONCAVE = {"gaussian", "probit", "logit", "poisson", "negbin", "binomial", "weibull"}


@dataclass(frozen=True, eq=False)
class Likelihood:
    """Observation model with its parameters and their priors.

    >>> Likelihood("gaussian", sigma2=0.04).params["sigma2"]
    0.04
    """

    family: str = "gaussian"
    params: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)

    def __init__(self, family="gaussian", priors=None, **params):
        if family not in PARAMS:
            raise ValidationError("likelihood.family", f"unknown likelihood {family!r}")
        names = [n for n, _ in PARAMS[family]]
        unknown = set(params) - set(names)
        if unknown:
            raise ValidationError(
                "likelihood.param", f"{family} has no parameter(s) {sorted(unknown)}"
            )
        values = {}
        for name, default in PARAMS[family]:
            v = float(params.get(name, default))
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(
                    "likelihood.positive", f"{family}.{name} must be strictly positive"
                )
            values[name] = v
        priors = dict(priors or {})
        for name, p in priors.items():
            if name not in names:
                raise ValidationError("likelihood.prior", f"{family} has no parameter {name!r}")
            if not isinstance(p, Prior):
                raise ValidationError("likelihood.prior", "priors must be Prior objects")
        for name in names:
            # the Student-t degrees of freedom are held fixed unless asked otherwise
            default = Prior("fixed") if (family, name) == ("student_t", "nu") else Prior("logunif")
            priors.setdefault(name, default)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", values)
        object.__setattr__(self, "priors", priors)

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"Likelihood({self.family!r}{', ' + inner if inner else ''})"

    def replace(self, **params):
        merged = dict(self.params)
        merged.update(params)
        return Likelihood(self.family, priors=self.priors, **merged)

    def free_names(self):
        return [n for n, _ in PARAMS[self.family] if not self.priors[n].fixed]

    def to_dict(self):
        d = {"family": self.family, **self.params}
        d["priors"] = {k: p.to_dict() for k, p in self.priors.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        priors = {k: Prior.from_dict(v) for k, v in d.pop("priors", {}).items()}
        return cls(d.pop("family"), priors=priors, **d)


# --------------------------------------------------------------------------
# data checks

def check_targets(lik, y, aux=None):
    """Validate targets and auxiliary vectors; returns cleaned copies."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if not np.all(np.isfinite(y)):
        raise InputError("targets contain non-finite values")
    aux = dict(aux or {})
    out = {}
    for key in ("exposure", "trials", "censoring"):
        v = aux.get(key)
        if v is None:
            continue
        v = np.asarray(v, dtype=float).ravel()
        if v.size != n:
            raise InputError(f"{key} has {v.size} entries, expected {n}")
        out[key] = v
    fam = lik.family
    for key in AUX_REQUIRED.get(fam, ()):
        if key not in out:
            if key == "exposure":
                out[key] = np.ones(n)
            elif key == "censoring":
                out[key] = np.zeros(n)
            else:
                raise InputError(f"{fam} likelihood needs the {key!r} vector", code="input.aux")
    if fam in ("probit", "logit") and not np.all(np.isin(y, (-1.0, 1.0))):
        raise InputError(f"{fam} targets must be -1 or +1", code="input.domain")
    if fam in ("poisson", "negbin", "binomial"):
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InputError(f"{fam} targets must be nonnegative integers", code="input.domain")
    if fam in ("poisson", "negbin") and np.any(out["exposure"] <= 0):
        raise InputError("exposure must be positive", code="input.domain")
    if fam == "binomial":
        z = out["trials"]
        if np.any(z <= 0) or np.any(z != np.round(z)) or np.any(y > z):
            raise InputError("binomial needs positive integer trials with y <= trials",
                             code="input.domain")
    if fam == "weibull":
        if np.any(y <= 0):
            raise InputError("weibull targets must be positive", code="input.domain")
        if not np.all(np.isin(out["censoring"], (0.0, 1.0))):
            raise InputError("censoring indicators must be 0 or 1", code="input.domain")
    return y, out


def _bcast(y, aux, ndim_extra):
    """Append ``ndim_extra`` singleton axes to y and every auxiliary vector."""
    shape = (...,) + (None,) * ndim_extra
    y = np.asarray(y, dtype=float)[shape]
    aux = {k: np.asarray(v, dtype=float)[shape] for k, v in (aux or {}).items()}
    return y, aux


def _extra(f, y):
    return max(np.ndim(f) - np.ndim(y), 0)


# --------------------------------------------------------------------------
# log density and latent derivatives

def ll_terms(lik, f, y, aux=None):
    """Per-observation log likelihood ``log p(y_i | f_i)``."""
    y, aux = _bcast(y, aux, _extra(f, y))
    f = np.asarray(f, dtype=float)
    fam, p = lik.family, lik.params
    if fam == "gaussian":
        s2 = p["sigma2"]
        return -0.5 * (LOG2PI + np.log(s2)) - 0.5 * (y - f) ** 2 / s2
    if fam == "student_t":
        s2, nu = p["sigma2"], p["nu"]
        return (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi * s2)
                - 0.5 * (nu + 1) * np.log1p((y - f) ** 2 / (nu * s2)))
    if fam == "probit":
        return log_ndtr(y * f)
    if fam == "logit":
        return -np.logaddexp(0.0, -y * f)
    if fam == "poisson":
        logmu = np.log(aux["exposure"]) + f
        return y * logmu - np.exp(logmu) - gammaln(y + 1)
    if fam == "negbin":
        r = p["disper"]
        logmu = np.log(aux["exposure"]) + f
        lrm = np.logaddexp(np.log(r), logmu)
        return (gammaln(r + y) - gammaln(y + 1) - gammaln(r)
                + r * (np.log(r) - lrm) + y * (logmu - lrm))
    if fam == "binomial":
        z = aux["trials"]
        return (gammaln(z + 1) - gammaln(y + 1) - gammaln(z - y + 1)
                - y * np.logaddexp(0.0, -f) - (z - y) * np.logaddexp(0.0, f))
    if fam == "weibull":
        r = p["shape"]
        unc = 1.0 - aux["censoring"]
        return unc * (np.log(r) + f + (r - 1) * np.log(y)) - np.exp(f) * y**r
    raise ValidationError("likelihood.family", fam)


def lik_ll(lik, f, y, aux=None):
    """Total log likelihood with full normalizing constants."""
    return float(np.sum(ll_terms(lik, f, y, aux)))


def lik_llg(lik, f, y, aux=None, order=1):
    """Elementwise ``d^order log p(y_i|f_i) / df_i^order`` for order 1, 2 or 3."""
    if order not in (1, 2, 3):
        raise InputError("order must be 1, 2 or 3")
    y, aux = _bcast(y, aux, _extra(f, y))
    f = np.asarray(f, dtype=float)
    fam, p = lik.family, lik.params
    if fam == "gaussian":
        s2 = p["sigma2"]
        return [(y - f) / s2, np.full(np.broadcast(f, y).shape, -1.0 / s2),
                np.zeros(np.broadcast(f, y).shape)][order - 1]
    if fam == "student_t":
        s2, nu = p["sigma2"], p["nu"]
        r = y - f
        a = nu * s2 + r**2
        if order == 1:
            return (nu + 1) * r / a
        if order == 2:
            return (nu + 1) * (r**2 - nu * s2) / a**2
        return 2 * (nu + 1) * r * (r**2 - 3 * nu * s2) / a**3
    if fam == "probit":
        z = y * f
        lam = np.exp(-0.5 * z**2 - 0.5 * LOG2PI - log_ndtr(z))
        if order == 1:
            return y * lam
        if order == 2:
            return -lam * (z + lam)
        return y * (lam * (z + lam) * (z + 2 * lam) - lam)
    if fam in ("logit", "binomial"):
        pi_ = expit(f)
        if fam == "logit":
            t, z = (y + 1) / 2, 1.0
        else:
            t, z = y, aux["trials"]
        if order == 1:
            return t - z * pi_
        if order == 2:
            return -z * pi_ * (1 - pi_)
        return -z * pi_ * (1 - pi_) * (1 - 2 * pi_)
    if fam == "poisson":
        mu = aux["exposure"] * np.exp(f)
        return y - mu if order == 1 else -mu + 0 * y
    if fam == "negbin":
        r = p["disper"]
        mu = aux["exposure"] * np.exp(f)
        if order == 1:
            return r * (y - mu) / (r + mu)
        if order == 2:
            return -r * mu * (r + y) / (r + mu) ** 2
        return -r * (r + y) * mu * (r - mu) / (r + mu) ** 3
    if fam == "weibull":
        r = p["shape"]
        h = np.exp(f) * y**r
        return (1.0 - aux["censoring"]) - h if order == 1 else -h
    raise ValidationError("likelihood.family", fam)


def lik_llg_param(lik, f, y, aux=None):
    """Derivatives with respect to each free ``log(phi_j)``.

    Returns
    -------
    list of tuple
        One ``(dll, dd1, dd2)`` triple per free parameter: the derivative of
        the per-point log likelihood and of its first and second latent
        derivatives. Parameter-free families return ``[]``.
    """
    free = lik.free_names()
    if not free:
        return []
    y, aux = _bcast(y, aux, _extra(f, y))
    f = np.asarray(f, dtype=float)
    fam, p = lik.family, lik.params
    out = {}
    if fam == "gaussian":
        s2 = p["sigma2"]
        r = y - f
        out["sigma2"] = (-0.5 + 0.5 * r**2 / s2, -r / s2, np.full(r.shape, 1.0 / s2))
    elif fam == "student_t":
        s2, nu = p["sigma2"], p["nu"]
        r = y - f
        a = nu * s2 + r**2
        out["sigma2"] = (
            -0.5 + 0.5 * (nu + 1) * r**2 / a,
            -(nu + 1) * nu * s2 * r / a**2,
            -(nu + 1) * nu * s2 * (3 * r**2 - nu * s2) / a**3,
        )
        dll = nu * (0.5 * digamma((nu + 1) / 2) - 0.5 * digamma(nu / 2) - 0.5 / nu
                    - 0.5 * np.log1p(r**2 / (nu * s2)) - 0.5 * (nu + 1) * (s2 / a - 1 / nu))
        dd1 = nu * (r / a - (nu + 1) * r * s2 / a**2)
        dd2 = nu * ((r**2 - nu * s2) / a**2 - (nu + 1) * s2 / a**2
                    - 2 * (nu + 1) * s2 * (r**2 - nu * s2) / a**3)
        out["nu"] = (dll, dd1, dd2)
    elif fam == "negbin":
        r = p["disper"]
        mu = aux["exposure"] * np.exp(f)
        rm = r + mu
        dll = r * (digamma(r + y) - digamma(r) + np.log(r) - np.log(rm) + (mu - y) / rm)
        out["disper"] = (
            dll,
            r * mu * (y - mu) / rm**2,
            -r * mu * (2 * r * mu + y * mu - r * y) / rm**3,
        )
    elif fam == "weibull":
        r = p["shape"]
        ly = np.log(y)
        h = np.exp(f) * y**r
        unc = 1.0 - aux["censoring"]
        dd = -r * h * ly
        out["shape"] = (r * (unc * (1 / r + ly) - h * ly), dd, dd)
    return [tuple(np.broadcast_to(t, np.broadcast(f, y).shape).copy() for t in out[n])
            for n in free]


# --------------------------------------------------------------------------
# tilted distributions (EP) and predictive densities

def _newton_center(lik, y, aux, mu, var, iters=30):
    """Mode and curvature scale of ``p(y|f) N(f|mu, var)``, vectorized."""
    f = np.array(mu, dtype=float, copy=True)
    for _ in range(iters):
        g = lik_llg(lik, f, y, aux, 1) - (f - mu) / var
        H = lik_llg(lik, f, y, aux, 2) - 1.0 / var
        H = np.where(H < 0, H, -1.0 / var)
        step = -g / H
        step = np.clip(step, -5 * np.sqrt(var), 5 * np.sqrt(var))
        f = f + step
        if np.all(np.abs(step) < 1e-10 * (1 + np.abs(f))):
            break
    H = lik_llg(lik, f, y, aux, 2) - 1.0 / var
    scale = np.where(H < 0, 1.0 / np.sqrt(np.abs(H)), np.sqrt(var))
    return f, scale


def _log_tilted(lik, y, aux, mu, var, n_nodes):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=float), mu.shape)
    aux = {k: np.broadcast_to(np.asarray(v, dtype=float), mu.shape) for k, v in (aux or {}).items()}
    c, s = _newton_center(lik, y, aux, mu, var)

    def log_h(f):
        return (ll_terms(lik, f, y, aux)
                - 0.5 * (LOG2PI + np.log(var[:, None])) - 0.5 * (f - mu[:, None]) ** 2 / var[:, None])

    return log_integral(log_h, c, s, n_nodes), y, aux


def _log_tilted_grid(lik, y, aux, mu, var, min_pts=801, max_pts=20001):
    """Composite Simpson version of :func:`_log_tilted` for Student-t.

    The Student-t tilted density can be bimodal, which a single
    mode-centred Gauss-Hermite rule handles poorly. The range covers both
    the cavity and the likelihood peak, with spacing resolving the narrower.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=float), mu.shape)
    sd, st = np.sqrt(var), np.sqrt(lik.params["sigma2"])
    lo = np.minimum(mu - 12 * sd, y - 12 * st)
    hi = np.maximum(mu + 12 * sd, y + 12 * st)
    npts = int(np.clip(np.max((hi - lo) / (np.minimum(sd, st) / 16)), min_pts, max_pts))
    npts += 1 - npts % 2
    t = np.linspace(0.0, 1.0, npts)
    f = lo[:, None] + (hi - lo)[:, None] * t
    wts = np.ones(npts)
    wts[1:-1:2], wts[2:-1:2] = 4.0, 2.0
    wts = wts / 3.0 / (npts - 1)
    lh = (ll_terms(lik, f, y, None) - 0.5 * (LOG2PI + np.log(var[:, None]))
          - 0.5 * (f - mu[:, None]) ** 2 / var[:, None])
    terms = lh + np.log(wts)
    logZ = logsumexp(terms, axis=-1) + np.log(hi - lo)
    p = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))
    return (logZ, f, p), y, {}


def lik_tilted_moments(lik, y, mu_cav, var_cav, aux=None, n_nodes=DEFAULT_NODES,
                       param_grad=False):
    """Moments of ``p(y|f) N(f | mu_cav, var_cav)``.

    Inputs broadcast elementwise. Probit and Gaussian use closed forms; the
    other families use Gauss-Hermite quadrature recentred at the mode of the
    tilted density and scaled by its curvature.

    Returns
    -------
    logZ, mean, var : ndarray
    dlogZ : list of ndarray, only when ``param_grad`` is true
        Derivative of ``logZ`` w.r.t. each free ``log(phi_j)`` at fixed cavity.
    """
    mu = np.asarray(mu_cav, dtype=float)
    v = np.asarray(var_cav, dtype=float)
    if np.any(~(v > 0)):
        raise InputError("cavity variance must be positive (EP instability)", code="ep.cavity")
    yy = np.asarray(y, dtype=float)
    fam = lik.family
    if fam == "probit":
        sq = np.sqrt(1 + v)
        z = yy * mu / sq
        logZ = log_ndtr(z)
        lam = np.exp(-0.5 * z**2 - 0.5 * LOG2PI - logZ)
        mean = mu + yy * v * lam / sq
        var = v - v**2 * lam * (z + lam) / (1 + v)
        res = (logZ, mean, var)
        return res + ([],) if param_grad else res
    if fam == "gaussian":
        s2 = lik.params["sigma2"]
        tot = v + s2
        logZ = -0.5 * (LOG2PI + np.log(tot)) - 0.5 * (yy - mu) ** 2 / tot
        mean = mu + v * (yy - mu) / tot
        var = v - v**2 / tot
        res = (logZ, mean, var)
        if not param_grad:
            return res
        g = [s2 * (-0.5 / tot + 0.5 * (yy - mu) ** 2 / tot**2)] if lik.free_names() else []
        return res + (g,)
    shape = np.broadcast(yy, mu, v).shape
    if fam == "student_t":
        (logZ, f, p), y1, a1 = _log_tilted_grid(lik, yy, aux, mu, v)
    else:
        (logZ, f, p), y1, a1 = _log_tilted(lik, yy, aux, mu, v, n_nodes)
    mean = np.sum(p * f, axis=-1)
    var = np.maximum(np.sum(p * (f - mean[:, None]) ** 2, axis=-1), 1e-300)
    res = (logZ.reshape(shape), mean.reshape(shape), var.reshape(shape))
    if not param_grad:
        return res
    grads = [np.sum(p * t[0], axis=-1).reshape(shape) for t in lik_llg_param(lik, f, y1, a1)]
    return res + (grads,)


def lik_pred(lik, m_f, v_f, y=None, aux=None, n_nodes=DEFAULT_NODES):
    """Observation-space predictive moments and optional log density.

    Returns ``(Ey, Vary, lpy)``; ``lpy`` is ``None`` when ``y`` is omitted.
    For probit and logit ``Ey`` is the expectation of the +-1 label, so the
    class-one probability is ``(1 + Ey) / 2``.
    """
    m = np.atleast_1d(np.asarray(m_f, dtype=float))
    v = np.maximum(np.atleast_1d(np.asarray(v_f, dtype=float)), 0.0)
    n = m.size
    if y is not None:
        y, aux = check_targets(lik, np.broadcast_to(y, m.shape), aux)
    else:
        aux = {k: np.broadcast_to(np.asarray(a, dtype=float).ravel(), m.shape)
               for k, a in (aux or {}).items()}
        for key in AUX_REQUIRED.get(lik.family, ()):
            if key not in aux:
                if key == "trials":
                    raise InputError("binomial prediction needs trials", code="input.aux")
                aux[key] = np.ones(n) if key == "exposure" else np.zeros(n)
    fam, p = lik.family, lik.params
    if fam == "gaussian":
        Ey, Vy = m.copy(), v + p["sigma2"]
    elif fam == "student_t":
        nu = p["nu"]
        Ey = m.copy()
        Vy = v + (p["sigma2"] * nu / (nu - 2) if nu > 2 else np.inf)
    elif fam == "probit":
        p1 = ndtr(m / np.sqrt(1 + v))
        Ey, Vy = 2 * p1 - 1, 4 * p1 * (1 - p1)
    elif fam == "logit":
        p1 = expect(expit, m, v, n_nodes)
        Ey, Vy = 2 * p1 - 1, 4 * p1 * (1 - p1)
    elif fam in ("poisson", "negbin"):
        e = aux["exposure"]
        Emu = e * np.exp(m + v / 2)
        Emu2 = e**2 * np.exp(2 * m + 2 * v)
        Ey = Emu
        Vy = Emu + Emu2 - Emu**2
        if fam == "negbin":
            Vy = Vy + Emu2 / p["disper"]
    elif fam == "binomial":
        z = aux["trials"]
        Ep = expect(expit, m, v, n_nodes)
        Ep2 = expect(lambda t: expit(t) ** 2, m, v, n_nodes)
        Ey = z * Ep
        Vy = z * (Ep - Ep2) + z**2 * (Ep2 - Ep**2)
    elif fam == "weibull":
        r = p["shape"]
        g1, g2 = np.exp(gammaln(1 + 1 / r)), np.exp(gammaln(1 + 2 / r))
        Ey = g1 * np.exp(-m / r + v / (2 * r**2))
        Vy = g2 * np.exp(-2 * m / r + 2 * v / r**2) - Ey**2
    else:
        raise ValidationError("likelihood.family", fam)
    lpy = None
    if y is not None:
        lpy = np.empty(n)
        zero = v <= 0
        if np.any(zero):
            sub = {k: a[zero] for k, a in aux.items()}
            lpy[zero] = ll_terms(lik, m[zero], y[zero], sub)
        if np.any(~zero):
            sub = {k: a[~zero] for k, a in aux.items()}
            lpy[~zero] = lik_tilted_moments(lik, y[~zero], m[~zero], v[~zero], sub, n_nodes)[0]
    return Ey, Vy, lpy


def lik_param_values(lik):
    return [lik.params[n] for n in lik.free_names()]

