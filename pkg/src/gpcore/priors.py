"""Hyperparameter priors and their log-space bookkeeping.

Each prior is a density over a *natural variable* of the parameter: the
parameter itself for most families, its square root for ``sqrtt`` and
``sqrtunif``, its logarithm for ``logunif`` and ``log(log(theta))`` for
``loglogunif``. :func:`prior_log_density` evaluates that density (with full
normalizing constants) at the value implied by ``theta``; improper flat
families return 0. :func:`prior_energy` pushes the density into the
optimization coordinate ``w`` with the matching Jacobian terms.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, digamma

from .errors import ValidationError

FAMILIES = {
    # family: (natural variable, parameter defaults)
    "gaussian": ("theta", {"mu": 0.0, "s2": 1.0}),
    "loggaussian": ("theta", {"mu": 0.0, "s2": 1.0}),
    "laplace": ("theta", {"mu": 0.0, "s": 1.0}),
    "t": ("theta", {"mu": 0.0, "s2": 1.0, "nu": 4.0}),
    "sqrtt": ("sqrt", {"mu": 0.0, "s2": 1.0, "nu": 4.0}),
    "sinvchi2": ("theta", {"s2": 1.0, "nu": 4.0}),
    "gamma": ("theta", {"alpha": 1.0, "beta": 1.0}),
    "invgamma": ("theta", {"alpha": 1.0, "beta": 1.0}),
    "unif": ("theta", {}),
    "sqrtunif": ("sqrt", {}),
    "logunif": ("log", {}),
    "loglogunif": ("loglog", {}),
    "fixed": (None, {}),
}

_POSITIVE_SUPPORT = {"loggaussian", "sinvchi2", "gamma", "invgamma", "sqrtt",
                     "sqrtunif", "logunif"}


@dataclass(frozen=True)
class Prior:
    """A prior family and its (fixed) parameters.

    >>> Prior("gamma", alpha=2.0, beta=3.0).params["beta"]
    3.0
    """

    family: str = "logunif"
    params: dict = field(default_factory=dict)

    def __init__(self, family="logunif", **params):
        if family not in FAMILIES:
            raise ValidationError("prior.family", f"unknown prior family {family!r}")
        defaults = FAMILIES[family][1]
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValidationError(
                "prior.param", f"{family} prior has no parameter(s) {sorted(unknown)}"
            )
        full = {k: float(params.get(k, v)) for k, v in defaults.items()}
        for k in ("s2", "s", "nu", "alpha", "beta"):
            if k in full and not full[k] > 0:
                raise ValidationError("prior.param", f"{family} prior needs {k} > 0")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", full)

    @property
    def fixed(self):
        return self.family == "fixed"

    @property
    def variable(self):
        return FAMILIES[self.family][0]

    def to_dict(self):
        return {"family": self.family, **self.params}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("family"), **d)


def _in_support(prior, theta):
    if prior.family in _POSITIVE_SUPPORT:
        return theta > 0
    if prior.family == "loglogunif":
        return theta > 1
    return np.isfinite(theta)


def _natural(prior, theta):
    var = prior.variable
    if var == "sqrt":
        return np.sqrt(theta)
    if var == "log":
        return np.log(theta)
    if var == "loglog":
        return np.log(np.log(theta))
    return theta


def _student_t(u, mu, s2, nu):
    r2 = (u - mu) ** 2 / (nu * s2)
    lp = (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi * s2)
          - 0.5 * (nu + 1) * np.log1p(r2))
    dlp = -(nu + 1) * (u - mu) / (nu * s2 + (u - mu) ** 2)
    return lp, dlp


def _density_and_grad(prior, theta):
    """log p and its derivative with respect to the natural variable."""
    p = prior.params
    fam = prior.family
    u = _natural(prior, theta)
    if fam in ("unif", "sqrtunif", "logunif", "loglogunif"):
        return 0.0, 0.0
    if fam == "gaussian":
        lp = -0.5 * np.log(2 * np.pi * p["s2"]) - 0.5 * (u - p["mu"]) ** 2 / p["s2"]
        return lp, -(u - p["mu"]) / p["s2"]
    if fam == "loggaussian":
        lt = np.log(u)
        lp = (-lt - 0.5 * np.log(2 * np.pi * p["s2"])
              - 0.5 * (lt - p["mu"]) ** 2 / p["s2"])
        return lp, (-1.0 - (lt - p["mu"]) / p["s2"]) / u
    if fam == "laplace":
        lp = -np.log(2 * p["s"]) - abs(u - p["mu"]) / p["s"]
        return lp, -np.sign(u - p["mu"]) / p["s"]
    if fam in ("t", "sqrtt"):
        return _student_t(u, p["mu"], p["s2"], p["nu"])
    if fam == "sinvchi2":
        nu, s2 = p["nu"], p["s2"]
        lp = (0.5 * nu * np.log(nu / 2) - gammaln(nu / 2) + 0.5 * nu * np.log(s2)
              - (nu / 2 + 1) * np.log(u) - nu * s2 / (2 * u))
        return lp, -(nu / 2 + 1) / u + nu * s2 / (2 * u**2)
    if fam == "gamma":
        a, b = p["alpha"], p["beta"]
        lp = a * np.log(b) - gammaln(a) + (a - 1) * np.log(u) - b * u
        return lp, (a - 1) / u - b
    if fam == "invgamma":
        a, b = p["alpha"], p["beta"]
        lp = a * np.log(b) - gammaln(a) - (a + 1) * np.log(u) - b / u
        return lp, -(a + 1) / u + b / u**2
    raise ValidationError("prior.fixed", "a fixed prior has no density")


def prior_log_density(prior, theta):
    """Log density of ``prior`` at parameter value ``theta``.

    Outside the support the result is ``-inf``.
    """
    theta = float(theta)
    if not _in_support(prior, theta):
        return -np.inf
    return float(_density_and_grad(prior, theta)[0])


def prior_log_density_grad(prior, theta):
    """Derivative of :func:`prior_log_density` with respect to ``theta``."""
    theta = float(theta)
    if not _in_support(prior, theta):
        raise ValidationError(
            "prior.support", f"{theta!r} is outside the support of the {prior.family} prior"
        )
    _, du = _density_and_grad(prior, theta)
    var = prior.variable
    if var == "sqrt":
        return float(du / (2 * np.sqrt(theta)))
    if var == "log":
        return float(du / theta)
    if var == "loglog":
        return float(du / (theta * np.log(theta)))
    return float(du)


def prior_energy(prior, w, transform="log"):
    """Energy contribution ``-log p_w(w)`` and its derivative in ``w``.

    ``transform`` is ``"log"`` for positive parameters stored as
    ``w = log(theta)`` and ``"identity"`` for unconstrained ones.
    """
    w = float(w)
    var = prior.variable
    if transform == "identity":
        if var != "theta":
            raise ValidationError(
                "prior.transform",
                f"{prior.family} prior cannot be placed on an unconstrained parameter",
            )
        lp = prior_log_density(prior, w)
        if not np.isfinite(lp):
            return np.inf, np.nan
        return -lp, -prior_log_density_grad(prior, w)
    theta = np.exp(w)
    if var == "loglog":
        if w <= 0:
            return np.inf, np.nan
        return np.log(w), 1.0 / w
    lp = prior_log_density(prior, theta)
    if not np.isfinite(lp):
        return np.inf, np.nan
    g = prior_log_density_grad(prior, theta) * theta
    if var == "theta":
        return -(lp + w), -(g + 1.0)
    if var == "sqrt":
        return -(lp + 0.5 * w - np.log(2.0)), -(g + 0.5)
    # log variable: density already lives on w
    return -lp, -g
