"""Packing model hyperparameters into the optimization vector ``w``.

Layout: kernels in declaration order (children of a ``prod`` in order),
then likelihood parameters, then the inducing inputs when they are free.
Positive parameters are stored as ``log(theta)``; inducing inputs are stored
raw. Parameters whose prior is ``fixed`` are skipped.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .kernels import HYPERS
from .likelihoods import PARAMS as LIK_PARAMS
from .priors import Prior, prior_energy


@dataclass(frozen=True)
class Slot:
    """One free parameter group."""

    owner: str        # "kernel", "likelihood" or "inducing"
    path: tuple       # kernel index path (top-level index, child index, ...)
    name: str
    size: int
    shared: bool
    transform: str    # "log" or "identity"
    prior: Prior
    label: str


@dataclass(frozen=True)
class ParamVector:
    """Packed parameter values with gp_pak-style group labels.

    ``labels`` holds one entry per parameter group (for example
    ``'log(sexp.lengthScale x 2)'``); ``element_labels`` has one entry per
    element of ``w``.
    """

    w: np.ndarray
    labels: tuple
    element_labels: tuple

    def __len__(self):
        return self.w.size


def _kernel_slots(kern, path):
    if kern.family == "prod":
        out = []
        for c_i, c in enumerate(kern.children):
            out.extend(_kernel_slots(c, path + (c_i,)))
        return out
    out = []
    for name, _ in HYPERS[kern.family]:
        prior = kern.priors[name]
        if prior.fixed:
            continue
        v = kern.hyper[name]
        size = int(v.size)
        label = f"log({kern.family}.{name}" + (f" x {size})" if v.ndim == 1 and size > 1 else ")")
        out.append(Slot("kernel", path, name, size, v.ndim == 0, "log", prior, label))
    return out


def slots(model):
    """Free parameter groups in packing order."""
    out = []
    for i, k in enumerate(model.kernels):
        out.extend(_kernel_slots(k, (i,)))
    lik = model.likelihood
    for name, _ in LIK_PARAMS[lik.family]:
        prior = lik.priors[name]
        if not prior.fixed:
            out.append(Slot("likelihood", (), name, 1, True, "log", prior,
                            f"log({lik.family}.{name})"))
    sp = model.sparse
    if sp is not None and sp.optimize_inducing:
        size = sp.Xu.size
        out.append(Slot("inducing", (), "Xu", size, False, "identity", Prior("unif"),
                        f"inducing x {size}"))
    return out


def _get_kernel(model, path):
    k = model.kernels[path[0]]
    for c in path[1:]:
        k = k.children[c]
    return k


def _element_labels(s):
    if s.size == 1:
        return [s.label]
    base = s.label.split(" x ")[0]
    tail = ")" if s.transform == "log" else ""
    return [f"{base}[{j}]{tail}" for j in range(s.size)]


def pack(model):
    """Current free parameter values as a :class:`ParamVector`."""
    w, elabels = [], []
    for s in slots(model):
        if s.owner == "kernel":
            v = np.atleast_1d(_get_kernel(model, s.path).hyper[s.name])
            w.extend(np.log(v))
        elif s.owner == "likelihood":
            w.append(np.log(model.likelihood.params[s.name]))
        else:
            w.extend(model.sparse.Xu.ravel())
        elabels.extend(_element_labels(s))
    lab = tuple(s.label for s in slots(model))
    return ParamVector(np.array(w, dtype=float), lab, tuple(elabels))


def _set_kernel(kern, path, name, value):
    if not path:
        return kern.replace(**{name: value})
    children = list(kern.children)
    children[path[0]] = _set_kernel(children[path[0]], path[1:], name, value)
    return kern.with_children(children)


def unpack(model, w):
    """Model with the free parameters replaced by the values in ``w``."""
    w = np.asarray(getattr(w, "w", w), dtype=float).ravel()
    ss = slots(model)
    need = sum(s.size for s in ss)
    if w.size != need:
        raise InputError(f"parameter vector has {w.size} entries, the model needs {need}")
    kernels = list(model.kernels)
    lik = model.likelihood
    sp = model.sparse
    pos = 0
    for s in ss:
        chunk = w[pos:pos + s.size]
        pos += s.size
        if s.owner == "kernel":
            with np.errstate(over="ignore"):
                val = np.exp(chunk)
            val = float(val[0]) if s.shared else val
            kernels[s.path[0]] = _set_kernel(kernels[s.path[0]], s.path[1:], s.name, val)
        elif s.owner == "likelihood":
            lik = lik.replace(**{s.name: float(np.exp(chunk[0]))})
        else:
            sp = sp.with_Xu(chunk.reshape(sp.Xu.shape))
    return model.replace(kernels=kernels, likelihood=lik, sparse=sp)


def prior_energy_terms(model, w=None):
    """Sum of ``-log p_w(w_j)`` over free parameters and its gradient."""
    if w is None:
        w = pack(model).w
    w = np.asarray(w, dtype=float)
    E = 0.0
    g = np.zeros(w.size)
    pos = 0
    for s in slots(model):
        for j in range(s.size):
            e, d = prior_energy(s.prior, w[pos + j], s.transform)
            E += e
            g[pos + j] = d
        pos += s.size
    return E, g


def energy_in_w(model, data, w=None):
    """Energy ``E(w) = -log p(D|w) - sum_j log p_w(w_j)`` and its gradient.

    The log-marginal likelihood and its gradient come from the model's
    backend. Returns ``(E, grad)``.
    """
    from .inference import lml_and_grad

    if w is not None:
        model = unpack(model, w)
    lml, g = lml_and_grad(model, data)
    Ep, gp = prior_energy_terms(model)
    return -lml + Ep, -np.asarray(g) + gp
