"""Covariance functions.

A :class:`Kernel` is an immutable description of one covariance function:
its family, hyperparameter values, hyperparameter priors, the input columns
it looks at and (for ``prod``) its factors. Evaluation is vectorized over
pairs of input rows; gradients are returned with respect to the log of each
hyperparameter element, which is the coordinate the optimizer works in.
"""

from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np
from scipy import sparse

from .errors import InputError, ValidationError
from .priors import Prior

# family -> ordered hyperparameter names with default values.
HYPERS = {
    "sexp": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "exp": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "matern32": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "matern52": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "rq": (("magnSigma2", 0.1), ("lengthScale", 1.0), ("alpha", 20.0)),
    "periodic": (("magnSigma2", 0.1), ("lengthScale", 1.0), ("period", 1.0)),
    "linear": (("coeffSigma2", 10.0),),
    "constant": (("constSigma2", 0.1),),
    "neuralnetwork": (("biasSigma2", 0.1), ("weightSigma2", 10.0)),
    "ppcs0": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "ppcs1": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "ppcs2": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "ppcs3": (("magnSigma2", 0.1), ("lengthScale", 1.0)),
    "cat": (),
    "prod": (),
}

# hyperparameters that may carry one value per active input dimension
PER_DIM = {"lengthScale", "coeffSigma2", "weightSigma2"}

STATIONARY = {"sexp", "exp", "matern32", "matern52", "rq", "periodic",
              "ppcs0", "ppcs1", "ppcs2", "ppcs3"}
COMPACT = {"ppcs0", "ppcs1", "ppcs2", "ppcs3"}

SPARSE_FILL = 0.5


@dataclass(frozen=True, eq=False)
class Kernel:
    """Covariance-function specification.

    Parameters
    ----------
    family : str
        One of the keys of :data:`HYPERS`.
    selectedVariables : sequence of int, optional
        Input columns the kernel depends on (all columns when omitted).
    nin : int, optional
        Dimension bound ``d`` of a compactly supported ``ppcs`` kernel.
        Defaults to the number of active inputs.
    children : sequence of Kernel
        Factors of a ``prod`` kernel.
    priors : dict, optional
        Hyperparameter name -> :class:`~gpcore.priors.Prior`. Missing entries
        default to ``logunif``.
    **hyper
        Hyperparameter values. A scalar for a per-dimension hyperparameter
        is a single shared (isotropic) parameter; a vector gives one
        parameter per active dimension.

    Examples
    --------
    >>> k = Kernel("sexp", magnSigma2=0.04, lengthScale=[1.1, 1.2])
    >>> round(kern_eval(k, [-1, -1], [0, 0]), 4)
    0.0187
    """

    family: str
    hyper: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)
    selectedVariables: tuple = None
    nin: int = None
    children: tuple = ()

    def __init__(self, family, selectedVariables=None, nin=None, children=(),
                 priors=None, **hyper):
        if family not in HYPERS:
            raise ValidationError("kernel.family", f"unknown kernel family {family!r}")
        names = [n for n, _ in HYPERS[family]]
        unknown = set(hyper) - set(names)
        if unknown:
            raise ValidationError(
                "kernel.hyper", f"{family} has no hyperparameter(s) {sorted(unknown)}"
            )
        values = {}
        for name, default in HYPERS[family]:
            v = np.array(hyper.get(name, default), dtype=float)
            if v.ndim > 1 or v.size == 0:
                raise ValidationError("kernel.hyper", f"{family}.{name} must be a scalar or vector")
            if v.ndim == 1 and name not in PER_DIM:
                if v.size != 1:
                    raise ValidationError("kernel.hyper", f"{family}.{name} must be a scalar")
                v = v.reshape(())
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValidationError(
                    "kernel.positive", f"{family}.{name} must be strictly positive, got {v}"
                )
            v.setflags(write=False)
            values[name] = v
        priors = dict(priors or {})
        for name, p in priors.items():
            if name not in names:
                raise ValidationError("kernel.prior", f"{family} has no hyperparameter {name!r}")
            if not isinstance(p, Prior):
                raise ValidationError("kernel.prior", f"prior for {family}.{name} must be a Prior")
        for name in names:
            priors.setdefault(name, Prior("logunif"))
        if selectedVariables is not None:
            sv = tuple(int(i) for i in np.atleast_1d(selectedVariables))
            if len(set(sv)) != len(sv) or any(i < 0 for i in sv) or not sv:
                raise ValidationError(
                    "kernel.selectedVariables", "selectedVariables must be unique nonnegative indices"
                )
            selectedVariables = sv
        children = tuple(children)
        if family == "prod":
            if len(children) < 2:
                raise ValidationError("kernel.prod", "prod needs at least two children")
            if not all(isinstance(c, Kernel) for c in children):
                raise ValidationError("kernel.prod", "prod children must be Kernel objects")
        elif children:
            raise ValidationError("kernel.children", f"{family} takes no children")
        if nin is not None:
            if family not in COMPACT:
                raise ValidationError("kernel.nin", "nin applies only to ppcs kernels")
            nin = int(nin)
            if nin < 1:
                raise ValidationError("kernel.nin", "nin must be >= 1")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "hyper", values)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "selectedVariables", selectedVariables)
        object.__setattr__(self, "nin", nin)
        object.__setattr__(self, "children", children)

    def __repr__(self):
        parts = [repr(self.family)]
        for k, v in self.hyper.items():
            parts.append(f"{k}={v.tolist()}")
        if self.selectedVariables is not None:
            parts.append(f"selectedVariables={list(self.selectedVariables)}")
        if self.children:
            parts.append(f"children={list(self.children)}")
        return f"Kernel({', '.join(parts)})"

    def replace(self, **hyper):
        """Copy with some hyperparameter values replaced."""
        merged = {k: v for k, v in self.hyper.items()}
        merged.update(hyper)
        return Kernel(self.family, selectedVariables=self.selectedVariables, nin=self.nin,
                      children=self.children, priors=self.priors, **merged)

    def with_children(self, children):
        return Kernel(self.family, selectedVariables=self.selectedVariables, nin=self.nin,
                      children=children, priors=self.priors, **self.hyper)

    def to_dict(self):
        d = {"family": self.family}
        for k, v in self.hyper.items():
            d[k] = v.tolist()
        priors = {k: p.to_dict() for k, p in self.priors.items()}
        if priors:
            d["priors"] = priors
        if self.selectedVariables is not None:
            d["selectedVariables"] = list(self.selectedVariables)
        if self.nin is not None:
            d["nin"] = self.nin
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        family = d.pop("family")
        priors = {k: Prior.from_dict(v) for k, v in d.pop("priors", {}).items()}
        children = [cls.from_dict(c) for c in d.pop("children", [])]
        return cls(family, priors=priors, children=children, **d)


# --------------------------------------------------------------------------
# evaluation core

def _active(kern, X):
    X = np.asarray(X, dtype=float)
    if kern.selectedVariables is None:
        return X
    if max(kern.selectedVariables) >= X.shape[-1]:
        raise InputError(
            f"selectedVariables {list(kern.selectedVariables)} exceed input dimension {X.shape[-1]}"
        )
    return X[..., list(kern.selectedVariables)]


def _per_dim(kern, name, d):
    v = kern.hyper[name]
    if v.ndim == 0:
        return np.full(d, float(v)), True
    if v.size != d:
        raise InputError(
            f"{kern.family}.{name} has {v.size} entries but the kernel sees {d} input(s)"
        )
    return v, False


def _reduce(per_dim_grads, shared):
    # gradient of a shared scalar is the sum over dimensions
    if shared:
        return [sum(per_dim_grads)]
    return list(per_dim_grads)


def _safe_div(a, b):
    out = np.zeros(np.broadcast(a, b).shape)
    np.divide(a, b, out=out, where=b > 0)
    return out


def _ppcs_poly(q, j, r):
    """(1-r)_+^(j+q) * P(r) / c and its r-derivative, magnitude excluded."""
    t = np.clip(1.0 - r, 0.0, None)
    p = j + q
    if q == 0:
        P, dP, c = np.ones_like(r), np.zeros_like(r), 1.0
    elif q == 1:
        P, dP, c = (j + 1) * r + 1, np.full_like(r, j + 1.0), 1.0
    elif q == 2:
        a2, a1 = j**2 + 4 * j + 3, 3 * j + 6
        P, dP, c = a2 * r**2 + a1 * r + 3, 2 * a2 * r + a1, 3.0
    else:
        a3, a2, a1 = j**3 + 9 * j**2 + 23 * j + 15, 6 * j**2 + 36 * j + 45, 15 * j + 45
        P = a3 * r**3 + a2 * r**2 + a1 * r + 15
        dP, c = 3 * a3 * r**2 + 2 * a2 * r + a1, 15.0
    tp = t**p
    tp1 = np.where(r < 1, t ** (p - 1), 0.0)
    val = tp * P / c
    dval = (-p * tp1 * P + tp * dP) / c
    return val, dval


def _core(kern, A, B, want_grads):
    """Evaluate ``kern`` on broadcast pairs of rows of A and B.

    Returns ``(K, grads)`` where ``grads`` holds one array per hyperparameter
    element (all of them, fixed or not), differentiated w.r.t. the log value.
    """
    fam = kern.family
    if fam == "prod":
        vals, gl = [], []
        for c in kern.children:
            v, g = _core(c, A, B, want_grads)
            vals.append(v)
            gl.append(g)
        K = np.prod(np.broadcast_arrays(*vals), axis=0)
        grads = []
        if want_grads:
            for i, g in enumerate(gl):
                others = np.ones_like(K)
                for jj, v in enumerate(vals):
                    if jj != i:
                        others = others * v
                grads.extend(gi * others for gi in g)
        return K, grads

    A = _active(kern, A)
    B = _active(kern, B)
    d = A.shape[-1]
    if B.shape[-1] != d:
        raise InputError(f"input dimension mismatch: {A.shape[-1]} vs {B.shape[-1]}")
    h = kern.hyper

    if fam == "constant":
        s2 = float(h["constSigma2"])
        K = np.full(np.broadcast_shapes(A.shape[:-1], B.shape[:-1]), s2)
        return K, ([K.copy()] if want_grads else [])

    if fam == "cat":
        K = np.all(A == B, axis=-1).astype(float)
        return K, []

    if fam == "linear":
        c, shared = _per_dim(kern, "coeffSigma2", d)
        terms = [c[k] * A[..., k] * B[..., k] for k in range(d)]
        K = sum(terms) if d else np.zeros(np.broadcast_shapes(A.shape[:-1], B.shape[:-1]))
        K = np.broadcast_to(K, np.broadcast_shapes(A.shape[:-1], B.shape[:-1])).copy()
        return K, (_reduce(terms, shared) if want_grads else [])

    if fam == "neuralnetwork":
        w, shared = _per_dim(kern, "weightSigma2", d)
        s = np.concatenate([[float(h["biasSigma2"])], w])
        one_a = np.ones(A.shape[:-1] + (1,))
        one_b = np.ones(B.shape[:-1] + (1,))
        At = np.concatenate([one_a, A], axis=-1)
        Bt = np.concatenate([one_b, B], axis=-1)
        a = 2 * np.sum(At * s * Bt, axis=-1)
        ba = 1 + 2 * np.sum(At**2 * s, axis=-1)
        bb = 1 + 2 * np.sum(Bt**2 * s, axis=-1)
        den = np.sqrt(ba * bb)
        z = a / den
        K = (2 / pi) * np.arcsin(z)
        grads = []
        if want_grads:
            dk_dz = (2 / pi) / np.sqrt(np.clip(1 - z**2, 1e-300, None))
            per = []
            for p in range(d + 1):
                da = 2 * s[p] * At[..., p] * Bt[..., p]
                dba = 2 * s[p] * At[..., p] ** 2
                dbb = 2 * s[p] * Bt[..., p] ** 2
                dz = da / den - 0.5 * z * (dba / ba + dbb / bb)
                per.append(dk_dz * dz)
            grads = [per[0]] + _reduce(per[1:], shared)
        return K, grads

    # stationary families
    l, shared = _per_dim(kern, "lengthScale", d)
    s2 = float(h["magnSigma2"])
    diff = A - B

    if fam == "periodic":
        gam = float(h["period"])
        u = pi * diff / gam
        S = 2 * np.sin(u) ** 2 / l**2
        K = s2 * np.exp(-np.sum(S, axis=-1))
        grads = []
        if want_grads:
            per = [K * 2 * S[..., k] for k in range(d)]
            dgam = K * np.sum(2 * np.sin(2 * u) * u / l**2, axis=-1)
            grads = [K.copy()] + _reduce(per, shared) + [dgam]
        return K, grads

    sk = diff**2 / l**2  # per-dimension scaled squared distances
    r2 = np.sum(sk, axis=-1)
    r = np.sqrt(r2)

    if fam == "sexp":
        K = s2 * np.exp(-0.5 * r2)
        if not want_grads:
            return K, []
        return K, [K.copy()] + _reduce([K * sk[..., k] for k in range(d)], shared)
    if fam == "exp":
        e = s2 * np.exp(-r)
        if not want_grads:
            return e, []
        g = _safe_div(e, r)
        return e, [e.copy()] + _reduce([g * sk[..., k] for k in range(d)], shared)
    if fam == "matern32":
        e = np.exp(-sqrt(3) * r)
        K = s2 * (1 + sqrt(3) * r) * e
        if not want_grads:
            return K, []
        return K, [K.copy()] + _reduce([3 * s2 * e * sk[..., k] for k in range(d)], shared)
    if fam == "matern52":
        e = np.exp(-sqrt(5) * r)
        K = s2 * (1 + sqrt(5) * r + 5 * r2 / 3) * e
        if not want_grads:
            return K, []
        g = (5 / 3) * s2 * (1 + sqrt(5) * r) * e
        return K, [K.copy()] + _reduce([g * sk[..., k] for k in range(d)], shared)
    if fam == "rq":
        al = float(h["alpha"])
        base = 1 + r2 / (2 * al)
        K = s2 * base ** (-al)
        if not want_grads:
            return K, []
        g = s2 * base ** (-al - 1)
        dal = K * (-al * np.log(base) + r2 / (2 * base))
        return K, [K.copy()] + _reduce([g * sk[..., k] for k in range(d)], shared) + [dal]
    if fam in COMPACT:
        q = int(fam[-1])
        dim = kern.nin if kern.nin is not None else d
        if dim < d:
            raise ValidationError(
                "kernel.nin", f"{fam} declared for {dim} inputs but sees {d}"
            )
        j = dim // 2 + q + 1
        val, dval = _ppcs_poly(q, j, r)
        K = s2 * val
        if not want_grads:
            return K, []
        # dK/dlog l_k = dK/dr * dr/dlog l_k = dK/dr * (-s_k / r)
        g = -s2 * _safe_div(dval, r)
        return K, [K.copy()] + _reduce([g * sk[..., k] for k in range(d)], shared)
    raise ValidationError("kernel.family", f"unsupported family {fam!r}")


# --------------------------------------------------------------------------
# parameter bookkeeping

def hyper_slots(kern, d=None):
    """List ``(kernel, name, n_elements, shared)`` for every hyperparameter group.

    Children of a ``prod`` kernel contribute their own groups in order.
    """
    if kern.family == "prod":
        out = []
        for c in kern.children:
            out.extend(hyper_slots(c, d))
        return out
    out = []
    for name, _ in HYPERS[kern.family]:
        v = kern.hyper[name]
        out.append((kern, name, int(v.size), v.ndim == 0))
    return out


def free_mask(kern):
    """Boolean mask over the gradient list of :func:`_core` marking free elements."""
    mask = []
    for k, name, size, shared in hyper_slots(kern):
        mask.extend([not k.priors[name].fixed] * size)
    return np.array(mask, dtype=bool)


def _check_x(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("inputs must be a nonempty n x d matrix")
    if not np.all(np.isfinite(X)):
        raise InputError("inputs contain non-finite values")
    return X


def _uses_sparse(kern):
    return kern.family in COMPACT


# --------------------------------------------------------------------------
# public operations

def kern_eval(kern, x, x2):
    """Covariance ``k(x, x2)`` between two input vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise InputError(f"input vectors differ in shape: {x.shape} vs {x2.shape}")
    return float(_core(kern, x, x2, False)[0])


def kern_cross_matrix(kern, X, X2):
    """Dense ``n x m`` cross-covariance between rows of X and X2."""
    X, X2 = _check_x(X), _check_x(X2)
    if X.shape[1] != X2.shape[1]:
        raise InputError(f"input dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
    return _core(kern, X[:, None, :], X2[None, :, :], False)[0]


def kern_diag(kern, X):
    """Prior variances ``k(x_i, x_i)``."""
    X = _check_x(X)
    return _core(kern, X, X, False)[0]


def kern_train_matrix(kern, X, as_sparse=None):
    """Training covariance ``K(X, X)``.

    Compactly supported kernels come back as a ``scipy.sparse`` CSC matrix
    whose structural pattern is exactly the set of pairs with scaled
    distance below one, provided fewer than half of the entries are nonzero.
    Pass ``as_sparse=False`` to force a dense array.
    """
    X = _check_x(X)
    K = _core(kern, X[:, None, :], X[None, :, :], False)[0]
    K = 0.5 * (K + K.T)
    if as_sparse is False or not _uses_sparse(kern):
        return K
    mask = support_mask(kern, X)
    if as_sparse or mask.mean() < SPARSE_FILL:
        i, j = np.nonzero(mask)
        return sparse.csc_matrix((K[i, j], (i, j)), shape=K.shape)
    return K


def support_mask(kern, X, X2=None):
    """Pairs with scaled distance < 1 for a compactly supported kernel."""
    X = _check_x(X)
    X2 = X if X2 is None else _check_x(X2)
    A, B = _active(kern, X), _active(kern, X2)
    l, _ = _per_dim(kern, "lengthScale", A.shape[1])
    r2 = np.sum(((A[:, None, :] - B[None, :, :]) / l) ** 2, axis=-1)
    return r2 < 1.0


def kern_train_matrix_grads(kern, X):
    """``dK/dw_j`` for each free hyperparameter element ``w_j = log(theta_j)``."""
    X = _check_x(X)
    _, grads = _core(kern, X[:, None, :], X[None, :, :], True)
    mask = free_mask(kern)
    return [0.5 * (g + g.T) for g, m in zip(grads, mask) if m]


def kern_cross_matrix_grads(kern, X, X2):
    X, X2 = _check_x(X), _check_x(X2)
    _, grads = _core(kern, X[:, None, :], X2[None, :, :], True)
    return [g for g, m in zip(grads, free_mask(kern)) if m]


def kern_diag_grads(kern, X):
    X = _check_x(X)
    _, grads = _core(kern, X, X, True)
    return [np.broadcast_to(g, X.shape[:1]).copy() for g, m in zip(grads, free_mask(kern)) if m]


def is_stationary(kern):
    if kern.family == "prod":
        return all(is_stationary(c) or c.family == "constant" for c in kern.children)
    return kern.family in STATIONARY or kern.family == "constant"
