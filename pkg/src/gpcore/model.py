"""Model assembly: datasets, mean bases, sparse specs and the GP model itself."""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ValidationError
from .kernels import COMPACT, Kernel, kern_cross_matrix, kern_diag, kern_train_matrix
from .likelihoods import Likelihood, check_targets

BACKENDS = ("exact", "laplace", "ep", "kalman")
SPARSE_KINDS = ("FIC", "PIC", "DTC", "SOR", "VAR", "CSFIC")
KALMAN_FAMILIES = {"exp", "matern32", "matern52", "constant"}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs, targets and auxiliary vectors.

    Parameters
    ----------
    X : array_like, shape (n, d)
    y : array_like, shape (n,)
    exposure, trials, censoring : array_like, optional
        Auxiliary vectors for the count and survival likelihoods.
    """

    X: np.ndarray
    y: np.ndarray
    aux: dict = field(default_factory=dict)

    def __init__(self, X, y, exposure=None, trials=None, censoring=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] == 0:
            raise InputError("X must be a nonempty n x d matrix")
        if X.shape[0] != y.size:
            raise InputError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise InputError("data contain missing or non-finite values")
        aux = {}
        for k, v in (("exposure", exposure), ("trials", trials), ("censoring", censoring)):
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.size != y.size:
                    raise InputError(f"{k} has {v.size} entries, expected {y.size}")
                aux[k] = v
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "aux", aux)

    @property
    def n(self):
        return self.X.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx],
                       **{k: v[idx] for k, v in self.aux.items()})


def _parse_term(t):
    if isinstance(t, (tuple, list)):
        kind, *rest = t
        dim = int(rest[0]) if rest else None
    else:
        kind, _, dim = str(t).partition(":")
        dim = int(dim) if dim else None
    if kind == "constant" and dim is None:
        return ("constant", None)
    if kind in ("linear", "quadratic") and dim is not None and dim >= 0:
        return (kind, dim)
    raise ValidationError("mean.term", f"bad basis term {t!r}")


@dataclass(frozen=True, eq=False)
class MeanBasis:
    """Explicit basis ``h(x)`` for a parametric mean with Gaussian weights.

    ``terms`` accepts ``"constant"``, ``"linear:k"`` and ``"quadratic:k"``
    (input column ``k``). The weights have prior ``N(b, B)`` unless ``vague``
    is set, in which case ``b`` and ``B`` are ignored.
    """

    terms: tuple
    b: np.ndarray = None
    B: np.ndarray = None
    vague: bool = False

    def __init__(self, terms, b=None, B=None, vague=False):
        terms = tuple(_parse_term(t) for t in terms)
        if not terms:
            raise ValidationError("mean.terms", "mean basis needs at least one term")
        m = len(terms)
        b = np.zeros(m) if b is None else np.asarray(b, dtype=float).ravel()
        B = np.eye(m) if B is None else np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = np.diag(B)
        if not vague:
            if b.size != m or B.shape != (m, m):
                raise ValidationError("mean.shape", "b and B must match the number of basis terms")
            if not np.allclose(B, B.T) or np.any(np.linalg.eigvalsh(0.5 * (B + B.T)) <= 0):
                raise ValidationError("mean.B", "B must be symmetric positive definite")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "vague", bool(vague))

    @property
    def m(self):
        return len(self.terms)

    def H(self, X):
        """Basis matrix with one row per basis function (m x n)."""
        X = np.asarray(X, dtype=float)
        rows = []
        for kind, dim in self.terms:
            if kind == "constant":
                rows.append(np.ones(X.shape[0]))
                continue
            if dim >= X.shape[1]:
                raise InputError(f"mean basis refers to column {dim} of a {X.shape[1]}-column input")
            rows.append(X[:, dim] if kind == "linear" else X[:, dim] ** 2)
        return np.vstack(rows)

    def to_dict(self):
        terms = ["constant" if k == "constant" else f"{k}:{d}" for k, d in self.terms]
        return {"terms": terms, "b": self.b.tolist(), "B": self.B.tolist(), "vague": self.vague}

    @classmethod
    def from_dict(cls, d):
        return cls(d["terms"], d.get("b"), d.get("B"), d.get("vague", False))


@dataclass(frozen=True, eq=False)
class SparseSpec:
    """Sparse approximation settings.

    Parameters
    ----------
    kind : {"FIC", "PIC", "DTC", "SOR", "VAR", "CSFIC"}
    Xu : array_like, shape (m, d)
        Inducing inputs.
    blocks : list of index arrays, optional
        PIC partition of the training indices.
    optimize_inducing : bool
        Treat the inducing inputs as free parameters.
    cs_kernels : sequence of int, optional
        CSFIC: indices of the compactly supported kernels (default: all
        ``ppcs`` kernels in the model).
    """

    kind: str
    Xu: np.ndarray
    blocks: tuple = None
    optimize_inducing: bool = False
    cs_kernels: tuple = None

    def __init__(self, kind, Xu, blocks=None, optimize_inducing=False, cs_kernels=None):
        if kind not in SPARSE_KINDS:
            raise ValidationError("sparse.kind", f"unknown sparse kind {kind!r}")
        Xu = np.asarray(Xu, dtype=float)
        if Xu.ndim == 1:
            Xu = Xu[:, None]
        if Xu.ndim != 2 or Xu.shape[0] < 1 or not np.all(np.isfinite(Xu)):
            raise ValidationError("sparse.Xu", "inducing inputs must be a finite m x d matrix, m >= 1")
        if blocks is not None:
            blocks = tuple(np.asarray(b, dtype=int).ravel() for b in blocks)
        if kind == "PIC" and blocks is None:
            raise ValidationError("sparse.blocks", "PIC needs a block partition")
        if cs_kernels is not None:
            cs_kernels = tuple(int(i) for i in cs_kernels)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "Xu", Xu)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "optimize_inducing", bool(optimize_inducing))
        object.__setattr__(self, "cs_kernels", cs_kernels)

    def with_Xu(self, Xu):
        return SparseSpec(self.kind, Xu, self.blocks, self.optimize_inducing, self.cs_kernels)

    def to_dict(self):
        d = {"kind": self.kind, "Xu": self.Xu.tolist(), "optimize_inducing": self.optimize_inducing}
        if self.blocks is not None:
            d["blocks"] = [b.tolist() for b in self.blocks]
        if self.cs_kernels is not None:
            d["cs_kernels"] = list(self.cs_kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["Xu"], d.get("blocks"), d.get("optimize_inducing", False),
                   d.get("cs_kernels"))


def kmeans_inducing(X, m, seed=0, iters=50):
    """Centroids of a seeded Lloyd iteration, used as default inducing inputs."""
    from scipy.cluster.vq import kmeans2

    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m = min(int(m), X.shape[0])
    rng = np.random.default_rng(seed)
    init = X[rng.choice(X.shape[0], m, replace=False)]
    cent, _ = kmeans2(X, init, iter=iters, minit="matrix", missing="raise") if m > 1 else (init, None)
    return cent


@dataclass(frozen=True, eq=False)
class GPModel:
    """A GP model: additive kernels, likelihood, inference backend and extras.

    Parameters
    ----------
    kernels : Kernel or sequence of Kernel
        Summed covariance functions, in declaration order.
    likelihood : Likelihood
    backend : {"exact", "laplace", "ep", "kalman"}
    mean : MeanBasis, optional
        Only with the exact backend.
    sparse : SparseSpec, optional
        Only with a Gaussian likelihood and the exact backend.
    jitter : float
        Diagonal inflation added to prior covariances.
    latent_opts : dict, optional
        Overrides for the Laplace/EP iteration settings.
    """

    kernels: tuple
    likelihood: Likelihood = field(default_factory=Likelihood)
    backend: str = "exact"
    mean: MeanBasis = None
    sparse: SparseSpec = None
    jitter: float = 0.0
    latent_opts: dict = field(default_factory=dict)

    def __init__(self, kernels, likelihood=None, backend=None, mean=None, sparse=None,
                 jitter=0.0, latent_opts=None):
        if isinstance(kernels, Kernel):
            kernels = (kernels,)
        kernels = tuple(kernels)
        likelihood = Likelihood("gaussian") if likelihood is None else likelihood
        if backend is None:
            backend = "exact" if likelihood.family == "gaussian" else "laplace"
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "likelihood", likelihood)
        object.__setattr__(self, "backend", backend)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sparse", sparse)
        object.__setattr__(self, "jitter", float(jitter))
        object.__setattr__(self, "latent_opts", dict(latent_opts or {}))
        _check_static(self)

    def replace(self, **changes):
        d = dict(kernels=self.kernels, likelihood=self.likelihood, backend=self.backend,
                 mean=self.mean, sparse=self.sparse, jitter=self.jitter,
                 latent_opts=self.latent_opts)
        d.update(changes)
        return GPModel(**d)

    def to_dict(self):
        d = {
            "kernels": [k.to_dict() for k in self.kernels],
            "likelihood": self.likelihood.to_dict(),
            "backend": self.backend,
            "jitter": self.jitter,
        }
        if self.mean is not None:
            d["mean"] = self.mean.to_dict()
        if self.sparse is not None:
            d["sparse"] = self.sparse.to_dict()
        if self.latent_opts:
            d["latent_opts"] = dict(self.latent_opts)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            [Kernel.from_dict(k) for k in d["kernels"]],
            Likelihood.from_dict(d.get("likelihood", {"family": "gaussian"})),
            d.get("backend"),
            MeanBasis.from_dict(d["mean"]) if d.get("mean") else None,
            SparseSpec.from_dict(d["sparse"]) if d.get("sparse") else None,
            d.get("jitter", 0.0),
            d.get("latent_opts"),
        )


def _kalman_ok(k):
    return k.family in KALMAN_FAMILIES


def _check_static(model):
    if not model.kernels:
        raise ValidationError("model.kernels", "at least one kernel is required")
    if not all(isinstance(k, Kernel) for k in model.kernels):
        raise ValidationError("model.kernels", "kernels must be Kernel objects")
    if not isinstance(model.likelihood, Likelihood):
        raise ValidationError("model.likelihood", "likelihood must be a Likelihood")
    if model.backend not in BACKENDS:
        raise ValidationError("model.backend", f"unknown backend {model.backend!r}")
    if not (np.isfinite(model.jitter) and model.jitter >= 0):
        raise ValidationError("model.jitter", "jitter must be a nonnegative number")
    gauss = model.likelihood.family == "gaussian"
    if model.backend == "exact" and not gauss:
        raise ValidationError(
            "model.exact_likelihood",
            f"the exact backend needs a gaussian likelihood, got {model.likelihood.family}",
        )
    if model.backend == "kalman":
        if not gauss:
            raise ValidationError("model.kalman_likelihood", "the kalman backend needs a gaussian likelihood")
        bad = [k.family for k in model.kernels if not _kalman_ok(k)]
        if bad:
            raise ValidationError(
                "model.kalman_kernel",
                f"kernel families {bad} have no state-space form; use the exact backend",
            )
    if model.mean is not None and model.backend != "exact":
        raise ValidationError("model.mean_backend", "mean functions are supported only with the exact backend")
    if model.mean is not None and model.sparse is not None:
        raise ValidationError("model.mean_sparse", "mean functions cannot be combined with sparse approximations")
    if model.sparse is not None:
        if not gauss:
            raise ValidationError("model.sparse_likelihood", "sparse approximations need a gaussian likelihood")
        if model.backend != "exact":
            raise ValidationError("model.sparse_backend", "sparse approximations use the exact backend")
        if model.sparse.kind == "CSFIC":
            cs = cs_kernel_indices(model)
            if not cs or len(cs) == len(model.kernels):
                raise ValidationError(
                    "sparse.csfic", "CSFIC needs at least one global and one compactly supported kernel"
                )
            if any(model.kernels[i].family not in COMPACT for i in cs):
                raise ValidationError("sparse.csfic", "CSFIC local kernels must be ppcs kernels")


def cs_kernel_indices(model):
    sp = model.sparse
    if sp is not None and sp.cs_kernels is not None:
        return tuple(sp.cs_kernels)
    return tuple(i for i, k in enumerate(model.kernels) if k.family in COMPACT)


def validate(model, data):
    """Check a model against a dataset; returns ``(model, y, aux)``.

    Raises :class:`~gpcore.errors.ValidationError` with a distinct ``code``
    for each violated invariant.
    """
    _check_static(model)
    X = data.X
    d = X.shape[1]
    for k in model.kernels:
        _check_kernel_dims(k, d)
    if model.backend == "kalman" and d != 1:
        raise ValidationError("model.kalman_dim", f"the kalman backend needs 1-D inputs, got d={d}")
    if model.mean is not None:
        model.mean.H(X[:1])
    sp = model.sparse
    if sp is not None:
        if sp.Xu.shape[1] != d:
            raise ValidationError("sparse.Xu", f"inducing inputs have {sp.Xu.shape[1]} columns, data {d}")
        if sp.kind == "PIC":
            allidx = np.concatenate(sp.blocks) if sp.blocks else np.array([], int)
            if allidx.size != data.n or not np.array_equal(np.sort(allidx), np.arange(data.n)):
                raise ValidationError("sparse.blocks", "PIC blocks must partition the training indices")
        if sp.kind == "CSFIC" and any(i >= len(model.kernels) for i in cs_kernel_indices(model)):
            raise ValidationError("sparse.csfic", "cs_kernels index out of range")
    y, aux = check_targets(model.likelihood, data.y, data.aux)
    return model, y, aux


def _check_kernel_dims(k, d):
    if k.family == "prod":
        for c in k.children:
            _check_kernel_dims(c, d)
        return
    if k.selectedVariables is not None and max(k.selectedVariables) >= d:
        raise ValidationError(
            "kernel.selectedVariables", f"selectedVariables {list(k.selectedVariables)} exceed d={d}"
        )
    active = d if k.selectedVariables is None else len(k.selectedVariables)
    for name, v in k.hyper.items():
        if v.ndim == 1 and v.size != active:
            raise ValidationError(
                "kernel.ard", f"{k.family}.{name} has {v.size} entries for {active} active inputs"
            )
    if k.family in COMPACT and k.nin is not None and k.nin < active:
        raise ValidationError("kernel.nin", f"{k.family} nin={k.nin} below {active} active inputs")


def _select(model, predcf):
    if predcf is None:
        return model.kernels
    idx = [int(i) for i in np.atleast_1d(predcf)]
    if any(i < 0 or i >= len(model.kernels) for i in idx):
        raise InputError(f"predcf {idx} out of range for {len(model.kernels)} kernels")
    return [model.kernels[i] for i in idx]


def _dense(K):
    return K.toarray() if hasattr(K, "toarray") else K


def total_train_cov(model, X, predcf=None, jitter=True):
    """Sum of the selected kernels' training matrices plus jitter on the diagonal."""
    X = np.asarray(X, dtype=float)
    K = sum(_dense(kern_train_matrix(k, X)) for k in _select(model, predcf))
    if jitter and model.jitter:
        K = K + model.jitter * np.eye(X.shape[0])
    return K


def total_cross_cov(model, X, X2, predcf=None):
    return sum(kern_cross_matrix(k, X, X2) for k in _select(model, predcf))


def total_diag(model, X, predcf=None):
    return sum(kern_diag(k, X) for k in _select(model, predcf))
