"""scikit-learn style estimator wrapping model assembly, fitting and prediction."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import hyper, inference
from .config import build_model
from .errors import ValidationError
from .exact import Prediction
from .kernels import Kernel
from .likelihoods import Likelihood
from .model import Dataset, MeanBasis, SparseSpec
from .params import pack

OPTIMIZERS = ("none", "map", "grid", "ccd", "is")


def pic_test_blocks(model, X_train, Xt):
    """Block index of every test point: that of its nearest training input."""
    tb = np.empty(X_train.shape[0], dtype=int)
    for i, b in enumerate(model.sparse.blocks):
        tb[b] = i
    d2 = np.sum((Xt[:, None, :] - X_train[None, :, :]) ** 2, axis=-1)
    return tb[np.argmin(d2, axis=1)]


class GaussianProcess(BaseEstimator):
    """Gaussian-process model with MAP or integrated hyperparameters.

    Parameters
    ----------
    kernels : str, Kernel, dict or list of them
        Additive covariance functions. Strings name a family with default
        hyperparameters; dicts follow the configuration format.
    likelihood : str, Likelihood or dict
    backend : {"exact", "laplace", "ep", "kalman"}, optional
        Defaults to exact for a Gaussian likelihood and laplace otherwise.
    mean : MeanBasis or dict, optional
    sparse : SparseSpec or dict, optional
        A dict may use ``num_inducing``/``num_blocks`` instead of explicit
        inducing inputs and blocks.
    jitter : float
    latent_opts : dict, optional
    optimizer : {"map", "none", "grid", "ccd", "is"}
        Hyperparameter treatment. The integration methods start from MAP.
    gtol, max_iter : optimizer settings
    ia_options : dict, optional
        Extra keywords for the integration routine (e.g. ``M`` for IS).
    random_state : int
        Seed for inducing-point initialization and importance sampling.

    Examples
    --------
    >>> import numpy as np
    >>> X = np.linspace(0, 1, 8)[:, None]
    >>> gp = GaussianProcess(optimizer="none").fit(X, np.sin(6 * X[:, 0]))
    >>> gp.predict(X[:2]).shape
    (2,)
    """

    def __init__(self, kernels="sexp", likelihood="gaussian", backend=None, mean=None,
                 sparse=None, jitter=0.0, latent_opts=None, optimizer="map", gtol=1e-5,
                 max_iter=1000, ia_options=None, random_state=0):
        self.kernels = kernels
        self.likelihood = likelihood
        self.backend = backend
        self.mean = mean
        self.sparse = sparse
        self.jitter = jitter
        self.latent_opts = latent_opts
        self.optimizer = optimizer
        self.gtol = gtol
        self.max_iter = max_iter
        self.ia_options = ia_options
        self.random_state = random_state

    # -- assembly ---------------------------------------------------------
    def _model_section(self):
        ks = self.kernels if isinstance(self.kernels, (list, tuple)) else [self.kernels]
        sec = {"kernels": [k.to_dict() if isinstance(k, Kernel) else
                           ({"family": k} if isinstance(k, str) else dict(k)) for k in ks]}
        lik = self.likelihood
        sec["likelihood"] = (lik.to_dict() if isinstance(lik, Likelihood) else
                             {"family": lik} if isinstance(lik, str) else dict(lik))
        if self.backend is not None:
            sec["backend"] = self.backend
        sec["jitter"] = float(self.jitter)
        if self.latent_opts:
            sec["latent_opts"] = dict(self.latent_opts)
        return sec

    def build_model(self, X=None):
        """The :class:`GPModel` described by the constructor arguments."""
        sec = self._model_section()
        mean = self.mean
        sparse = self.sparse
        if isinstance(mean, MeanBasis):
            mean_obj, mean = mean, None
        else:
            mean_obj = None
        if isinstance(sparse, SparseSpec):
            sparse_obj, sparse = sparse, None
        else:
            sparse_obj = None
        if mean is not None:
            sec["mean"] = dict(mean)
        if sparse is not None:
            sec["sparse"] = dict(sparse)
        model = build_model(sec, X, self.random_state)
        if mean_obj is not None or sparse_obj is not None:
            model = model.replace(mean=mean_obj or model.mean, sparse=sparse_obj or model.sparse)
        return model

    # -- fitting ----------------------------------------------------------
    def fit(self, X, y, exposure=None, trials=None, censoring=None):
        """Fit hyperparameters (per ``optimizer``) and the latent posterior."""
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError("estimator.optimizer", f"optimizer must be one of {OPTIMIZERS}")
        X = check_array(X, ensure_2d=True, dtype=float)
        y = check_array(np.asarray(y), ensure_2d=False, dtype=float)
        data = Dataset(X, y, exposure, trials, censoring)
        model = self.build_model(X)
        return self.fit_model(model, data)

    def fit_model(self, model, data):
        """Fit starting from an assembled model and a :class:`Dataset`."""
        self.data_ = data
        self.n_features_in_ = data.X.shape[1]
        self.map_result_ = None
        self.pset_ = None
        opt = self.optimizer
        free = len(pack(model)) > 0
        if opt != "none" and free:
            self.map_result_ = hyper.map_optimize(model, data, gtol=self.gtol,
                                                  max_iter=self.max_iter)
            model = self.map_result_.model
        self.model_ = model
        self.labels_ = pack(model).labels
        self.state_ = inference.fit(model, data)
        if opt in ("grid", "ccd", "is") and free:
            kw = dict(self.ia_options or {})
            w = pack(model).w
            if opt == "grid":
                self.pset_ = hyper.ia_grid(model, data, mode=w, **kw)
            elif opt == "ccd":
                self.pset_ = hyper.ia_ccd(model, data, mode=w, **kw)
            else:
                kw.setdefault("seed", self.random_state)
                self.pset_ = hyper.ia_is(model, data, mode=w, **kw)
        return self

    # -- prediction -------------------------------------------------------
    def _check_X(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                "input.dim", f"X has {X.shape[1]} features, the model was fit with {self.n_features_in_}"
            )
        return X

    def predict_full(self, X, y=None, predcf=None, exposure=None, trials=None, censoring=None):
        """All predictive summaries as a :class:`~gpcore.exact.Prediction`."""
        X = self._check_X(X)
        aux = {k: np.asarray(v, dtype=float).ravel() for k, v in
               (("exposure", exposure), ("trials", trials), ("censoring", censoring))
               if v is not None}
        if "exposure" not in aux and self.model_.likelihood.family in ("poisson", "negbin"):
            aux["exposure"] = np.ones(X.shape[0])
        if "censoring" not in aux and self.model_.likelihood.family == "weibull":
            aux["censoring"] = np.zeros(X.shape[0])
        yt = None if y is None else np.asarray(y, dtype=float).ravel()
        tb = None
        if self.model_.sparse is not None and self.model_.sparse.kind == "PIC":
            tb = pic_test_blocks(self.model_, self.data_.X, X)
        if self.pset_ is not None:
            if predcf is not None:
                raise ValidationError("predict.predcf", "predcf is not available with integrated hyperparameters")
            p = hyper.ia_predict(self.pset_, X, yt=yt, aux_t=aux or None, test_blocks=tb)
            return Prediction(p.Eft, p.Varft, p.Eyt, p.Varyt, p.lpyt)
        return inference.predict(self.state_, X, predcf=predcf, yt=yt, aux_t=aux or None,
                                 test_blocks=tb)

    def predict(self, X, return_std=False):
        """Predictive mean of ``y`` (and its standard deviation)."""
        p = self.predict_full(X)
        if return_std:
            return p.Eyt, np.sqrt(p.Varyt)
        return p.Eyt

    def predict_latent(self, X, predcf=None):
        """Latent predictive mean and variance."""
        p = self.predict_full(X, predcf=predcf)
        return p.Eft, p.Varft

    def predict_proba(self, X):
        """Class probabilities ``[p(y=-1), p(y=+1)]`` for probit/logit models."""
        check_is_fitted(self, "state_")
        if self.model_.likelihood.family not in ("probit", "logit"):
            raise ValidationError("predict.proba", "predict_proba needs a probit or logit likelihood")
        p1 = 0.5 * (self.predict_full(X).Eyt + 1.0)
        return np.column_stack([1.0 - p1, p1])

    def score(self, X, y, **aux):
        """Mean log predictive density of ``y`` at ``X``."""
        return float(np.mean(self.predict_full(X, y=y, **aux).lpyt))

    def log_marginal_likelihood(self):
        check_is_fitted(self, "state_")
        return inference.lml(self.state_)
