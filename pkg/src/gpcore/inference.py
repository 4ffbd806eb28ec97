"""Backend dispatch: one entry point per operation for every model kind."""

import numpy as np

from . import ep, exact, laplace, sparse, statespace
from .errors import ValidationError
from .likelihoods import lik_pred
from .model import validate


def _route(model):
    if model.sparse is not None:
        return "sparse"
    return model.backend


def fit(model, data):
    """Fit the latent posterior with the model's backend; returns a state."""
    model, _, _ = validate(model, data)
    r = _route(model)
    if r == "sparse":
        return sparse.sparse_fit(model, data)
    if r == "exact":
        return exact.exact_fit(model, data)
    if r == "laplace":
        return laplace.laplace_fit(model, data)
    if r == "ep":
        return ep.ep_fit(model, data)
    return statespace.kalman_fit(model, data)


def _kind(state):
    if isinstance(state, sparse.SparseState):
        return "sparse"
    if isinstance(state, exact.ExactState):
        return "exact"
    if isinstance(state, laplace.LaplaceState):
        return "laplace"
    if isinstance(state, ep.EPState):
        return "ep"
    if isinstance(state, statespace.KalmanState):
        return "kalman"
    raise TypeError(f"unknown state type {type(state).__name__}")


def lml(state):
    """(Approximate) log marginal likelihood of a fitted state."""
    return {
        "sparse": sparse.sparse_lml,
        "exact": exact.exact_lml,
        "laplace": laplace.laplace_lml,
        "ep": ep.ep_lml,
        "kalman": statespace.kalman_lml,
    }[_kind(state)](state)


def lml_grad(state):
    """Gradient of :func:`lml` w.r.t. the packed parameter vector."""
    return {
        "sparse": sparse.sparse_lml_grad,
        "exact": exact.exact_lml_grad,
        "laplace": laplace.laplace_lml_grad,
        "ep": ep.ep_lml_grad,
        "kalman": statespace.kalman_lml_grad,
    }[_kind(state)](state)


def lml_and_grad(model, data):
    state = fit(model, data)
    return lml(state), lml_grad(state)


def predict(state, Xt, predcf=None, yt=None, aux_t=None, test_blocks=None):
    """Predictive summaries at ``Xt`` as a :class:`~gpcore.exact.Prediction`.

    ``test_blocks`` is required for PIC; ``predcf`` is not available for
    sparse and state-space models.
    """
    k = _kind(state)
    if predcf is not None and k in ("sparse", "kalman"):
        raise ValidationError("predict.predcf", f"predcf is not supported for {k} models")
    if k == "sparse":
        return sparse.sparse_predict(state, Xt, test_blocks, yt, aux_t)
    if k == "exact":
        return exact.exact_predict(state, Xt, predcf, yt, aux_t=aux_t)
    if k == "laplace":
        return laplace.laplace_predict(state, Xt, predcf, yt, aux_t)
    if k == "ep":
        return ep.ep_predict(state, Xt, predcf, yt, aux_t)
    return statespace.kalman_predict(state, Xt, yt, aux_t)


def marginals(state):
    """Posterior latent mean and variance at the training inputs."""
    return {
        "sparse": sparse.sparse_marginals,
        "exact": _exact_marginals,
        "laplace": laplace.laplace_marginals,
        "ep": ep.ep_marginals,
        "kalman": statespace.kalman_marginals,
    }[_kind(state)](state)


def _exact_marginals(state):
    p = exact.exact_predict(state, state.data.X)
    return p.Eft, p.Varft


def loo(state):
    """Leave-one-out log predictive densities ``log p(y_i | D_{-i})``.

    Exact models use the analytic formula, EP the cavity distributions and
    Laplace the cavities implied by its Gaussian site approximation.
    """
    k = _kind(state)
    if k == "exact":
        return exact.exact_loo(state)[2]
    if k == "ep":
        return ep.ep_loo(state)[2]
    if k == "laplace":
        S = np.diag(state.Sigma)
        W = state.W
        with np.errstate(divide="ignore", invalid="ignore"):
            v = 1.0 / (1.0 / S - W)
            m = v * (state.f / S - W * state.f - state.dlp)
        if np.any(~(v > 0)):
            raise ValidationError("loo.cavity", "Laplace LOO cavity variance is not positive")
        return lik_pred(state.model.likelihood, m, v, state.y, state.aux)[2]
    raise ValidationError("loo.backend", f"LOO is not available for {k} models; use kfold")
