"""Declarative model configuration: JSON schema, defaults and model assembly."""

import copy

import jsonschema
import numpy as np

from .errors import ValidationError
from .kernels import HYPERS, PER_DIM, Kernel
from .likelihoods import PARAMS, Likelihood
from .model import BACKENDS, SPARSE_KINDS, GPModel, MeanBasis, SparseSpec, kmeans_inducing
from .priors import FAMILIES, Prior

IA_METHODS = ("none", "map", "grid", "ccd", "is")

INFERENCE_DEFAULTS = {
    "method": "map",
    "gtol": 1e-5,
    "max_iter": 1000,
    "grid_step": 1.0,
    "grid_threshold": 2.5,
    "ccd_f0": 1.1,
    "is_samples": 200,
    "is_proposal": "gaussian",
    "is_nu": 4.0,
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"type": "array", "items": _VEC}


def _prior_schema():
    variants = [{"type": "string", "enum": sorted(FAMILIES)}]
    for fam, (_, defaults) in sorted(FAMILIES.items()):
        props = {"family": {"const": fam}}
        props.update({k: _NUM for k in defaults})
        variants.append({"type": "object", "properties": props, "required": ["family"],
                         "additionalProperties": False})
    return {"oneOf": variants}


def _kernel_schema():
    variants = []
    for fam, hypers in sorted(HYPERS.items()):
        props = {"family": {"const": fam}}
        for name, _ in hypers:
            props[name] = ({"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]}
                           if name in PER_DIM else _POS)
        props["priors"] = {"type": "object",
                           "properties": {n: {"$ref": "#/$defs/prior"} for n, _ in hypers},
                           "additionalProperties": False}
        props["selectedVariables"] = {"type": "array", "items": {"type": "integer", "minimum": 0},
                                      "minItems": 1, "uniqueItems": True}
        if fam.startswith("ppcs"):
            props["nin"] = {"type": "integer", "minimum": 1}
        if fam == "prod":
            props["children"] = {"type": "array", "items": {"$ref": "#/$defs/kernel"},
                                 "minItems": 2}
        variants.append({"type": "object", "properties": props, "required": ["family"],
                         "additionalProperties": False})
    return {"oneOf": variants}


def _likelihood_schema():
    variants = []
    for fam, params in sorted(PARAMS.items()):
        props = {"family": {"const": fam}}
        props.update({n: _POS for n, _ in params})
        props["priors"] = {"type": "object",
                           "properties": {n: {"$ref": "#/$defs/prior"} for n, _ in params},
                           "additionalProperties": False}
        variants.append({"type": "object", "properties": props, "required": ["family"],
                         "additionalProperties": False})
    return {"oneOf": variants}


def build_schema():
    """JSON schema of a model configuration (unknown keys are rejected)."""
    model = {
        "type": "object",
        "properties": {
            "kernels": {"type": "array", "items": {"$ref": "#/$defs/kernel"}, "minItems": 1},
            "likelihood": {"$ref": "#/$defs/likelihood"},
            "backend": {"enum": list(BACKENDS)},
            "jitter": {"type": "number", "minimum": 0},
            "mean": {
                "type": "object",
                "properties": {
                    "terms": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "b": _VEC, "B": {"oneOf": [_MAT, _VEC]}, "vague": {"type": "boolean"},
                },
                "required": ["terms"],
                "additionalProperties": False,
            },
            "sparse": {
                "type": "object",
                "properties": {
                    "kind": {"enum": list(SPARSE_KINDS)},
                    "Xu": _MAT,
                    "num_inducing": {"type": "integer", "minimum": 1},
                    "blocks": {"type": "array",
                               "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                    "num_blocks": {"type": "integer", "minimum": 1},
                    "optimize_inducing": {"type": "boolean"},
                    "cs_kernels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
                "required": ["kind"],
                "additionalProperties": False,
            },
            "latent_opts": {
                "type": "object",
                "properties": {
                    "laplace_max_iter": {"type": "integer", "minimum": 1},
                    "laplace_max_halvings": {"type": "integer", "minimum": 0},
                    "laplace_obj_tol": _POS, "laplace_f_tol": _POS,
                    "ep_damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "ep_tol": _POS,
                    "ep_max_sweeps": {"type": "integer", "minimum": 1},
                },
                "additionalProperties": False,
            },
        },
        "required": ["kernels"],
        "additionalProperties": False,
    }
    inference = {
        "type": "object",
        "properties": {
            "method": {"enum": list(IA_METHODS)},
            "gtol": _POS,
            "max_iter": {"type": "integer", "minimum": 1},
            "grid_step": _POS, "grid_threshold": _POS, "ccd_f0": _POS,
            "is_samples": {"type": "integer", "minimum": 1},
            "is_proposal": {"enum": ["gaussian", "student_t"]},
            "is_nu": _POS,
        },
        "additionalProperties": False,
    }
    data = {
        "type": "object",
        "properties": {
            "inputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "target": {"type": "string"},
            "exposure": {"type": "string"},
            "trials": {"type": "string"},
            "censoring": {"type": "string"},
        },
        "additionalProperties": False,
    }
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": {"model": {"$ref": "#/$defs/model"}, "inference": inference, "data": data,
                       "seed": {"type": "integer", "minimum": 0}},
        "required": ["model"],
        "additionalProperties": False,
        "$defs": {"prior": _prior_schema(), "kernel": _kernel_schema(),
                  "likelihood": _likelihood_schema(), "model": model},
    }


SCHEMA = build_schema()
_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(err):
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate_config(cfg):
    """Raise :class:`ValidationError` (code ``config.schema``) naming the bad key."""
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        # oneOf failures hide the useful message in the best-matching branch
        best = jsonschema.exceptions.best_match(errors)
        leaf = best
        while leaf.context:
            leaf = jsonschema.exceptions.best_match(leaf.context)
        raise ValidationError("config.schema", f"{_path(leaf)}: {leaf.message}")


def _prior(p):
    return Prior(p) if isinstance(p, str) else Prior.from_dict(p)


def _kernel(d):
    d = dict(d)
    fam = d.pop("family")
    priors = {k: _prior(v) for k, v in d.pop("priors", {}).items()}
    children = [_kernel(c) for c in d.pop("children", [])]
    return Kernel(fam, priors=priors, children=children, **d)


def _likelihood(d):
    d = dict(d)
    priors = {k: _prior(v) for k, v in d.pop("priors", {}).items()}
    return Likelihood(d.pop("family"), priors=priors, **d)


def _blocks_by_order(X, k):
    """Contiguous blocks along the first input column."""
    order = np.argsort(X[:, 0], kind="stable")
    return [np.sort(b) for b in np.array_split(order, min(k, X.shape[0]))]


def build_model(model_cfg, X=None, seed=0):
    """Assemble a :class:`GPModel` from the ``model`` section of a config.

    ``num_inducing`` (k-means centroids) and ``num_blocks`` (contiguous
    blocks along the first input) need the training inputs ``X``.
    """
    mc = model_cfg
    kernels = [_kernel(k) for k in mc["kernels"]]
    lik = _likelihood(mc.get("likelihood", {"family": "gaussian"}))
    mean = None
    if "mean" in mc:
        m = mc["mean"]
        mean = MeanBasis(m["terms"], m.get("b"), m.get("B"), m.get("vague", False))
    sparse = None
    if "sparse" in mc:
        s = mc["sparse"]
        if "Xu" in s:
            Xu = np.asarray(s["Xu"], dtype=float)
        elif "num_inducing" in s:
            if X is None:
                raise ValidationError("config.sparse", "num_inducing needs training inputs")
            Xu = kmeans_inducing(X, s["num_inducing"], seed)
        else:
            raise ValidationError("config.sparse", "/model/sparse: give Xu or num_inducing")
        blocks = s.get("blocks")
        if blocks is None and "num_blocks" in s:
            if X is None:
                raise ValidationError("config.sparse", "num_blocks needs training inputs")
            blocks = _blocks_by_order(X, s["num_blocks"])
        sparse = SparseSpec(s["kind"], Xu, blocks, s.get("optimize_inducing", False),
                            s.get("cs_kernels"))
    return GPModel(kernels, lik, mc.get("backend"), mean, sparse, mc.get("jitter", 0.0),
                   mc.get("latent_opts"))


def effective_config(cfg, model=None, X=None):
    """Validated copy of ``cfg`` with every default written out.

    When ``model`` is given its serialized form replaces the model section,
    which materializes hyperparameter and prior defaults.
    """
    validate_config(cfg)
    out = copy.deepcopy(cfg)
    seed = out.setdefault("seed", 0)
    inf = dict(INFERENCE_DEFAULTS)
    inf.update(out.get("inference", {}))
    out["inference"] = inf
    data = out.setdefault("data", {})
    data.setdefault("target", "y")
    if model is None:
        model = build_model(out["model"], X, seed)
    md = model.to_dict()
    md.setdefault("latent_opts", {})
    out["model"] = md
    validate_config(out)
    return out, model
