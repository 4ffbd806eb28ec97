"""Batch command-line front end.

Subcommands: ``fit``, ``predict``, ``assess`` and ``plotdata``. Exit codes:
0 on success, 2 for invalid input (schema, CSV, model/data mismatch) and 3
for numerical failures.
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import assess, hyper, inference
from .config import build_model, effective_config, validate_config
from .errors import GPError, NumericalError, ValidationError
from .estimator import GaussianProcess
from .model import Dataset, GPModel
from .params import pack

MODEL_SCHEMA = "gpcore-model/1"
AUX_KEYS = ("exposure", "trials", "censoring")


# --------------------------------------------------------------------------
# tables

def read_csv(path):
    """Header and float matrix of a CSV file; missing values are an error."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as ex:
        raise ValidationError("input.csv", f"cannot read {path}: {ex.strerror}") from None
    if not rows or not rows[0]:
        raise ValidationError("input.csv", f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ValidationError("input.csv", f"{path}: duplicate column names")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValidationError("input.csv", f"{path}: no data rows")
    vals = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValidationError("input.csv", f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
        for j, v in enumerate(r):
            v = v.strip()
            if v == "" or v.lower() in ("na", "nan", "null"):
                raise ValidationError("input.csv", f"{path}:{i}: missing value in column {header[j]!r}")
            try:
                vals[i - 2, j] = float(v)
            except ValueError:
                raise ValidationError(
                    "input.csv", f"{path}:{i}: non-numeric value {v!r} in column {header[j]!r}"
                ) from None
    if not np.all(np.isfinite(vals)):
        raise ValidationError("input.csv", f"{path}: non-finite values")
    return header, vals


def _column(header, vals, name, path):
    if name not in header:
        raise ValidationError("input.column", f"{path}: column {name!r} not found")
    return vals[:, header.index(name)]


def _fmt(x):
    return repr(float(x))


def write_table(path, header, columns, delimiter=","):
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as ex:
        raise ValidationError("input.json", f"cannot read {path}: {ex.strerror}") from None
    except json.JSONDecodeError as ex:
        raise ValidationError("input.json", f"{path}: invalid JSON ({ex.msg} at line {ex.lineno})") from None


def _write_json(path, obj):
    text = json.dumps(obj, indent=1, sort_keys=False)
    if path is None or path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


# --------------------------------------------------------------------------
# data binding

def bind_data(cfg_data, header, vals, path, need_target=True):
    """Dataset and input-column names from a CSV per the config's bindings."""
    target = cfg_data.get("target", "y")
    aux_cols = {k: cfg_data[k] for k in AUX_KEYS if k in cfg_data}
    inputs = cfg_data.get("inputs")
    if inputs is None:
        skip = {target, *aux_cols.values()}
        inputs = [h for h in header if h not in skip]
    if not inputs:
        raise ValidationError("input.column", f"{path}: no input columns")
    X = np.column_stack([_column(header, vals, c, path) for c in inputs])
    if not need_target:
        return X, None, {}, inputs
    y = _column(header, vals, target, path)
    aux = {k: _column(header, vals, c, path) for k, c in aux_cols.items()}
    return X, y, aux, inputs


def _default_aux(lik_family, n, aux):
    aux = dict(aux)
    if lik_family in ("poisson", "negbin"):
        aux.setdefault("exposure", np.ones(n))
    return aux


# --------------------------------------------------------------------------
# model files

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def model_document(est, cfg, inputs, seed):
    """Serializable record of a fitted estimator."""
    data = est.data_
    st = est.state_
    mean, var = inference.marginals(st)
    doc = {
        "schema": MODEL_SCHEMA,
        "seed": seed,
        "config": cfg,
        "fitted_model": est.model_.to_dict(),
        "labels": list(est.labels_),
        "w": pack(est.model_).w.tolist(),
        "data": {
            "inputs": list(inputs),
            "X": data.X.tolist(),
            "y": data.y.tolist(),
            "aux": {k: v.tolist() for k, v in data.aux.items()},
        },
        "latent": {"lml": inference.lml(st), "mean": np.asarray(mean).tolist(),
                   "var": np.asarray(var).tolist()},
        "fit": None,
        "ia": None,
    }
    r = est.map_result_
    if r is not None:
        doc["fit"] = {"method": "map", "energy": r.energy, "grad_inf": float(np.max(np.abs(r.grad))),
                      "converged": r.converged, "n_iter": r.n_iter, "message": r.message,
                      "trace": list(map(float, r.trace))}
    p = est.pset_
    if p is not None:
        info = {k: _jsonable(v) for k, v in p.info.items() if k in ("ess", "seed", "proposal",
                                                                  "moment_residual", "densities")}
        doc["ia"] = {"method": p.method, "points": p.points.tolist(), "weights": p.weights.tolist(),
                     "log_post": p.log_post.tolist(), "info": info}
    return doc


def load_model(path):
    """Rebuild a fitted estimator from a model file."""
    doc = _read_json(path)
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValidationError("model.schema", f"{path}: not a {MODEL_SCHEMA} model file")
    try:
        model = GPModel.from_dict(doc["fitted_model"])
        d = doc["data"]
        data = Dataset(d["X"], d["y"], **{k: d["aux"][k] for k in d.get("aux", {})})
    except (KeyError, TypeError) as ex:
        raise ValidationError("model.schema", f"{path}: malformed model file ({ex})") from None
    est = GaussianProcess(optimizer="none", random_state=doc.get("seed", 0))
    est.fit_model(model, data)
    ia = doc.get("ia")
    if ia:
        pts = np.asarray(ia["points"], dtype=float)
        target = hyper.ModelTarget(model, data)
        fitted = hyper.parallel_map(target.fit_point, list(pts))
        est.pset_ = hyper.WeightedParamSet(
            pts, np.asarray(ia["log_post"], float), np.asarray(ia["weights"], float),
            [f[0] for f in fitted], [f[1] for f in fitted], ia["method"], dict(ia.get("info", {})),
        )
    return est, doc


# --------------------------------------------------------------------------
# commands

def cmd_fit(args):
    cfg = _read_json(args.config)
    if isinstance(cfg, dict) and cfg.get("schema") == MODEL_SCHEMA:
        # refit from a persisted model: start at its fitted values
        prev = cfg
        cfg = dict(prev["config"])
        cfg["model"] = prev["fitted_model"]
    if not isinstance(cfg, dict):
        raise ValidationError("config.schema", "/: configuration must be a JSON object")
    header, vals = read_csv(args.data)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    cfg = dict(cfg)
    cfg["seed"] = seed
    validate_config(cfg)
    X, y, aux, inputs = bind_data(cfg.get("data", {}), header, vals, args.data)
    model = build_model(cfg["model"], X, seed)
    eff, model = effective_config(cfg, model)
    eff["data"]["inputs"] = list(inputs)
    inf = eff["inference"]
    data = Dataset(X, y, **_default_aux(model.likelihood.family, y.size, aux))
    ia_opts = {}
    if inf["method"] == "grid":
        ia_opts = {"step": inf["grid_step"], "threshold": inf["grid_threshold"]}
    elif inf["method"] == "ccd":
        ia_opts = {"f0": inf["ccd_f0"]}
    elif inf["method"] == "is":
        ia_opts = {"M": inf["is_samples"], "proposal": inf["is_proposal"], "nu": inf["is_nu"]}
    est = GaussianProcess(optimizer=inf["method"], gtol=inf["gtol"], max_iter=inf["max_iter"],
                          ia_options=ia_opts, random_state=seed)
    est.fit_model(model, data)
    doc = model_document(est, eff, inputs, seed)
    _write_json(args.out, doc)
    if args.out not in (None, "-"):
        msg = {"labels": doc["labels"], "w": doc["w"], "lml": doc["latent"]["lml"]}
        if doc["fit"]:
            msg["converged"] = doc["fit"]["converged"]
        sys.stderr.write(json.dumps(msg) + "\n")
    return 0


def _parse_predcf(s, n_kernels):
    if s is None:
        return None
    try:
        idx = [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise ValidationError("input.predcf", f"--predcf must be comma-separated integers, got {s!r}") from None
    if n_kernels < 2:
        raise ValidationError("input.predcf", "--predcf needs an additive model (two or more kernels)")
    if not idx or any(i < 0 or i >= n_kernels for i in idx):
        raise ValidationError("input.predcf", f"--predcf indices must lie in 0..{n_kernels - 1}")
    return idx


def cmd_predict(args):
    est, doc = load_model(args.model)
    header, vals = read_csv(args.data)
    cfg_data = dict(doc["config"].get("data", {}))
    cfg_data["inputs"] = doc["data"]["inputs"]
    X, y, aux, inputs = bind_data(cfg_data, header, vals, args.data, need_target=args.with_targets)
    predcf = _parse_predcf(args.predcf, len(est.model_.kernels))
    p = est.predict_full(X, y=y if args.with_targets else None, predcf=predcf, **aux)
    cols = [X[:, j] for j in range(X.shape[1])] + [p.Eft, p.Varft]
    names = list(inputs) + ["Eft", "Varft"]
    if p.Eyt is not None:
        cols += [p.Eyt, p.Varyt]
        names += ["Eyt", "Varyt"]
    if p.lpyt is not None:
        cols.append(p.lpyt)
        names.append("lpyt")
    write_table(args.out, names, cols)
    return 0


def cmd_assess(args):
    est, doc = load_model(args.model)
    if args.data:
        header, vals = read_csv(args.data)
        cfg_data = dict(doc["config"].get("data", {}))
        cfg_data["inputs"] = doc["data"]["inputs"]
        X, y, aux, _ = bind_data(cfg_data, header, vals, args.data)
        data = Dataset(X, y, **_default_aux(est.model_.likelihood.family, y.size, aux))
        est.fit_model(est.model_, data)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - {"loo", "kfold", "dic", "waic"}
    if bad:
        raise ValidationError("input.methods", f"unknown assessment method(s) {sorted(bad)}")
    st = est.state_
    out = {"seed": seed, "n": int(st.y.size)}
    if "loo" in methods:
        mlpd, lpd = assess.loo_summary(st)
        out["loo"] = {"mlpd": mlpd, "lpd": lpd.tolist()}
    if "kfold" in methods:
        optimize = (doc["config"]["inference"]["method"] != "none") and not args.fixed
        cv = assess.kfold_cv(est.model_, est.data_, k=args.k, seed=seed, optimize=optimize,
                             gtol=doc["config"]["inference"]["gtol"])
        out["kfold"] = {"k": cv.k, "optimize": optimize, "mlpd": cv.mlpd, "rmse": cv.rmse,
                        "mlpd_bc": cv.mlpd_bc, "rmse_bc": cv.rmse_bc, "mlpd_var": cv.mlpd_var,
                        "mse_var": cv.mse_var, "lpd": cv.lpd.tolist(),
                        "folds": [f.tolist() for f in cv.folds]}
    if "dic" in methods:
        dic, p_d = assess.dic_latent(st)
        out["dic"] = {"dic": dic, "p_d": p_d, "peff_fast": assess.peff_fast(st)}
    if "waic" in methods:
        wv, wg, V, bu, gu = assess.waic(st)
        out["waic"] = {"waic_v": wv, "waic_g": wg, "V": V, "bu_t": bu, "gu_t": gu}
    _write_json(args.out, out)
    return 0


def _parse_grid(spec):
    axes = []
    for part in spec.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise ValidationError("input.grid", f"grid axis {part!r} must be start:stop:num")
        try:
            a, b, n = float(bits[0]), float(bits[1]), int(bits[2])
        except ValueError:
            raise ValidationError("input.grid", f"grid axis {part!r} must be start:stop:num") from None
        if n < 1 or not (np.isfinite(a) and np.isfinite(b)):
            raise ValidationError("input.grid", f"bad grid axis {part!r}")
        axes.append(np.linspace(a, b, n))
    return axes


def cmd_plotdata(args):
    est, doc = load_model(args.model)
    d = est.n_features_in_
    if d > 2:
        raise ValidationError("input.grid", "plot data is available for 1-D and 2-D inputs only")
    if args.grid:
        axes = _parse_grid(args.grid)
    else:
        Xr = est.data_.X
        if args.data:
            header, vals = read_csv(args.data)
            cfg_data = {"inputs": doc["data"]["inputs"]}
            Xr, _, _, _ = bind_data(cfg_data, header, vals, args.data, need_target=False)
        lo, hi = Xr.min(axis=0), Xr.max(axis=0)
        pad = 0.1 * np.where(hi > lo, hi - lo, 1.0)
        npts = 200 if d == 1 else 40
        axes = [np.linspace(lo[j] - pad[j], hi[j] + pad[j], npts) for j in range(d)]
    if len(axes) != d:
        raise ValidationError("input.grid", f"grid has {len(axes)} axes, the model has {d} inputs")
    if d == 1:
        x = axes[0]
        m, v = est.predict_latent(x[:, None])
        s = 2.0 * np.sqrt(v)
        write_table(args.out, ["x", "mean", "lower", "upper"], [x, m, m - s, m + s], "\t")
    else:
        g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        Xg = np.column_stack([g1.ravel(), g2.ravel()])
        m, v = est.predict_latent(Xg)
        write_table(args.out, ["x1", "x2", "mean", "var"], [Xg[:, 0], Xg[:, 1], m, v], "\t")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gpcore", description="Gaussian-process modeling from the command line.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model and write it as JSON")
    f.add_argument("--data", required=True, help="training CSV with a header row")
    f.add_argument("--config", required=True, help="model configuration JSON (or a model file)")
    f.add_argument("--out", required=True, help="output model file")
    f.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", help="predict at the rows of a CSV")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--predcf", default=None, help="comma-separated kernel indices")
    q.add_argument("--with-targets", action="store_true",
                   help="read the target column and report lpyt")
    q.set_defaults(func=cmd_predict)

    a = sub.add_parser("assess", help="LOO, k-fold CV, DIC and WAIC as JSON")
    a.add_argument("--model", required=True)
    a.add_argument("--data", default=None, help="data to assess on (default: training data)")
    a.add_argument("--methods", default="loo,kfold,dic,waic")
    a.add_argument("--k", type=int, default=10)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--fixed", action="store_true", help="hold hyperparameters fixed in k-fold CV")
    a.add_argument("--out", default=None, help="output JSON (default: stdout)")
    a.set_defaults(func=cmd_assess)

    g = sub.add_parser("plotdata", help="prediction curve or surface as TSV")
    g.add_argument("--model", required=True)
    g.add_argument("--data", default=None, help="CSV whose input range sets the default grid")
    g.add_argument("--grid", default=None, help="start:stop:num[,start:stop:num]")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as ex:
        sys.stderr.write(f"gpcore: numerical failure: {ex}\n")
        return 3
    except (ValidationError, GPError) as ex:
        sys.stderr.write(f"gpcore: {ex}\n")
        return 2
    except np.linalg.LinAlgError as ex:
        sys.stderr.write(f"gpcore: numerical failure: {ex}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
