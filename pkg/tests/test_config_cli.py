import csv
import json

import numpy as np
import pytest

from gpcore import ValidationError
from gpcore.cli import main, read_csv
from gpcore.config import build_model, effective_config, validate_config

PROPER = {
    "kernels": [
        {"family": "sexp", "priors": {"magnSigma2": {"family": "sqrtt", "s2": 4},
                                      "lengthScale": {"family": "t", "s2": 4}}},
        {"family": "linear", "priors": {"coeffSigma2": {"family": "sqrtt", "s2": 4}}},
    ],
    "likelihood": {"family": "gaussian", "sigma2": 0.1},
}


class TestConfig:
    def test_error_names_path(self):
        with pytest.raises(ValidationError) as e:
            validate_config({"model": {"kernels": [{"family": "sexp", "lengthscale": 1}]}})
        assert e.value.code == "config.schema"
        assert "/model/kernels/0" in str(e.value)

    @pytest.mark.parametrize("cfg", [
        {},
        {"model": {"kernels": []}},
        {"model": {"kernels": [{"family": "sexp", "magnSigma2": -1}]}},
        {"model": {"kernels": [{"family": "sexp"}]}, "inference": {"method": "mcmc"}},
        {"model": {"kernels": [{"family": "sexp"}]}, "extra": 1},
    ])
    def test_rejected(self, cfg):
        with pytest.raises(ValidationError):
            validate_config(cfg)

    def test_effective_defaults(self):
        eff, model = effective_config({"model": {"kernels": [{"family": "matern32"}]}})
        assert eff["seed"] == 0 and eff["inference"]["method"] == "map"
        assert eff["data"]["target"] == "y"
        k = eff["model"]["kernels"][0]
        assert k["priors"]["lengthScale"]["family"] == "logunif"
        assert eff["model"]["likelihood"]["family"] == "gaussian"
        # the effective config rebuilds the same model
        assert build_model(eff["model"]).to_dict() == model.to_dict()

    def test_build_sparse(self):
        X = np.random.default_rng(0).uniform(size=(30, 2))
        m = build_model({"kernels": [{"family": "sexp"}],
                         "sparse": {"kind": "PIC", "num_inducing": 5, "num_blocks": 3}}, X)
        assert m.sparse.Xu.shape == (5, 2) and len(m.sparse.blocks) == 3
        with pytest.raises(ValidationError):
            build_model({"kernels": [{"family": "sexp"}], "sparse": {"kind": "FIC",
                                                                    "num_inducing": 5}})


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def files(tmp_path):
    r = np.random.default_rng(3)
    X = r.uniform(0, 5, 25)
    y = np.sin(X) + 0.3 * X + 0.2 * r.standard_normal(25)
    _write_csv(tmp_path / "train.csv", ["x", "y"], np.column_stack([X, y]))
    _write_csv(tmp_path / "test.csv", ["x", "y"], [[0.5, 0.4], [2.5, 1.3]])
    (tmp_path / "cfg.json").write_text(json.dumps({"model": PROPER}))
    return tmp_path


def _run(*argv):
    return main([str(a) for a in argv])


class TestCli:
    def test_fit_predict(self, files):
        t = files
        assert _run("fit", "--data", t / "train.csv", "--config", t / "cfg.json",
                    "--out", t / "m.json") == 0
        doc = json.loads((t / "m.json").read_text())
        assert doc["schema"] == "gpcore-model/1" and doc["data"]["inputs"] == ["x"]
        assert _run("predict", "--model", t / "m.json", "--data", t / "test.csv",
                    "--out", t / "p.csv", "--with-targets") == 0
        h, v = read_csv(t / "p.csv")
        assert h == ["x", "Eft", "Varft", "Eyt", "Varyt", "lpyt"] and v.shape == (2, 6)
        assert np.all(v[:, 4] > v[:, 2])
        # additive components sum to the full latent mean
        parts = []
        for i in (0, 1):
            assert _run("predict", "--model", t / "m.json", "--data", t / "test.csv",
                        "--out", t / f"p{i}.csv", "--predcf", i) == 0
            parts.append(read_csv(t / f"p{i}.csv")[1][:, 1])
        np.testing.assert_allclose(parts[0] + parts[1], v[:, 1], atol=1e-10)

    def test_refit_from_model_file(self, files):
        t = files
        _run("fit", "--data", t / "train.csv", "--config", t / "cfg.json", "--out", t / "m.json")
        assert _run("fit", "--data", t / "train.csv", "--config", t / "m.json",
                    "--out", t / "m2.json") == 0
        a = json.loads((t / "m.json").read_text())
        b = json.loads((t / "m2.json").read_text())
        np.testing.assert_allclose(a["w"], b["w"], atol=1e-4)
        assert b["fit"]["n_iter"] <= 2

    def test_assess_and_plotdata(self, files):
        t = files
        _run("fit", "--data", t / "train.csv", "--config", t / "cfg.json", "--out", t / "m.json")
        assert _run("assess", "--model", t / "m.json", "--methods", "loo,dic,waic,kfold",
                    "--k", 5, "--fixed", "--out", t / "a.json") == 0
        a = json.loads((t / "a.json").read_text())
        assert set(a) >= {"loo", "dic", "waic", "kfold"} and len(a["loo"]["lpd"]) == 25
        assert a["kfold"]["optimize"] is False
        assert _run("plotdata", "--model", t / "m.json", "--grid=-1:6:15",
                    "--out", t / "g.tsv") == 0
        rows = (t / "g.tsv").read_text().splitlines()
        assert rows[0].split("\t") == ["x", "mean", "lower", "upper"] and len(rows) == 16

    def test_ccd(self, files):
        t = files
        cfg = {"model": PROPER, "inference": {"method": "ccd"}}
        (t / "c.json").write_text(json.dumps(cfg))
        assert _run("fit", "--data", t / "train.csv", "--config", t / "c.json",
                    "--out", t / "m.json") == 0
        doc = json.loads((t / "m.json").read_text())
        assert doc["ia"]["method"] == "ccd"
        assert _run("predict", "--model", t / "m.json", "--data", t / "test.csv",
                    "--out", t / "p.csv") == 0

    def test_exit_codes(self, files, capsys):
        t = files
        (t / "bad.json").write_text(json.dumps({"model": {"kernels": [{"family": "nope"}]}}))
        assert _run("fit", "--data", t / "train.csv", "--config", t / "bad.json",
                    "--out", t / "m.json") == 2
        (t / "tgt.json").write_text(json.dumps({"model": PROPER, "data": {"target": "z"}}))
        assert _run("fit", "--data", t / "train.csv", "--config", t / "tgt.json",
                    "--out", t / "m.json") == 2
        _write_csv(t / "na.csv", ["x", "y"], [[1, "NA"], [2, 3]])
        assert _run("fit", "--data", t / "na.csv", "--config", t / "cfg.json",
                    "--out", t / "m.json") == 2
        assert "missing value" in capsys.readouterr().err
        # flat priors leave the length scale unidentified: CCD refuses
        flat = {"model": {"kernels": [{"family": "sexp", "lengthScale": [1.0, 1.0]}],
                          "likelihood": {"family": "gaussian", "sigma2": 0.1,
                                         "priors": {"sigma2": "fixed"}}},
                "inference": {"method": "ccd"}}
        r = np.random.default_rng(1)
        X = r.uniform(0, 5, 25)
        _write_csv(t / "two.csv", ["x", "z", "y"],
                   np.column_stack([X, np.zeros(25), np.sin(X)]))
        (t / "flat.json").write_text(json.dumps(flat))
        assert _run("fit", "--data", t / "two.csv", "--config", t / "flat.json",
                    "--out", t / "m.json") == 3

    def test_predcf_needs_additive(self, files):
        t = files
        (t / "one.json").write_text(json.dumps({"model": {"kernels": [{"family": "sexp"}]},
                                                "inference": {"method": "none"}}))
        _run("fit", "--data", t / "train.csv", "--config", t / "one.json", "--out", t / "m.json")
        assert _run("predict", "--model", t / "m.json", "--data", t / "test.csv",
                    "--out", t / "p.csv", "--predcf", 0) == 2
