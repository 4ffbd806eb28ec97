import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from conftest import central_fd
from gpcore import Kernel, ValidationError, kern_cross_matrix, kern_eval, kern_train_matrix
from gpcore.kernels import (HYPERS, kern_diag, kern_diag_grads, kern_cross_matrix_grads,
                            kern_train_matrix_grads, is_stationary, support_mask)
from gpcore.params import pack, unpack
from gpcore.model import GPModel


def _kernel(fam, d):
    if fam == "prod":
        return Kernel("prod", children=[Kernel("sexp", lengthScale=[0.8] * d),
                                        Kernel("linear", coeffSigma2=0.7)])
    kw = {}
    if "lengthScale" in dict(HYPERS[fam]):
        kw["lengthScale"] = list(np.linspace(0.7, 1.3, d))
    if fam == "periodic":
        kw["period"] = 1.3
    if fam == "rq":
        kw["alpha"] = 1.7
    if fam == "neuralnetwork":
        kw["weightSigma2"] = [1.5] * d
    if fam == "linear":
        kw["coeffSigma2"] = list(np.linspace(0.5, 1.5, d))
    return Kernel(fam, **kw)


FAMILIES = [f for f in HYPERS if f != "cat"]


class TestValues:
    def test_sexp_closed_form(self):
        k = Kernel("sexp", magnSigma2=0.04, lengthScale=[1.1, 1.2])
        x, x2 = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
        ref = 0.04 * np.exp(-0.5 * ((2 / 1.1) ** 2 + (2 / 1.2) ** 2))
        assert kern_eval(k, x, x2) == pytest.approx(ref, rel=1e-14)

    @pytest.mark.parametrize("fam,fn", [
        ("exp", lambda r: np.exp(-r)),
        ("matern32", lambda r: (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)),
        ("matern52", lambda r: (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)),
    ])
    def test_matern_family(self, fam, fn):
        k = Kernel(fam, magnSigma2=1.7, lengthScale=0.6)
        r = np.linspace(0, 3, 13)
        K = kern_cross_matrix(k, np.zeros((1, 1)), (0.6 * r)[:, None])[0]
        np.testing.assert_allclose(K, 1.7 * fn(r), rtol=1e-13)

    def test_rq_tends_to_sexp(self):
        X = np.linspace(-2, 2, 9)[:, None]
        K1 = kern_train_matrix(Kernel("rq", lengthScale=0.9, alpha=1e7), X)
        K2 = kern_train_matrix(Kernel("sexp", lengthScale=0.9), X)
        np.testing.assert_allclose(K1, K2, atol=1e-8)

    def test_periodic_is_periodic(self):
        k = Kernel("periodic", lengthScale=0.7, period=1.9)
        X = np.linspace(0, 1, 5)[:, None]
        np.testing.assert_allclose(kern_cross_matrix(k, X, X + 1.9), kern_train_matrix(k, X),
                                   atol=1e-14)

    def test_linear_and_constant(self, rng):
        X = rng.normal(size=(6, 2))
        c = np.array([0.5, 2.0])
        np.testing.assert_allclose(kern_train_matrix(Kernel("linear", coeffSigma2=c), X),
                                   X @ np.diag(c) @ X.T, atol=1e-14)
        np.testing.assert_allclose(kern_train_matrix(Kernel("constant", constSigma2=0.3), X),
                                   np.full((6, 6), 0.3))

    def test_neuralnetwork_formula(self, rng):
        X = rng.normal(size=(5, 2))
        k = Kernel("neuralnetwork", biasSigma2=0.4, weightSigma2=[1.5, 0.7])
        S = np.diag([0.4, 1.5, 0.7])
        Xt = np.column_stack([np.ones(5), X])
        a = 2 * Xt @ S @ Xt.T
        b = 1 + 2 * np.einsum("ij,jk,ik->i", Xt, S, Xt)
        ref = 2 / np.pi * np.arcsin(a / np.sqrt(np.outer(b, b)))
        np.testing.assert_allclose(kern_train_matrix(k, X), ref, atol=1e-14)

    def test_cat_and_product(self):
        X = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 1.0]])
        cat = Kernel("cat", selectedVariables=[0])
        np.testing.assert_array_equal(kern_train_matrix(cat, X),
                                      [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
        s = Kernel("sexp", lengthScale=1.0, selectedVariables=[1])
        p = Kernel("prod", children=[cat, s])
        np.testing.assert_allclose(kern_train_matrix(p, X),
                                   kern_train_matrix(cat, X) * kern_train_matrix(s, X))

    def test_selected_variables(self, rng):
        X = rng.normal(size=(7, 3))
        k = Kernel("matern32", lengthScale=[0.8, 1.4], selectedVariables=[2, 0])
        ref = kern_train_matrix(Kernel("matern32", lengthScale=[0.8, 1.4]), X[:, [2, 0]])
        np.testing.assert_allclose(kern_train_matrix(k, X), ref)

    @pytest.mark.parametrize("fam", ["ppcs0", "ppcs1", "ppcs2", "ppcs3"])
    def test_compact_support(self, fam, rng):
        k = Kernel(fam, magnSigma2=1.3, lengthScale=0.5)
        X = rng.uniform(0, 5, size=(60, 1))
        K = kern_train_matrix(k, X)
        assert sparse.issparse(K)
        mask = support_mask(k, X)
        dense = kern_train_matrix(k, X, as_sparse=False)
        assert np.all(dense[~mask] == 0)
        assert np.all(dense[mask] > 0)
        np.testing.assert_allclose(K.toarray(), dense)
        np.testing.assert_allclose(np.diag(dense), 1.3)

    @pytest.mark.parametrize("fam", ["ppcs0", "ppcs1", "ppcs2", "ppcs3"])
    def test_compact_smooth_at_edge(self, fam):
        k = Kernel(fam, lengthScale=1.0)
        r = np.array([[1 - 1e-7], [1.0], [1 + 1e-7]])
        K = kern_cross_matrix(k, np.zeros((1, 1)), r)[0]
        assert K[1] == 0 and K[2] == 0 and K[0] < 1e-6


class TestProperties:
    @pytest.mark.parametrize("fam", FAMILIES)
    def test_psd_and_symmetric(self, fam, rng):
        X = rng.normal(size=(12, 2))
        K = kern_train_matrix(_kernel(fam, 2), X, as_sparse=False)
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-10 * np.abs(K).max()

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 20), st.floats(0.05, 20),
           st.sampled_from(["sexp", "exp", "matern32", "matern52", "ppcs2", "rq"]))
    def test_psd_hypothesis(self, magn, ls, fam):
        X = np.random.default_rng(0).uniform(-3, 3, size=(10, 2))
        K = kern_train_matrix(Kernel(fam, magnSigma2=magn, lengthScale=ls), X, as_sparse=False)
        assert np.linalg.eigvalsh(K).min() > -1e-9 * magn

    @pytest.mark.parametrize("fam", FAMILIES)
    def test_diag_matches_matrix(self, fam, rng):
        X = rng.normal(size=(6, 2))
        k = _kernel(fam, 2)
        np.testing.assert_allclose(kern_diag(k, X), np.diag(kern_train_matrix(k, X, as_sparse=False)),
                                   rtol=1e-12)

    @pytest.mark.parametrize("fam", FAMILIES)
    def test_gradients_fd(self, fam, rng):
        X = rng.normal(size=(6, 2))
        X2 = rng.normal(size=(4, 2))
        model = GPModel(_kernel(fam, 2))
        w = pack(model).w[:-1]  # drop the likelihood parameter
        grads = kern_train_matrix_grads(model.kernels[0], X)
        cgrads = kern_cross_matrix_grads(model.kernels[0], X, X2)
        dgrads = kern_diag_grads(model.kernels[0], X)
        assert len(grads) == w.size == len(cgrads) == len(dgrads)

        def mat(v, f):
            k = unpack(model, np.append(v, pack(model).w[-1])).kernels[0]
            return f(k)

        for j in range(w.size):
            e = np.zeros(w.size)
            e[j] = 1e-6
            for g, f in [(grads[j], lambda k: kern_train_matrix(k, X, as_sparse=False)),
                         (cgrads[j], lambda k: kern_cross_matrix(k, X, X2)),
                         (dgrads[j], lambda k: kern_diag(k, X))]:
                fd = (mat(w + e, f) - mat(w - e, f)) / 2e-6
                np.testing.assert_allclose(g, fd, atol=1e-7 * max(1, np.abs(fd).max()))

    def test_stationarity_flag(self):
        assert is_stationary(Kernel("sexp"))
        assert not is_stationary(Kernel("linear"))
        assert is_stationary(Kernel("prod", children=[Kernel("sexp"), Kernel("constant")]))


class TestValidation:
    def test_unknown_family(self):
        with pytest.raises(ValidationError) as e:
            Kernel("nope")
        assert e.value.code == "kernel.family"

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
    def test_nonpositive_hyper(self, bad):
        with pytest.raises(ValidationError) as e:
            Kernel("sexp", magnSigma2=bad)
        assert e.value.code == "kernel.positive"

    def test_unknown_hyper(self):
        with pytest.raises(ValidationError):
            Kernel("sexp", period=1.0)

    def test_prod_needs_children(self):
        with pytest.raises(ValidationError):
            Kernel("prod", children=[Kernel("sexp")])
        with pytest.raises(ValidationError):
            Kernel("sexp", children=[Kernel("sexp"), Kernel("exp")])

    def test_ard_length_mismatch(self):
        from gpcore.errors import InputError
        with pytest.raises(InputError):
            kern_train_matrix(Kernel("sexp", lengthScale=[1.0, 2.0]), np.zeros((3, 3)))

    def test_nonfinite_inputs(self):
        from gpcore.errors import InputError
        with pytest.raises(InputError):
            kern_train_matrix(Kernel("sexp"), np.array([[0.0], [np.nan]]))

    @pytest.mark.parametrize("fam", FAMILIES)
    def test_dict_round_trip(self, fam):
        k = _kernel(fam, 2)
        k2 = Kernel.from_dict(k.to_dict())
        assert k2.to_dict() == k.to_dict()
        X = np.random.default_rng(1).normal(size=(4, 2))
        np.testing.assert_array_equal(kern_train_matrix(k, X, as_sparse=False),
                                      kern_train_matrix(k2, X, as_sparse=False))
