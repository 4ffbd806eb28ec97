import numpy as np
import pytest
from scipy.linalg import expm

from conftest import rel_err
from gpcore import Dataset, GPModel, Kernel, Likelihood, ValidationError
from gpcore.errors import InputError
from gpcore.exact import exact_fit, exact_lml, exact_lml_grad, exact_predict
from gpcore import inference
from gpcore.kernels import kern_cross_matrix
from gpcore.statespace import discretize, kalman_fit_predict, to_statespace

FAMS = ["exp", "matern32", "matern52"]


class TestStateSpaceForm:
    @pytest.mark.parametrize("fam", FAMS)
    def test_lyapunov(self, fam):
        ss = to_statespace(Kernel(fam, magnSigma2=1.7, lengthScale=0.6))
        assert ss.lyapunov_residual() < 1e-10 * np.abs(ss.Pinf).max() * 10
        assert (ss.H @ ss.Pinf @ ss.H.T)[0, 0] == pytest.approx(1.7, rel=1e-12)

    @pytest.mark.parametrize("fam", FAMS)
    def test_covariance_function(self, fam):
        """H expm(F tau) Pinf H^T reproduces k(tau)."""
        k = Kernel(fam, magnSigma2=1.3, lengthScale=0.8)
        ss = to_statespace(k)
        taus = np.linspace(0, 4, 9)
        got = [(ss.H @ expm(ss.F * t) @ ss.Pinf @ ss.H.T)[0, 0] for t in taus]
        ref = kern_cross_matrix(k, np.zeros((1, 1)), taus[:, None])[0]
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-14)

    def test_sum_is_block_diagonal(self):
        ss = to_statespace([Kernel("matern32"), Kernel("exp"), Kernel("constant", constSigma2=0.4)])
        assert ss.dim == 4
        np.testing.assert_array_equal(ss.H, [[1, 0, 1, 1]])

    def test_discretize_limits(self):
        ss = to_statespace(Kernel("matern52", lengthScale=0.5))
        A, Q = discretize(ss, 0.0)
        np.testing.assert_allclose(A, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(Q, 0, atol=1e-15)
        A, Q = discretize(ss, 1e3)
        np.testing.assert_allclose(A, 0, atol=1e-12)
        np.testing.assert_allclose(Q, ss.Pinf, atol=1e-12)
        A, Q = discretize(ss, np.array([0.1, 0.2]))
        assert A.shape == (2, 3, 3) and Q.shape == (2, 3, 3)
        with pytest.raises(InputError):
            discretize(ss, -0.1)

    def test_no_state_space_form(self):
        with pytest.raises(ValidationError):
            to_statespace(Kernel("sexp"))


def _data(seed, n=60, dup=False):
    r = np.random.default_rng(seed)
    t = r.uniform(0, 10, n)
    if dup:
        t[1::7] = t[::7][: t[1::7].size]
    y = np.sin(t) + 0.3 * r.standard_normal(n)
    return Dataset(t, y), r.uniform(-1, 11, 12)


class TestKalman:
    @pytest.mark.parametrize("kern", [
        [Kernel("matern52", magnSigma2=1.2, lengthScale=0.9)],
        [Kernel("matern32", magnSigma2=0.8, lengthScale=1.5), Kernel("exp", magnSigma2=0.2,
                                                                     lengthScale=0.3)],
        [Kernel("matern32"), Kernel("constant", constSigma2=0.5)],
    ])
    def test_matches_exact(self, kern):
        d, tt = _data(1, dup=True)
        lik = Likelihood("gaussian", sigma2=0.1)
        se = exact_fit(GPModel(kern, lik), d)
        r = kalman_fit_predict(GPModel(kern, lik, backend="kalman"), d, tt)
        pe = exact_predict(se, tt)
        assert r.lml == pytest.approx(exact_lml(se), abs=1e-8)
        np.testing.assert_allclose(r.mean_t, pe.Eft, atol=1e-8)
        np.testing.assert_allclose(r.var_t, pe.Varft, atol=1e-8)

    def test_gradient(self):
        d, _ = _data(2)
        kern = Kernel("matern32", magnSigma2=1.1, lengthScale=1.2)
        lik = Likelihood("gaussian", sigma2=0.1)
        g = inference.lml_grad(inference.fit(GPModel(kern, lik, backend="kalman"), d))
        assert rel_err(g, exact_lml_grad(exact_fit(GPModel(kern, lik), d))) < 1e-6

    def test_predict_through_dispatch(self):
        d, tt = _data(3)
        kern = Kernel("exp", lengthScale=2.0)
        st = inference.fit(GPModel(kern, backend="kalman"), d)
        p = inference.predict(st, tt[:, None], yt=np.zeros(12))
        pe = exact_predict(exact_fit(GPModel(kern), d), tt, yt=np.zeros(12))
        np.testing.assert_allclose(p.lpyt, pe.lpyt, atol=1e-8)
        m, v = inference.marginals(st)
        np.testing.assert_allclose(m, exact_predict(exact_fit(GPModel(kern), d), d.X).Eft,
                                   atol=1e-8)

    def test_validation(self):
        with pytest.raises(ValidationError):
            GPModel(Kernel("sexp"), backend="kalman")
        with pytest.raises(ValidationError):
            GPModel(Kernel("matern32"), Likelihood("probit"), backend="kalman")
        with pytest.raises(ValidationError):
            inference.fit(GPModel(Kernel("matern32"), backend="kalman"),
                          Dataset(np.zeros((3, 2)), np.zeros(3)))
