import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import gammaln

from gpcore import Likelihood, Prior, ValidationError
from gpcore.errors import InputError
from gpcore.likelihoods import (check_targets, lik_llg, lik_llg_param, lik_pred,
                                lik_tilted_moments, ll_terms)

FREE = Prior("logunif")

CASES = {
    "gaussian": (Likelihood("gaussian", sigma2=0.3), np.array([0.4, -1.2, 2.0]), {}),
    "student_t": (Likelihood("student_t", sigma2=0.2, nu=4.0, priors={"nu": FREE}),
                  np.array([0.4, -1.2, 2.0]), {}),
    "probit": (Likelihood("probit"), np.array([1.0, -1.0, 1.0]), {}),
    "logit": (Likelihood("logit"), np.array([1.0, -1.0, -1.0]), {}),
    "poisson": (Likelihood("poisson"), np.array([0.0, 3.0, 7.0]),
                {"exposure": np.array([1.0, 0.5, 2.0])}),
    "negbin": (Likelihood("negbin", disper=3.0), np.array([0.0, 3.0, 7.0]),
               {"exposure": np.array([1.0, 0.5, 2.0])}),
    "binomial": (Likelihood("binomial"), np.array([0.0, 2.0, 5.0]),
                 {"trials": np.array([3.0, 4.0, 5.0])}),
    "weibull": (Likelihood("weibull", shape=1.5), np.array([0.5, 1.3, 2.2]),
                {"censoring": np.array([0.0, 1.0, 0.0])}),
}


def _f():
    return np.array([0.3, -0.7, 1.1])


class TestDensities:
    def test_gaussian_and_t_match_scipy(self):
        y, f = np.array([0.4, -1.2]), np.array([0.1, 0.5])
        np.testing.assert_allclose(ll_terms(Likelihood("gaussian", sigma2=0.3), f, y),
                                   stats.norm(f, np.sqrt(0.3)).logpdf(y))
        np.testing.assert_allclose(ll_terms(Likelihood("student_t", sigma2=0.2, nu=4.0), f, y),
                                   stats.t(4.0, f, np.sqrt(0.2)).logpdf(y))

    def test_count_families_match_scipy(self):
        y, f, E = np.array([0.0, 3.0, 7.0]), _f(), np.array([1.0, 0.5, 2.0])
        mu = E * np.exp(f)
        np.testing.assert_allclose(ll_terms(Likelihood("poisson"), f, y, {"exposure": E}),
                                   stats.poisson(mu).logpmf(y))
        r = 3.0
        np.testing.assert_allclose(
            ll_terms(Likelihood("negbin", disper=r), f, y, {"exposure": E}),
            stats.nbinom(r, r / (r + mu)).logpmf(y))
        z = np.array([3.0, 4.0, 9.0])
        np.testing.assert_allclose(
            ll_terms(Likelihood("binomial"), f, y, {"trials": z}),
            stats.binom(z, 1 / (1 + np.exp(-f))).logpmf(y))

    @pytest.mark.parametrize("fam", ["poisson", "negbin", "binomial"])
    def test_discrete_normalized(self, fam):
        lik, _, _ = CASES[fam]
        ys = np.arange(0, 200.0)
        aux = {"exposure": np.ones(200)} if fam != "binomial" else {"trials": np.full(200, 12.0)}
        lp = ll_terms(lik, np.full(200, 0.4), ys, aux)
        if fam == "binomial":
            lp = lp[:13]
        assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-12)

    def test_weibull_normalized(self):
        lik = Likelihood("weibull", shape=1.5)
        dens = lambda y: np.exp(ll_terms(lik, np.array([0.3]), np.array([y]),
                                         {"censoring": np.zeros(1)}))[0]
        assert integrate.quad(dens, 0, np.inf)[0] == pytest.approx(1.0, abs=1e-10)
        # censored term is the survival function
        surv = integrate.quad(dens, 1.3, np.inf)[0]
        lc = ll_terms(lik, np.array([0.3]), np.array([1.3]), {"censoring": np.ones(1)})[0]
        assert np.exp(lc) == pytest.approx(surv, rel=1e-8)


class TestDerivatives:
    @pytest.mark.parametrize("fam", sorted(CASES))
    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_latent_derivatives(self, fam, order):
        lik, y, aux = CASES[fam]
        f = _f()
        h = 1e-4
        lower = (lambda v: ll_terms(lik, v, y, aux)) if order == 1 else \
            (lambda v: lik_llg(lik, v, y, aux, order - 1))
        fd = (lower(f + h) - lower(f - h)) / (2 * h)
        np.testing.assert_allclose(lik_llg(lik, f, y, aux, order), fd, rtol=1e-6, atol=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(sorted(CASES)), st.floats(-4, 4))
    def test_first_derivative_hypothesis(self, fam, f0):
        lik, y, aux = CASES[fam]
        f = np.full(3, f0)
        fd = (ll_terms(lik, f + 1e-6, y, aux) - ll_terms(lik, f - 1e-6, y, aux)) / 2e-6
        np.testing.assert_allclose(lik_llg(lik, f, y, aux, 1), fd, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("fam", ["gaussian", "student_t", "negbin", "weibull"])
    def test_parameter_derivatives(self, fam):
        lik, y, aux = CASES[fam]
        f = _f()
        names = lik.free_names()
        got = lik_llg_param(lik, f, y, aux)
        assert len(got) == len(names)
        h = 1e-6
        for (dll, dd1, dd2), name in zip(got, names):
            up = lik.replace(**{name: lik.params[name] * np.exp(h)})
            dn = lik.replace(**{name: lik.params[name] * np.exp(-h)})
            for val, fn in [(dll, lambda L: ll_terms(L, f, y, aux)),
                            (dd1, lambda L: lik_llg(L, f, y, aux, 1)),
                            (dd2, lambda L: lik_llg(L, f, y, aux, 2))]:
                np.testing.assert_allclose(val, (fn(up) - fn(dn)) / (2 * h), rtol=1e-5, atol=1e-7)

    def test_parameter_free_families(self):
        for fam in ("probit", "logit", "poisson", "binomial"):
            lik, y, aux = CASES[fam]
            assert lik_llg_param(lik, _f(), y, aux) == []

    def test_bad_order(self):
        with pytest.raises(InputError):
            lik_llg(Likelihood("probit"), _f(), np.ones(3), order=4)


def _quad_moments(lik, y, aux, m, v):
    def dens(f, p):
        return f**p * np.exp(ll_terms(lik, np.array([f]), np.array([y]), aux)[0]) \
            * stats.norm.pdf(f, m, np.sqrt(v))
    lo, hi = m - 25 * np.sqrt(v), m + 25 * np.sqrt(v)
    pts = [y] if lik.family == "student_t" and lo < y < hi else None
    q = [integrate.quad(dens, lo, hi, args=(p,), epsabs=1e-14, epsrel=1e-12, limit=400,
                        points=pts)[0] for p in range(3)]
    mean = q[1] / q[0]
    return np.log(q[0]), mean, q[2] / q[0] - mean**2


class TestTilted:
    @pytest.mark.parametrize("fam", sorted(CASES))
    def test_against_quadrature(self, fam):
        lik, y, aux = CASES[fam]
        m, v = np.array([0.2, -0.5, 0.8]), np.array([0.6, 1.5, 0.3])
        logZ, mean, var = lik_tilted_moments(lik, y, m, v, aux)
        for i in range(3):
            sub = {k: a[i:i + 1] for k, a in aux.items()}
            ref = _quad_moments(lik, y[i], sub, m[i], v[i])
            np.testing.assert_allclose([logZ[i], mean[i], var[i]], ref, rtol=1e-6, atol=1e-7)

    def test_param_gradient(self):
        lik, y, aux = CASES["negbin"]
        m, v = np.array([0.2, -0.5, 0.8]), np.array([0.6, 1.5, 0.3])
        _, _, _, g = lik_tilted_moments(lik, y, m, v, aux, param_grad=True)
        h = 1e-6
        up = lik_tilted_moments(lik.replace(disper=3.0 * np.exp(h)), y, m, v, aux)[0]
        dn = lik_tilted_moments(lik.replace(disper=3.0 * np.exp(-h)), y, m, v, aux)[0]
        np.testing.assert_allclose(g[0], (up - dn) / (2 * h), rtol=1e-5)

    def test_nonpositive_cavity(self):
        with pytest.raises(InputError):
            lik_tilted_moments(Likelihood("probit"), 1.0, 0.0, -1.0)


class TestPredictive:
    @pytest.mark.parametrize("fam", ["poisson", "negbin", "binomial", "weibull", "logit"])
    def test_moments_by_monte_carlo(self, fam):
        lik, y, aux = CASES[fam]
        rng = np.random.default_rng(3)
        m, v = np.array([0.2, -0.5, 0.8]), np.array([0.3, 0.5, 0.2])
        Ey, Vy, _ = lik_pred(lik, m, v, aux=aux)
        f = m + np.sqrt(v) * rng.standard_normal((400_000, 3))
        if fam == "poisson":
            s = rng.poisson(aux["exposure"] * np.exp(f))
        elif fam == "negbin":
            mu = aux["exposure"] * np.exp(f)
            s = rng.negative_binomial(3.0, 3.0 / (3.0 + mu))
        elif fam == "binomial":
            s = rng.binomial(aux["trials"].astype(int), 1 / (1 + np.exp(-f)))
        elif fam == "weibull":
            # survival exp(-exp(f) y^r)
            s = (rng.exponential(size=f.shape) / np.exp(f)) ** (1 / 1.5)
        else:
            s = np.where(rng.uniform(size=f.shape) < 1 / (1 + np.exp(-f)), 1.0, -1.0)
        np.testing.assert_allclose(Ey, s.mean(0), rtol=0.02, atol=0.01)
        np.testing.assert_allclose(Vy, s.var(0), rtol=0.05, atol=0.01)

    def test_probit_closed_form(self):
        Ey, Vy, lp = lik_pred(Likelihood("probit"), np.array([0.5]), np.array([2.0]),
                              y=np.array([1.0]))
        p1 = stats.norm.cdf(0.5 / np.sqrt(3.0))
        assert Ey[0] == pytest.approx(2 * p1 - 1)
        assert lp[0] == pytest.approx(np.log(p1))

    def test_zero_variance_is_plugin(self):
        lik, y, aux = CASES["poisson"]
        _, _, lp = lik_pred(lik, _f(), np.zeros(3), y=y, aux=aux)
        np.testing.assert_allclose(lp, ll_terms(lik, _f(), y, aux))


class TestTargets:
    @pytest.mark.parametrize("fam,y,aux", [
        ("probit", [1.0, 0.0], {}),
        ("poisson", [1.5, 2.0], {}),
        ("poisson", [-1.0, 2.0], {}),
        ("binomial", [3.0, 1.0], {"trials": [2.0, 2.0]}),
        ("weibull", [0.0, 1.0], {}),
        ("weibull", [1.0, 1.0], {"censoring": [0.5, 0.0]}),
        ("poisson", [1.0, 1.0], {"exposure": [0.0, 1.0]}),
    ])
    def test_domain_errors(self, fam, y, aux):
        with pytest.raises(InputError) as e:
            check_targets(Likelihood(fam), y, aux)
        assert e.value.code == "input.domain"

    def test_binomial_needs_trials(self):
        with pytest.raises(InputError) as e:
            check_targets(Likelihood("binomial"), [1.0], {})
        assert e.value.code == "input.aux"

    def test_defaults_filled(self):
        _, aux = check_targets(Likelihood("poisson"), [1.0, 2.0])
        np.testing.assert_array_equal(aux["exposure"], [1.0, 1.0])

    def test_likelihood_validation(self):
        with pytest.raises(ValidationError):
            Likelihood("gaussian", sigma2=-1.0)
        with pytest.raises(ValidationError):
            Likelihood("probit", sigma2=1.0)
        with pytest.raises(ValidationError):
            Likelihood("cauchy")

    def test_nu_fixed_by_default(self):
        assert Likelihood("student_t").free_names() == ["sigma2"]

    def test_round_trip(self):
        lik = Likelihood("negbin", disper=2.5, priors={"disper": Prior("gamma", alpha=2.0)})
        assert Likelihood.from_dict(lik.to_dict()).to_dict() == lik.to_dict()
