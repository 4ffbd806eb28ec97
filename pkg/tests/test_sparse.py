import numpy as np
import pytest
from scipy.stats import multivariate_normal

from gpcore import Dataset, GPModel, Kernel, Likelihood, SparseSpec, ValidationError
from gpcore.errors import InputError
from gpcore.kernels import kern_cross_matrix, kern_diag, kern_train_matrix
from gpcore.sparse import sparse_fit, sparse_lml, sparse_marginals, sparse_predict

S2 = 0.1
K1 = Kernel("sexp", magnSigma2=1.2, lengthScale=[0.8, 1.5])
KCS = Kernel("ppcs2", magnSigma2=0.3, lengthScale=[1.0, 1.2])
BLOCKS = [np.arange(0, 9), np.arange(9, 21), np.arange(21, 30)]


@pytest.fixture
def setup():
    r = np.random.default_rng(11)
    X = r.uniform(0, 3, (30, 2))
    y = np.sin(2 * X[:, 0]) + 0.3 * r.standard_normal(30)
    Xu = X[r.choice(30, 7, replace=False)] + 0.03
    Xt = r.uniform(0, 3, (6, 2))
    return Dataset(X, y), Xu, Xt


def _oracle(kind, d, Xu, Xt, tb=None):
    """Dense prior covariance, evidence and predictions for a sparse kind."""
    X, y = d.X, d.y
    n = y.size
    Kuu = kern_train_matrix(K1, Xu)
    Kfu = kern_cross_matrix(K1, X, Xu)
    Ksu = kern_cross_matrix(K1, Xt, Xu)
    Kff = kern_train_matrix(K1, X)
    Q = Kfu @ np.linalg.solve(Kuu, Kfu.T)
    Qsf = Ksu @ np.linalg.solve(Kuu, Kfu.T)
    cross = Qsf.copy()
    kss = kern_diag(K1, Xt)
    if kind == "FIC":
        Lam = np.diag(np.diag(Kff - Q))
    elif kind == "PIC":
        Lam = np.zeros((n, n))
        for bi, b in enumerate(BLOCKS):
            Lam[np.ix_(b, b)] = (Kff - Q)[np.ix_(b, b)]
            rows = np.nonzero(tb == bi)[0]
            cross[np.ix_(rows, b)] = kern_cross_matrix(K1, Xt[rows], X[b])
    elif kind == "CSFIC":
        Lam = np.diag(np.diag(Kff - Q)) + kern_train_matrix(KCS, X, as_sparse=False)
        cross = cross + kern_cross_matrix(KCS, Xt, X)
        kss = kss + kern_diag(KCS, Xt)
    else:
        Lam = np.zeros((n, n))
    if kind == "SOR":
        kss = np.sum(Ksu * np.linalg.solve(Kuu, Ksu.T).T, axis=1)
    C = Q + Lam + S2 * np.eye(n)
    lml = multivariate_normal(np.zeros(n), C).logpdf(y)
    if kind == "VAR":
        lml -= np.trace(Kff - Q) / (2 * S2)
    mean = cross @ np.linalg.solve(C, y)
    var = kss - np.sum(cross * np.linalg.solve(C, cross.T).T, axis=1)
    return lml, mean, var


def _model(kind, Xu):
    kern = [K1, KCS] if kind == "CSFIC" else [K1]
    sp = SparseSpec(kind, Xu, blocks=BLOCKS if kind == "PIC" else None)
    return GPModel(kern, Likelihood("gaussian", sigma2=S2), sparse=sp)


@pytest.mark.parametrize("kind", ["FIC", "PIC", "DTC", "SOR", "VAR", "CSFIC"])
def test_against_dense_oracle(kind, setup):
    d, Xu, Xt = setup
    tb = np.array([0, 1, 2, 0, 1, 2])
    lml, mean, var = _oracle(kind, d, Xu, Xt, tb)
    st = sparse_fit(_model(kind, Xu), d)
    p = sparse_predict(st, Xt, test_blocks=tb if kind == "PIC" else None)
    assert sparse_lml(st) == pytest.approx(lml, abs=1e-9)
    np.testing.assert_allclose(p.Eft, mean, atol=1e-9)
    np.testing.assert_allclose(p.Varft, np.maximum(var, 0), atol=1e-9)
    assert np.all(var > -1e-10)


def test_var_bound_below_dtc(setup):
    d, Xu, _ = setup
    lv = sparse_lml(sparse_fit(_model("VAR", Xu), d))
    ld = sparse_lml(sparse_fit(_model("DTC", Xu), d))
    assert lv < ld


def test_pic_training_marginals(setup):
    d, Xu, _ = setup
    st = sparse_fit(_model("PIC", Xu), d)
    m, v = sparse_marginals(st)
    tb = np.empty(30, dtype=int)
    for i, b in enumerate(BLOCKS):
        tb[b] = i
    p = sparse_predict(st, d.X, test_blocks=tb)
    np.testing.assert_array_equal(m, p.Eft)


def test_pic_own_block_is_fic(setup):
    d, Xu, Xt = setup
    pf = sparse_predict(sparse_fit(_model("FIC", Xu), d), Xt)
    single = [np.array([i]) for i in range(30)]
    sp = SparseSpec("PIC", Xu, blocks=single)
    st = sparse_fit(GPModel(K1, Likelihood("gaussian", sigma2=S2), sparse=sp), d)
    pp = sparse_predict(st, Xt, test_blocks=np.full(6, -1))
    np.testing.assert_allclose(pp.Eft, pf.Eft, atol=1e-12)
    np.testing.assert_allclose(pp.Varft, pf.Varft, atol=1e-12)


class TestValidation:
    def test_pic_needs_partition(self, setup):
        d, Xu, _ = setup
        sp = SparseSpec("PIC", Xu, blocks=[np.arange(10), np.arange(12, 30)])
        with pytest.raises(ValidationError) as e:
            sparse_fit(GPModel(K1, sparse=sp), d)
        assert e.value.code == "sparse.blocks"

    def test_pic_test_blocks(self, setup):
        d, Xu, Xt = setup
        st = sparse_fit(_model("PIC", Xu), d)
        with pytest.raises(InputError):
            sparse_predict(st, Xt)
        with pytest.raises(InputError):
            sparse_predict(st, Xt, test_blocks=np.full(6, 3))

    def test_csfic_needs_both_kinds(self, setup):
        _, Xu, _ = setup
        with pytest.raises(ValidationError):
            GPModel([K1], sparse=SparseSpec("CSFIC", Xu))
        with pytest.raises(ValidationError):
            GPModel([KCS], sparse=SparseSpec("CSFIC", Xu))

    def test_non_gaussian_rejected(self, setup):
        _, Xu, _ = setup
        with pytest.raises(ValidationError):
            GPModel(K1, Likelihood("probit"), sparse=SparseSpec("FIC", Xu))

    def test_bad_spec(self):
        with pytest.raises(ValidationError):
            SparseSpec("FITC", np.zeros((2, 1)))
        with pytest.raises(ValidationError):
            SparseSpec("PIC", np.zeros((2, 1)))
        with pytest.raises(ValidationError):
            SparseSpec("FIC", np.full((2, 1), np.nan))

    def test_inducing_dim(self, setup):
        d, _, _ = setup
        with pytest.raises(ValidationError):
            sparse_fit(GPModel(K1, sparse=SparseSpec("FIC", np.zeros((3, 1)))), d)
