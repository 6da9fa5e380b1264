import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from condtrans import ConditionedTransform, OrthoTransform, PenaltyTransform
from condtrans.matcore import dct_kron_init


@pytest.fixture
def X(rng):
    return rng.standard_normal((300, 16)) * np.linspace(3, 0.2, 16)


ESTIMATORS = [
    ConditionedTransform(cond_bound=4.0, frob_target=4.0, sparsity=3, n_iter=15),
    PenaltyTransform(mu=1.0, rho_pen=1.0, sparsity=3, n_iter=15),
    OrthoTransform(sparsity=3, n_iter=15),
]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_clone_and_params(est):
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(sparsity=2)
    assert c.sparsity == 2 and est.sparsity == 3


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_fit_transform_shapes_and_sparsity(est, X):
    est = clone(est).fit(X)
    codes = est.transform(X)
    assert codes.shape == X.shape
    assert np.max(np.count_nonzero(codes, axis=1)) <= 3
    assert est.n_features_in_ == 16
    assert len(est.log_) == 15
    assert est.score(X) <= 0


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_inverse_of_full_codes_is_exact(est, X):
    est = clone(est).set_params(sparsity=16).fit(X)
    np.testing.assert_allclose(est.inverse_transform(est.transform(X)), X, atol=1e-8)


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_not_fitted(est, X):
    with pytest.raises(NotFittedError):
        clone(est).transform(X)


def test_conditioned_transform_respects_bound(X):
    est = ConditionedTransform(cond_bound=2.5, frob_target=6.0, sparsity=4, n_iter=20).fit(X)
    assert est.condition_number_ <= 2.5 * (1 + 1e-8)
    assert np.linalg.norm(est.transform_) == pytest.approx(6.0)
    np.testing.assert_allclose(est.u_ @ np.diag(est.sigma_) @ est.v_.T, est.transform_, atol=1e-12)


def test_ortho_transform_is_orthogonal(X):
    est = OrthoTransform(sparsity=4, n_iter=10).fit(X)
    np.testing.assert_allclose(est.transform_ @ est.transform_.T, np.eye(16), atol=1e-10)


def test_init_options(X):
    w0 = dct_kron_init(16)
    a = OrthoTransform(sparsity=2, n_iter=3, init="auto").fit(X)
    b = OrthoTransform(sparsity=2, n_iter=3, init=w0).fit(X)
    np.testing.assert_array_equal(a.transform_, b.transform_)
    OrthoTransform(sparsity=2, n_iter=3, init="identity").fit(X[:, :5])
    with pytest.raises(ValueError):
        OrthoTransform(init="wavelet").fit(X)
    with pytest.raises(ValueError):
        OrthoTransform(init=np.eye(3)).fit(X)


def test_bad_sparsity_and_feature_mismatch(X):
    with pytest.raises(ValueError):
        OrthoTransform(sparsity=17).fit(X)
    est = OrthoTransform(sparsity=2, n_iter=2).fit(X)
    with pytest.raises(ValueError):
        est.transform(X[:, :8])
