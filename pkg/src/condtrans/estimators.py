"""scikit-learn style wrappers around the transform learners.

Inputs follow the scikit-learn convention ``X`` of shape
``(n_samples, n_features)``; internally the learners work on
``y = X.T``. ``transform`` returns the sparse codes (one row per sample)
and ``inverse_transform`` maps codes back through ``W^-1``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .matcore import dct_kron_init, hard_threshold
from .tlearn import (
    PenaltyParams,
    TransformConstraints,
    fit_bresler,
    fit_ortho,
    fit_proposed,
    objective,
)

__all__ = ["ConditionedTransform", "PenaltyTransform", "OrthoTransform"]


def _initial_transform(init, n):
    if init is None or (isinstance(init, str) and init == "auto"):
        p = math.isqrt(n)
        return dct_kron_init(n) if p * p == n else np.eye(n)
    if isinstance(init, str):
        if init == "dct":
            return dct_kron_init(n)
        if init == "identity":
            return np.eye(n)
        raise ValueError(f"unknown init {init!r}; expected 'auto', 'dct', 'identity' or an array")
    w0 = np.asarray(init, dtype=np.float64)
    if w0.shape != (n, n):
        raise ValueError(f"init must have shape ({n}, {n}), got {w0.shape}")
    return w0


class _TransformBase(TransformerMixin, BaseEstimator):
    def _validate(self, X, reset):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _check_sparsity(self, n):
        if not 1 <= self.sparsity <= n:
            raise ValueError(f"sparsity must lie in [1, {n}], got {self.sparsity}")

    def transform(self, X):
        """Sparse codes ``H_s(W x)`` for each row of ``X``."""
        check_is_fitted(self, "transform_")
        X = self._validate(X, reset=False)
        return hard_threshold(self.transform_ @ X.T, self.sparsity).T

    def inverse_transform(self, codes):
        check_is_fitted(self, "transform_")
        codes = check_array(codes, dtype=np.float64)
        return np.linalg.solve(self.transform_, codes.T).T

    def score(self, X, y=None):
        """Negative squared representation error ``-||H_s(W X^T) - W X^T||_F^2``."""
        check_is_fitted(self, "transform_")
        X = self._validate(X, reset=False)
        codes = hard_threshold(self.transform_ @ X.T, self.sparsity)
        return -objective(self.transform_, codes, X.T)

    @property
    def condition_number_(self):
        check_is_fitted(self, "transform_")
        s = np.linalg.svd(self.transform_, compute_uv=False)
        return float(s[0] / s[-1])


class ConditionedTransform(_TransformBase):
    """Sparsifying transform with a hard condition-number bound.

    Parameters
    ----------
    cond_bound : float
        Upper bound ``rho >= 1`` on ``kappa(W)``.
    frob_target : float
        Exact Frobenius norm of ``W``.
    sparsity : int
        Nonzeros kept per code vector.
    n_iter : int
    init : {'auto', 'dct', 'identity'} or ndarray
        ``'auto'`` uses the separable DCT when ``n_features`` is a perfect
        square and the identity otherwise.

    Attributes
    ----------
    transform_ : ndarray of shape (n_features, n_features)
    u_, sigma_, v_ : SVD factors of ``transform_``
    log_ : FitLog
    """

    def __init__(self, cond_bound=10.0, frob_target=1.0, sparsity=1, n_iter=300, init="auto"):
        self.cond_bound = cond_bound
        self.frob_target = frob_target
        self.sparsity = sparsity
        self.n_iter = n_iter
        self.init = init

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        n = X.shape[1]
        self._check_sparsity(n)
        cons = TransformConstraints(self.cond_bound, self.frob_target, self.sparsity)
        factors, _, log = fit_proposed(X.T, cons, w0=_initial_transform(self.init, n), iters=self.n_iter)
        self.u_, self.sigma_, self.v_ = factors.u, factors.sigma, factors.v
        self.transform_ = factors.matrix()
        self.log_ = log
        return self


class PenaltyTransform(_TransformBase):
    """Sparsifying transform regularized by ``-mu log|det W| + rho_pen/2 ||W||^2``."""

    def __init__(self, mu=1.0, rho_pen=1.0, sparsity=1, n_iter=300, init="auto"):
        self.mu = mu
        self.rho_pen = rho_pen
        self.sparsity = sparsity
        self.n_iter = n_iter
        self.init = init

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        n = X.shape[1]
        self._check_sparsity(n)
        params = PenaltyParams(self.mu, self.rho_pen, self.sparsity)
        w, _, log = fit_bresler(X.T, params, w0=_initial_transform(self.init, n), iters=self.n_iter)
        self.transform_ = w
        self.log_ = log
        return self


class OrthoTransform(_TransformBase):
    """Orthogonal sparsifying transform."""

    def __init__(self, sparsity=1, n_iter=300, init="auto"):
        self.sparsity = sparsity
        self.n_iter = n_iter
        self.init = init

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        n = X.shape[1]
        self._check_sparsity(n)
        w, _, log = fit_ortho(X.T, self.sparsity, w0=_initial_transform(self.init, n), iters=self.n_iter)
        self.transform_ = w
        self.log_ = log
        return self

    def inverse_transform(self, codes):
        check_is_fitted(self, "transform_")
        return check_array(codes, dtype=np.float64) @ self.transform_
