"""Tests for the dense helpers and the centered ridge least-squares fit."""
import numpy as np
import pytest

from posecascade.errors import DimensionError, NumericalError
from posecascade.linalg import mat_vec, ridge_fit


def ridge_objective(phi, y, w, b, lam):
    """Sum of squared residuals plus lam * ||W||_F^2 (bias unpenalized)."""
    resid = phi @ w.T + b - y
    return float(np.sum(resid * resid) + lam * np.sum(w * w))


def brute_force_ridge(phi, y, lam):
    """Dense solve of the (K+1)x(K+1) augmented normal equations.

    The unknowns stack W^T on top of b; the penalty lam applies only to
    the K weight rows, never to the intercept row.
    """
    n, k = phi.shape
    a = np.zeros((k + 1, k + 1))
    a[:k, :k] = phi.T @ phi + lam * np.eye(k)
    a[:k, k] = phi.sum(axis=0)
    a[k, :k] = phi.sum(axis=0)
    a[k, k] = n
    rhs = np.zeros((k + 1, y.shape[1]))
    rhs[:k] = phi.T @ y
    rhs[k] = y.sum(axis=0)
    beta = np.linalg.solve(a, rhs)
    return beta[:k].T, beta[k]


def test_mat_vec_row_sums():
    out = mat_vec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0])
    np.testing.assert_array_equal(out, [3.0, 7.0])


def test_mat_vec_dimension_errors():
    with pytest.raises(DimensionError, match="inner dimensions"):
        mat_vec([[1.0, 2.0]], [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError, match="2-D"):
        mat_vec([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(DimensionError, match="1-D"):
        mat_vec([[1.0]], [[1.0]])
    with pytest.raises(DimensionError, match="non-finite"):
        mat_vec([[np.nan, 0.0]], [1.0, 1.0])


def test_identity_fit_reproduces_targets():
    # rank-deficient at lambda=0 once centered, yet the fitted affine map
    # must still reproduce both targets exactly
    eye = np.eye(2)
    w, b = ridge_fit(eye, eye, lam=0.0)
    pred = eye @ w.T + b
    np.testing.assert_allclose(pred, eye, atol=1e-12)


def test_zero_targets_give_zero_parameters():
    rng = np.random.default_rng(3)
    phi = rng.normal(size=(9, 4))
    w, b = ridge_fit(phi, np.zeros((9, 2)), lam=0.0)
    np.testing.assert_array_equal(w, np.zeros((2, 4)))
    np.testing.assert_array_equal(b, np.zeros(2))


def test_matches_brute_force_oracle():
    # 25 random instances, lambda cycling {0, 0.1, 1}; rel err <= 1e-10
    for trial in range(25):
        rng = np.random.default_rng(1000 + trial)
        k = int(rng.integers(1, 9))
        n = int(rng.integers(k + 3, 21))
        d = int(rng.integers(1, 5))
        lam = [0.0, 0.1, 1.0][trial % 3]
        phi = rng.normal(size=(n, k))
        y = rng.normal(size=(n, d))
        w, b = ridge_fit(phi, y, lam)
        w_ref, b_ref = brute_force_ridge(phi, y, lam)
        np.testing.assert_allclose(w, w_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(b, b_ref, rtol=1e-10, atol=1e-12)


def test_random_5x3_example_matches_oracle():
    rng = np.random.default_rng(17)
    phi = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 2))
    w, b = ridge_fit(phi, y, lam=0.1)
    w_ref, b_ref = brute_force_ridge(phi, y, 0.1)
    np.testing.assert_allclose(w, w_ref, rtol=1e-10)
    np.testing.assert_allclose(b, b_ref, rtol=1e-10)


def test_fit_beats_mean_and_zero_predictors():
    for trial in range(10):
        rng = np.random.default_rng(40 + trial)
        phi = rng.normal(size=(12, 5))
        y = rng.normal(loc=0.7, size=(12, 3))
        lam = [0.0, 0.5, 2.0][trial % 3]
        w, b = ridge_fit(phi, y, lam)
        fit = ridge_objective(phi, y, w, b, lam)
        mean_only = ridge_objective(phi, y, np.zeros((3, 5)), y.mean(axis=0), lam)
        zero = ridge_objective(phi, y, np.zeros((3, 5)), np.zeros(3), lam)
        assert fit <= mean_only + 1e-9
        assert mean_only <= zero + 1e-9


def test_permutation_invariance():
    rng = np.random.default_rng(8)
    phi = rng.normal(size=(14, 4))
    y = rng.normal(size=(14, 2))
    w, b = ridge_fit(phi, y, lam=0.3)
    for trial in range(5):
        perm = np.random.default_rng(50 + trial).permutation(14)
        w2, b2 = ridge_fit(phi[perm], y[perm], lam=0.3)
        np.testing.assert_allclose(w2, w, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(b2, b, rtol=1e-8, atol=1e-12)


def test_weight_norm_nonincreasing_in_lambda():
    rng = np.random.default_rng(12)
    phi = rng.normal(size=(20, 5))
    y = rng.normal(size=(20, 2))
    norms = []
    for lam in (0.0, 0.1, 1.0, 10.0):
        w, _ = ridge_fit(phi, y, lam)
        norms.append(float(np.sum(w * w)))
    for lo, hi in zip(norms, norms[1:]):
        assert hi <= lo + 1e-10


def test_constant_features_unregularized_fails():
    phi = np.ones((6, 3))
    y = np.arange(12.0).reshape(6, 2)
    with pytest.raises(NumericalError):
        ridge_fit(phi, y, lam=0.0)


def test_ridge_fit_input_validation():
    ok = np.ones((4, 2))
    with pytest.raises(DimensionError, match="rows"):
        ridge_fit(ok, np.ones((3, 2)), lam=1.0)
    with pytest.raises(DimensionError, match="lam"):
        ridge_fit(ok, np.ones((4, 2)), lam=-1.0)
    with pytest.raises(DimensionError, match="lam"):
        ridge_fit(ok, np.ones((4, 2)), lam=np.nan)
    with pytest.raises(DimensionError, match="non-finite"):
        ridge_fit(np.array([[np.inf, 0.0]]), np.ones((1, 1)), lam=1.0)
    with pytest.raises(DimensionError, match="2-D"):
        ridge_fit(np.ones(4), np.ones((4, 1)), lam=1.0)
