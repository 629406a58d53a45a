"""Dense linear algebra helpers.

The central routine is a ridge (Tikhonov) least-squares fit with an
unpenalized intercept.  Given features ``Phi`` (n x K), targets ``Y``
(n x d) and ``lam >= 0``, it minimizes

    sum_i || W phi_i + b - y_i ||^2  +  lam * ||W||_F^2

The intercept is kept out of the penalty by centering: with
``Phi_c = Phi - mean(Phi)`` and ``Y_c = Y - mean(Y)`` the weights solve
the K x K normal equations

    (Phi_c^T Phi_c + lam I) W^T = Phi_c^T Y_c,
    b = mean(Y) - W mean(Phi)

solved by Cholesky factorization.  If factorization fails the diagonal
is jittered, starting at 1e-10 * trace/K and escalating tenfold up to
1e-4 * trace/K before giving up.

All matrices are dense, row-major, float64 and must be finite.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DimensionError, NumericalError

__all__ = ["as_mat", "as_vec", "mat_vec", "ridge_fit"]


def as_mat(a, name: str = "array") -> np.ndarray:
    """Validate and convert ``a`` to a finite 2-D float64 C-contiguous array."""
    try:
        m = np.ascontiguousarray(a, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{name}: not convertible to float64 array") from exc
    if m.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name}: contains non-finite entries")
    return m


def as_vec(a, name: str = "vector") -> np.ndarray:
    """Validate and convert ``a`` to a finite 1-D float64 array."""
    try:
        v = np.ascontiguousarray(a, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{name}: not convertible to float64 array") from exc
    if v.ndim != 1:
        raise DimensionError(f"{name}: expected 1-D array, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise DimensionError(f"{name}: contains non-finite entries")
    return v


def mat_vec(a, x) -> np.ndarray:
    """Matrix-vector product ``a @ x`` with shape and finiteness checks.

    Parameters
    ----------
    a : (m, k) array_like
        Dense matrix.
    x : (k,) array_like
        Vector.

    Returns
    -------
    (m,) ndarray of float64
    """
    m = as_mat(a, "a")
    v = as_vec(x, "x")
    if m.shape[1] != v.shape[0]:
        raise DimensionError(
            f"mat_vec: inner dimensions differ, a is {m.shape}, x has length {v.shape[0]}"
        )
    return m @ v


def ridge_fit(features, targets, lam: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``y ~ W phi + b`` by ridge least squares with unpenalized bias.

    Parameters
    ----------
    features : (n, K) array_like
        One feature row per observation.
    targets : (n, d) array_like
        One target row per observation.
    lam : float
        Ridge penalty on ``W`` (not on ``b``), must be finite and >= 0.

    Returns
    -------
    (W, b)
        ``W`` is (d, K) float64, ``b`` is (d,) float64.

    Raises
    ------
    DimensionError
        On shape mismatch, empty input, or non-finite entries.
    NumericalError
        If the normal equations cannot be factorized even after the
        diagonal jitter escalates to its cap.
    """
    phi = as_mat(features, "features")
    y = as_mat(targets, "targets")
    n, k = phi.shape
    if y.shape[0] != n:
        raise DimensionError(
            f"ridge_fit: features have {n} rows but targets have {y.shape[0]}"
        )
    if n < 1 or k < 1 or y.shape[1] < 1:
        raise DimensionError("ridge_fit: features and targets must be non-empty")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise DimensionError(f"ridge_fit: lam must be finite and >= 0, got {lam}")

    phi_bar = phi.mean(axis=0)
    y_bar = y.mean(axis=0)
    phi_c = phi - phi_bar
    y_c = y - y_bar

    gram = phi_c.T @ phi_c
    if lam > 0.0:
        gram[np.diag_indices(k)] += lam
    rhs = phi_c.T @ y_c

    wt = _solve_spd(gram, rhs)
    w = np.ascontiguousarray(wt.T)
    b = y_bar - w @ phi_bar
    return w, b


def _solve_spd(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a x = rhs`` for SPD ``a``, jittering the diagonal on failure."""
    k = a.shape[0]
    trace = float(np.trace(a))
    base = trace / k

    jitter = 0.0
    while True:
        try:
            sys = a if jitter == 0.0 else a + jitter * np.eye(k)
            factor = cho_factor(sys, lower=True, check_finite=False)
            x = cho_solve(factor, rhs, check_finite=False)
            if np.all(np.isfinite(x)):
                return x
        except LinAlgError:
            pass
        if base <= 0.0:
            raise NumericalError(
                "ridge_fit: normal equations are not positive definite and "
                "the matrix trace is zero, so jitter cannot help"
            )
        jitter = 1e-10 * base if jitter == 0.0 else jitter * 10.0
        if jitter > 1e-4 * base * (1.0 + 1e-12):
            raise NumericalError(
                "ridge_fit: Cholesky factorization failed even with diagonal "
                f"jitter up to {1e-4 * base:.3e}"
            )
