"""Small dense linear algebra helpers used by the sampler and estimators."""

import numpy as np
import scipy.linalg

PIVOT_TOL = 1e-12
PSD_TOL = 1e-10


class LinAlgError(ValueError):
    pass


def psd_cholesky(a, pivot_tol=PIVOT_TOL):
    """Lower-triangular L with L @ L.T == a for symmetric PSD ``a``.

    Plain column Cholesky, except that a pivot below ``pivot_tol`` (relative
    to the largest diagonal entry) zeroes its column instead of failing, so
    singular but PSD matrices are factored too. A pivot that is clearly
    negative means the matrix is not PSD.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinAlgError("covariance must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise LinAlgError("covariance not symmetric")
    n = a.shape[0]
    scale = max(np.abs(np.diag(a)).max(), 1e-300) if n else 1.0
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -PSD_TOL * scale:
            raise LinAlgError("covariance not PSD")
        if pivot <= pivot_tol * scale:
            # rank-deficient direction; remaining entries in this column must vanish
            resid = a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
            if np.any(np.abs(resid) > np.sqrt(PSD_TOL) * scale):
                raise LinAlgError("covariance not PSD")
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def spd_solve(a, b, rtol=1e-10):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    Uses a Cholesky factorization; the relative residual is checked against
    ``rtol`` and a failure raises ``LinAlgError("solve failed")``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
        x = scipy.linalg.cho_solve(factor, b)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinAlgError("solve failed") from exc
    resid = np.linalg.norm(a @ x - b)
    if not np.isfinite(resid) or resid > rtol * max(np.linalg.norm(a) * np.linalg.norm(x), np.linalg.norm(b), 1e-300):
        raise LinAlgError("solve failed")
    return x


def right_solve(b, a):
    """Return ``b @ inv(a)`` for SPD ``a`` without forming the inverse."""
    return spd_solve(a, np.asarray(b, dtype=np.float64).T).T
