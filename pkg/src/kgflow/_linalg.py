"""Small dense linear-algebra helpers with the library's jitter policy."""

import numpy as np
from scipy import linalg

from .errors import DimensionError, SingularCovarianceError

# ratio of extreme singular values of A (equivalently of chol(Sigma)) beyond which we refuse
CONDITION_LIMIT = 1e8
_JITTER_SCALES = (1e-10, 1e-8)


def as_square(matrix, d=None, name="matrix"):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if d is not None and m.shape[0] != d:
        raise DimensionError(f"{name} must be {d}x{d}, got {m.shape}")
    return m


def condition_number(matrix):
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[-1] == 0.0:
        return np.inf
    return s[0] / s[-1]


def check_condition(matrix, name="A"):
    if not np.all(np.isfinite(matrix)):
        raise SingularCovarianceError(f"{name} has non-finite entries")
    c = condition_number(matrix)
    if not c < CONDITION_LIMIT:
        raise SingularCovarianceError(
            f"{name} is too ill-conditioned (condition number {c:.3g} >= {CONDITION_LIMIT:.0e})"
        )


def spd_cholesky(cov, name="covariance"):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    The bare matrix is tried first. On failure a diagonal jitter of
    ``scale * trace(cov) / d`` is added, with scale 1e-10 and then 1e-8.
    A factor whose condition number exceeds ``CONDITION_LIMIT`` is rejected.
    """
    cov = as_square(cov, name=name)
    if not np.all(np.isfinite(cov)):
        raise SingularCovarianceError(f"{name} has non-finite entries")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise SingularCovarianceError(f"{name} is not symmetric")
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    base = np.trace(cov) / d
    for scale in (0.0,) + _JITTER_SCALES:
        try:
            chol = linalg.cholesky(cov + scale * base * np.eye(d), lower=True)
        except linalg.LinAlgError:
            continue
        diag = np.abs(np.diag(chol))
        if diag.min() > 0 and diag.max() / diag.min() < CONDITION_LIMIT:
            check_condition(chol, name=f"Cholesky factor of {name}")
            return chol
    raise SingularCovarianceError(f"{name} is not positive definite (even after jitter)")


def chol_logdet(chol):
    return 2.0 * np.sum(np.log(np.diag(chol)))


def chol_solve(chol, rhs):
    """Solve Sigma x = rhs for Sigma = chol chol^T; rhs is (d,) or (d, k)."""
    return linalg.cho_solve((chol, True), rhs)


def chol_inverse(chol):
    return chol_solve(chol, np.eye(chol.shape[0]))
