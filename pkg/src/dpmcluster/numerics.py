"""Scalar and matrix primitives for the Bayesian algebra.

Everything here works in float64 and in log space.
"""
import math

import numpy as np
from scipy.linalg import lapack, solve_triangular

LOG_PI = math.log(math.pi)
LOG_2PI = math.log(2.0 * math.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed; ``pivot`` is the 0-based index of the failing diagonal."""

    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot} failed)")


def log_gamma(x):
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def multivariate_log_gamma(d, x):
    """ln of the d-dimensional gamma function."""
    if x <= (d - 1) / 2.0:
        raise ValueError(f"multivariate_log_gamma({d}, x) requires x > {(d - 1) / 2}, got {x}")
    if d == 1:
        return log_gamma(x)
    out = d * (d - 1) / 4.0 * LOG_PI
    for j in range(1, d + 1):
        out += math.lgamma(x + (1 - j) / 2.0)
    return out


def cholesky_logdet(m):
    """Lower Cholesky factor of an SPD matrix and its log-determinant.

    No pivoting and no jitter; callers repair near-singular input themselves.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    factor, info = lapack.dpotrf(m, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(info - 1)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} to dpotrf")
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return factor, logdet


def gaussian_logpdf(x, mu, sigma):
    """Gaussian log-density; ``x`` may be one point or an (n, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    d = mu.shape[0]
    if xs.shape[1] != d or np.shape(sigma) != (d, d):
        raise ValueError(
            f"dimension mismatch: x {x.shape}, mu {mu.shape}, sigma {np.shape(sigma)}"
        )
    factor, logdet = cholesky_logdet(sigma)
    out = _logpdf_from_factor(xs, mu, factor, logdet)
    return float(out[0]) if single else out


def _logpdf_from_factor(xs, mu, factor, logdet):
    y = solve_triangular(factor, (xs - mu).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", y, y)
    return -0.5 * (mu.shape[0] * LOG_2PI + logdet + maha)


def logsumexp_rows(a):
    """Row-wise log-sum-exp of a 2-d array; all -inf rows return -inf."""
    amax = np.max(a, axis=1, keepdims=True)
    safe = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=1)) + safe[:, 0]
    return out
