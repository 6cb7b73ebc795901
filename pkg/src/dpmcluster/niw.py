"""Conjugate Normal-Inverse-Wishart algebra.

Posterior hyperparameters, the marginal data likelihood of a point set, and
MAP estimates from (possibly soft-)weighted sufficient statistics.
"""
import math
from dataclasses import dataclass

import numpy as np

from .model import GaussianComponent
from .numerics import FactorizationError, LOG_PI, cholesky_logdet, multivariate_log_gamma

JITTER_REL = 1e-6
JITTER_TRIES = 3


@dataclass
class SufficientStats:
    nw: float
    sum_x: np.ndarray
    sum_xxt: np.ndarray

    @property
    def d(self):
        return self.sum_x.shape[0]

    def __add__(self, other):
        return SufficientStats(self.nw + other.nw, self.sum_x + other.sum_x,
                               self.sum_xxt + other.sum_xxt)

    @classmethod
    def empty(cls, d):
        return cls(0.0, np.zeros(d), np.zeros((d, d)))


@dataclass
class NIWPosterior:
    kappa_star: float
    m_star: np.ndarray
    nu_star: float
    psi_star: np.ndarray


def accumulate_stats(points, weights=None):
    """Weighted count, sum and scatter of ``points`` (rows)."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if weights is None:
        w = np.ones(x.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (x.shape[0],):
            raise ValueError(f"weights length {w.shape} does not match {x.shape[0]} points")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    wx = x * w[:, None]
    sxx = wx.T @ x
    return SufficientStats(float(w.sum()), wx.sum(axis=0), 0.5 * (sxx + sxx.T))


def batch_stats(points, resp):
    """Per-column statistics for an (n, K) weight matrix in one pass."""
    x = np.asarray(points, dtype=np.float64)
    nw = resp.sum(axis=0)
    sx = resp.T @ x
    sxx = np.einsum("nk,ni,nj->kij", resp, x, x, optimize=True)
    return [SufficientStats(float(nw[k]), sx[k], 0.5 * (sxx[k] + sxx[k].T))
            for k in range(resp.shape[1])]


def repair_spd(m):
    """Symmetrize and, if needed, add escalating diagonal jitter until SPD."""
    m = 0.5 * (m + m.T)
    try:
        cholesky_logdet(m)
        return m
    except FactorizationError:
        pass
    d = m.shape[0]
    jitter = JITTER_REL * max(abs(np.trace(m)) / d, np.finfo(float).tiny)
    for _ in range(JITTER_TRIES + 1):
        cand = m + jitter * np.eye(d)
        try:
            cholesky_logdet(cand)
            return cand
        except FactorizationError:
            jitter *= 10.0
    raise FactorizationError(d - 1)


def niw_posterior(prior, stats):
    if stats.nw == 0:
        return NIWPosterior(prior.kappa, prior.m.copy(), prior.nu, prior.psi.copy())
    kappa_star = prior.kappa + stats.nw
    m_star = (prior.kappa * prior.m + stats.sum_x) / kappa_star
    nu_star = prior.nu + stats.nw
    scatter = (prior.nu * prior.psi + prior.kappa * np.outer(prior.m, prior.m)
               + stats.sum_xxt - kappa_star * np.outer(m_star, m_star))
    psi_star = repair_spd(scatter / nu_star)
    return NIWPosterior(kappa_star, m_star, nu_star, psi_star)


def log_marginal(stats, prior):
    """Log marginal likelihood of a (hard-assigned) point set under the prior."""
    n = stats.nw
    if n == 0:
        return 0.0
    d = prior.d
    post = niw_posterior(prior, stats)
    _, logdet_prior = cholesky_logdet(prior.nu * prior.psi)
    _, logdet_post = cholesky_logdet(post.nu_star * post.psi_star)
    return (-0.5 * n * d * LOG_PI
            + multivariate_log_gamma(d, post.nu_star / 2.0)
            - multivariate_log_gamma(d, prior.nu / 2.0)
            + 0.5 * prior.nu * logdet_prior
            - 0.5 * post.nu_star * logdet_post
            + 0.5 * d * math.log(prior.kappa / post.kappa_star))


def weighted_map_estimate(stats, prior, total_n):
    """Posterior-mode Gaussian from weighted statistics.

    The mean is the posterior m*, the covariance the inverse-Wishart mode
    nu* psi* / (nu* + d + 1). ``pi`` is the raw share ``nw / total_n``; the
    caller renormalizes across clusters.
    """
    post = niw_posterior(prior, stats)
    d = prior.d
    sigma = repair_spd(post.nu_star * post.psi_star / (post.nu_star + d + 1.0))
    return GaussianComponent(post.m_star, sigma, stats.nw / float(total_n))
