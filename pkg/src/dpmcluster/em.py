"""The fixed-K training cycle.

Each epoch fits the clustering net to E-step targets computed from the
previous parameters, then runs a Bayesian M-step on the net's own soft
assignments. ``em_oracle`` is the plain Bayesian EM baseline that the learned
variant is checked against.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import GaussianComponent, MixtureState
from .neural import (adam_step, cross_entropy_loss_grad, forward, init_net, isotropic_subcluster_loss_grad,
                     kl_cluster_loss_grad)
from .niw import accumulate_stats, batch_stats, weighted_map_estimate
from .numerics import _logpdf_from_factor, cholesky_logdet, logsumexp_rows

log = logging.getLogger(__name__)

SUB_WEIGHT_FLOOR = 1e-12


@dataclass
class EpochReport:
    epoch: int
    cluster_loss: float
    sub_loss: float
    k: int
    hard_counts: list


@dataclass
class Nets:
    """The clustering net plus one subclustering net per cluster."""

    cluster: object
    sub: list = field(default_factory=list)

    def copy(self):
        return Nets(self.cluster.copy(), [s.copy() for s in self.sub])


def component_logpdfs(x, clusters):
    """(n, K) matrix of log pi_k + log N(x_i; mu_k, Sigma_k)."""
    out = np.empty((x.shape[0], len(clusters)))
    for k, c in enumerate(clusters):
        factor, logdet = cholesky_logdet(c.sigma)
        with np.errstate(divide="ignore"):
            logpi = math.log(c.pi) if c.pi > 0 else -np.inf
        out[:, k] = logpi + _logpdf_from_factor(x, c.mu, factor, logdet)
    return out


def e_step_targets(x, state):
    """Exact E-step responsibilities, computed in log space."""
    lp = component_logpdfs(x, state.clusters)
    norm = logsumexp_rows(lp)
    dead = ~np.isfinite(norm)
    if np.any(dead):
        log.warning("%d points have zero likelihood under every cluster; using uniform rows",
                    int(dead.sum()))
        lp[dead] = 0.0
        norm[dead] = math.log(lp.shape[1])
    return np.exp(lp - norm[:, None])


def m_step(x, r, prior):
    """Weighted MAP per cluster from soft weights; returns normalized components."""
    n = x.shape[0]
    comps = [weighted_map_estimate(s, prior, n) for s in batch_stats(x, r)]
    total = sum(c.pi for c in comps)
    for c in comps:
        c.pi = c.pi / total if total > 0 else 1.0 / len(comps)
    return comps


def subcluster_m_step(x_k, r_sub, prior):
    """Weighted MAP for a cluster's two subclusters; weights floored and normalized."""
    n = max(x_k.shape[0], 1)
    if x_k.shape[0] == 0:
        pair = [weighted_map_estimate(accumulate_stats(np.zeros((0, prior.d)), np.zeros(0)),
                                      prior, n) for _ in range(2)]
    else:
        pair = [weighted_map_estimate(accumulate_stats(x_k, r_sub[:, j]), prior, n)
                for j in range(2)]
    w = np.maximum([pair[0].pi, pair[1].pi], SUB_WEIGHT_FLOOR)
    w = w / w.sum()
    pair[0].pi, pair[1].pi = float(w[0]), float(w[1])
    return tuple(pair)


def hard_subcluster_params(x_k, sub_labels, prior):
    r = np.zeros((x_k.shape[0], 2))
    r[np.arange(x_k.shape[0]), sub_labels] = 1.0
    return subcluster_m_step(x_k, r, prior)


def kmeans(x, k, seed, iters=100):
    """Lloyd's algorithm with k-means++ seeding; returns hard labels."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    labels = None
    for _ in range(iters):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = dist[np.arange(n), new]
            far = int(own.argmax())
            new[far] = j
            centers[j] = x[far]
            dist[far] = ((x[far] - centers) ** 2).sum(axis=1)
            counts = np.bincount(new, minlength=k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
    return labels


def _minibatches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_cluster_net(net, x, targets, batch, lr, rng, loss_grad=kl_cluster_loss_grad):
    loss = 0.0
    for idx in _minibatches(x.shape[0], batch, rng):
        batch_loss, grads = loss_grad(net, x[idx], targets[idx])
        adam_step(net, grads, lr)
        loss += batch_loss
    return loss


def realign_cluster_net(net, x, state, batch, lr, rng, agreement=0.99, max_tv=0.02,
                        max_steps=8000):
    """Train against fixed E-step targets until the net reproduces them.

    Stops once hard labels agree on at least ``agreement`` of the points and
    the mean total-variation distance between rows is at most ``max_tv``, or
    after about ``max_steps`` optimizer steps. Returns the number of sweeps
    used, the agreement and the distance.
    """
    targets = e_step_targets(x, state)
    want = targets.argmax(axis=1)
    per_sweep = -(-x.shape[0] // batch)
    max_sweeps = max(1, -(-max_steps // per_sweep))

    def gap():
        r = forward(net, x)
        return float(np.mean(r.argmax(axis=1) == want)), 0.5 * float(np.abs(r - targets).sum(axis=1).mean())

    agree, tv = gap()
    sweeps = 0
    while (agree < agreement or tv > max_tv) and sweeps < max_sweeps:
        train_cluster_net(net, x, targets, batch, lr, rng, cross_entropy_loss_grad)
        sweeps += 1
        agree, tv = gap()
    return sweeps, agree, tv


def train_sub_net(net, x_k, sub_means, batch, lr, rng):
    loss = 0.0
    for idx in _minibatches(x_k.shape[0], batch, rng):
        batch_loss, grads = isotropic_subcluster_loss_grad(net, x_k[idx], sub_means)
        adam_step(net, grads, lr)
        loss += batch_loss
    return loss


def new_sub_net(x, x_k, hidden, seed, prior, boot_labels=None):
    """Fresh subclustering net and its bootstrap subcluster parameters.

    Without ``boot_labels`` the initial split is K-means with two centres.
    """
    net = init_net(x.shape[1], hidden, 2, seed, x_shift=x.mean(axis=0),
                   x_scale=_input_scale(x))
    if boot_labels is None:
        boot_labels = (kmeans(x_k, 2, seed) if x_k.shape[0] >= 2
                       else np.zeros(x_k.shape[0], dtype=np.int64))
    return net, hard_subcluster_params(x_k, boot_labels, prior)


def _input_scale(x):
    s = x.std(axis=0)
    return np.where(s > 0, s, 1.0)


def hard_labels(net, x):
    return forward(net, x).argmax(axis=1)


def sub_labels_for(nets, x, z):
    """Argmax subcluster label of every point under its cluster's sub net."""
    zsub = np.zeros(x.shape[0], dtype=np.int64)
    for k, net in enumerate(nets.sub):
        idx = np.flatnonzero(z == k)
        if idx.size:
            zsub[idx] = forward(net, x[idx]).argmax(axis=1)
    return zsub


def train_epoch_fixed_k(x, state, nets, prior, config, rng, epoch=0):
    """One epoch at fixed K. Mutates and returns ``(nets, state, report, z)``."""
    k = state.k
    if nets.cluster.k_out != k or len(nets.sub) != k:
        raise ValueError("nets and mixture state disagree on K")
    targets = e_step_targets(x, state)
    cl_loss = train_cluster_net(nets.cluster, x, targets, config.batch, config.lr_cluster, rng)

    r = forward(nets.cluster, x)
    z = r.argmax(axis=1)
    sub_loss = 0.0
    members = [np.flatnonzero(z == j) for j in range(k)]
    for j in range(k):
        if members[j].size:
            means = np.stack([s.mu for s in state.subclusters[j]])
            sub_loss += train_sub_net(nets.sub[j], x[members[j]], means,
                                      config.batch, config.lr_sub, rng)

    state.clusters = m_step(x, r, prior)
    for j in range(k):
        x_k = x[members[j]]
        r_sub = forward(nets.sub[j], x_k) if x_k.shape[0] else np.zeros((0, 2))
        state.subclusters[j] = subcluster_m_step(x_k, r_sub, prior)
    counts = np.bincount(z, minlength=k).tolist()
    report = EpochReport(epoch, cl_loss, sub_loss, k, counts)
    return nets, state, report, z


def _log_prior_term(comp, prior):
    # unnormalized NIW log density whose joint mode is the weighted MAP above
    d = prior.d
    factor, logdet = cholesky_logdet(comp.sigma)
    inv = np.linalg.inv(comp.sigma)
    diff = comp.mu - prior.m
    return (-0.5 * (prior.nu + d + 1.0) * logdet
            - 0.5 * np.trace(prior.nu * prior.psi @ inv)
            - 0.5 * prior.kappa * diff @ inv @ diff)


def log_posterior(x, clusters, prior):
    """Unnormalized log posterior of mixture parameters given the data."""
    ll = float(logsumexp_rows(component_logpdfs(x, clusters)).sum())
    return ll + sum(_log_prior_term(c, prior) for c in clusters)


def em_oracle(x, k, prior, epochs, seed, tol=0.0):
    """Classical Bayesian EM at fixed K, initialized by K-means.

    Returns the final state, hard labels and the log-posterior trace (one
    entry for the initial parameters plus one per iteration). Stops early
    when an iteration gains no more than ``tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = kmeans(x, k, seed)
    r = np.zeros((x.shape[0], k))
    r[np.arange(x.shape[0]), labels] = 1.0
    clusters = m_step(x, r, prior)
    trace = [log_posterior(x, clusters, prior)]
    for _ in range(epochs):
        r = e_step_targets(x, MixtureState(clusters))
        clusters = m_step(x, r, prior)
        trace.append(log_posterior(x, clusters, prior))
        if tol > 0 and trace[-1] - trace[-2] <= tol:
            break
    state = MixtureState(clusters, [(c.copy(), c.copy()) for c in clusters])
    for a, b in state.subclusters:
        a.pi = b.pi = 0.5
    z = e_step_targets(x, state).argmax(axis=1)
    return state, z, np.array(trace)
