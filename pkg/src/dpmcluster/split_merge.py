"""Split and merge proposals with Metropolis-Hastings acceptance.

Accepted moves resize the clustering net's output layer and replace the
affected subclustering nets, keeping nets, mixture state and labels aligned.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .em import new_sub_net
from .model import GaussianComponent
from .neural import duplicate_output_unit, remove_output_unit
from .niw import accumulate_stats, log_marginal, weighted_map_estimate

log = logging.getLogger(__name__)

MERGE_NEIGHBOURS = 3


@dataclass
class ProposalOutcome:
    kind: str
    clusters: tuple
    log_h: float
    accepted: bool
    rng_draw: float


def log_hastings_split(stats_k, stats_k1, stats_k2, prior):
    """Log Hastings ratio for splitting a cluster into two hard subclusters."""
    n1, n2 = stats_k1.nw, stats_k2.nw
    if n1 < 1 or n2 < 1:
        raise ValueError(f"split needs two non-empty sides, got sizes {n1} and {n2}")
    return (math.log(prior.alpha)
            + math.lgamma(n1) + log_marginal(stats_k1, prior)
            + math.lgamma(n2) + log_marginal(stats_k2, prior)
            - math.lgamma(stats_k.nw) - log_marginal(stats_k, prior))


def log_hastings_merge(stats_a, stats_b, prior, merged=None):
    """Log Hastings ratio for merging two clusters: the negated split ratio."""
    if stats_a.nw < 1 or stats_b.nw < 1:
        raise ValueError("cannot merge an empty cluster")
    if merged is None:
        merged = stats_a + stats_b
    return -log_hastings_split(merged, stats_a, stats_b, prior)


def _accept(log_h, rng):
    u = float(rng.random())
    return u < math.exp(min(log_h, 0.0)), u


def propose_splits(x, z, zsub, state, nets, prior, rng, hidden=50, seed_rng=None):
    """Propose splitting every cluster into its two subclusters.

    All ratios are evaluated against the state at the start of the round.
    Accepted children are appended at the end of the cluster list, so lower
    indices never move. Returns ``(state, nets, z, outcomes)``.
    """
    seed_rng = np.random.default_rng(0) if seed_rng is None else seed_rng
    z = np.asarray(z).copy()
    k0 = state.k
    outcomes = []
    accepted = []
    for k in range(k0):
        idx = np.flatnonzero(z == k)
        side = zsub[idx]
        s1 = accumulate_stats(x[idx[side == 0]])
        s2 = accumulate_stats(x[idx[side == 1]])
        if s1.nw == 0 or s2.nw == 0:
            u = float(rng.random())
            outcomes.append(ProposalOutcome("split", (k,), -math.inf, False, u))
            continue
        log_h = log_hastings_split(s1 + s2, s1, s2, prior)
        ok, u = _accept(log_h, rng)
        outcomes.append(ProposalOutcome("split", (k,), log_h, ok, u))
        if ok:
            accepted.append((k, idx, side))

    for k, idx, side in accepted:
        parent_pi = state.clusters[k].pi
        sub_a, sub_b = state.subclusters[k]
        new = state.k
        duplicate_output_unit(nets.cluster, k)
        pi_a = parent_pi * sub_a.pi
        # the difference keeps pi_a + pi_b == parent_pi exact
        state.clusters[k] = GaussianComponent(sub_a.mu.copy(), sub_a.sigma.copy(), pi_a)
        state.clusters.append(GaussianComponent(sub_b.mu.copy(), sub_b.sigma.copy(),
                                                parent_pi - pi_a))
        z[idx[side == 1]] = new
        state.subclusters.append(None)
        nets.sub.append(None)
        for child in (k, new):
            x_c = x[z == child]
            net, pair = new_sub_net(x, x_c, hidden, int(seed_rng.integers(2**31)), prior)
            nets.sub[child] = net
            state.subclusters[child] = pair
        log.debug("split cluster %d -> (%d, %d)", k, k, new)
    return state, nets, z, outcomes


def propose_merges(x, z, state, nets, prior, rng, hidden=50, seed_rng=None):
    """Propose merging each cluster with its nearest neighbours.

    Clusters are scanned in ascending index; each tries up to three nearest
    (by mean distance) unconsumed neighbours, and the first accepted merge
    consumes both. No cluster takes part in more than one merge per round.
    A pair with an empty side is merged without a draw against the ratio.
    Returns ``(state, nets, z, outcomes)``.
    """
    seed_rng = np.random.default_rng(0) if seed_rng is None else seed_rng
    z = np.asarray(z).copy()
    k0 = state.k
    outcomes = []
    if k0 < 2:
        return state, nets, z, outcomes
    stats = [accumulate_stats(x[z == k]) for k in range(k0)]
    means = state.means
    dist = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2))
    consumed = np.zeros(k0, dtype=bool)
    pairs = []
    for a in range(k0):
        if consumed[a]:
            continue
        order = [b for b in np.argsort(dist[a], kind="stable") if b != a][:MERGE_NEIGHBOURS]
        for b in order:
            if consumed[b]:
                continue
            b = int(b)
            if stats[a].nw < 1 or stats[b].nw < 1:
                # absorbing a cluster with no hard members leaves the partition unchanged
                u = float(rng.random())
                outcomes.append(ProposalOutcome("merge", (a, b), math.inf, True, u))
                consumed[a] = consumed[b] = True
                pairs.append((a, b) if stats[b].nw < 1 else (b, a))
                break
            log_h = log_hastings_merge(stats[a], stats[b], prior)
            ok, u = _accept(log_h, rng)
            outcomes.append(ProposalOutcome("merge", (a, b), log_h, ok, u))
            if ok:
                consumed[a] = consumed[b] = True
                pairs.append((min(a, b), max(a, b)))
                break
    if not pairs:
        return state, nets, z, outcomes

    n = x.shape[0]
    for keep, drop in pairs:
        if stats[drop].nw < 1:
            state.clusters[keep].pi += state.clusters[drop].pi
            log.debug("absorbed empty cluster %d into %d", drop, keep)
            continue
        members_keep = np.flatnonzero(z == keep)
        members_drop = np.flatnonzero(z == drop)
        merged_pi = state.clusters[keep].pi + state.clusters[drop].pi
        comp = weighted_map_estimate(stats[keep] + stats[drop], prior, n)
        comp.pi = merged_pi
        state.clusters[keep] = comp
        z[members_drop] = keep
        idx = np.concatenate([members_keep, members_drop])
        boot = np.r_[np.zeros(members_keep.size, dtype=np.int64),
                     np.ones(members_drop.size, dtype=np.int64)]
        nets.sub[keep], state.subclusters[keep] = new_sub_net(
            x, x[idx], hidden, int(seed_rng.integers(2**31)), prior, boot_labels=boot)
        log.debug("merged cluster %d into %d", drop, keep)

    for drop in sorted((d for _, d in pairs), reverse=True):
        remove_output_unit(nets.cluster, drop)
        del state.clusters[drop]
        del state.subclusters[drop]
        del nets.sub[drop]
        z[z > drop] -= 1
    state.normalize()
    return state, nets, z, outcomes
