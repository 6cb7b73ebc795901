"""Training schedule: fixed-K epochs interleaved with split and merge rounds."""
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from .data_io import RunRecord
from .em import (Nets, _input_scale, em_oracle, kmeans, m_step, new_sub_net, realign_cluster_net, sub_labels_for,
                 train_epoch_fixed_k)
from .model import MixtureState, NIWHyper, as_features, compact_labels
from .neural import init_net
from .split_merge import propose_merges, propose_splits

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    init_k: int = 1
    hidden: int = 50
    batch: int = 128
    lr_cluster: float = 5e-4
    lr_sub: float = 5e-3
    alpha: float = 10.0
    kappa: float = 1e-4
    nu: float = None  # None means d + 2
    psi_scale: float = 0.005
    psi_mode: str = "identity-scale"
    m_mode: str = "data-mean"
    epochs_max: int = 300
    split_every: int = 10
    merge_every: int = 10
    merge_offset: int = 5
    warmup: int = 5
    patience: int = 5
    splits: bool = True
    merges: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.init_k < 1:
            raise ValueError("init_k must be at least 1")
        for name in ("hidden", "batch", "epochs_max", "split_every", "merge_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_cluster", "lr_sub", "alpha", "kappa", "psi_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.m_mode != "data-mean":
            raise ValueError(f"unsupported m_mode {self.m_mode!r}")

    def prior_for(self, x):
        return NIWHyper.default_for(x, alpha=self.alpha, kappa=self.kappa, nu=self.nu,
                                    psi_scale=self.psi_scale, psi_mode=self.psi_mode)

    def proposal_kind(self, epoch):
        """'split', 'merge' or None for a 0-based epoch index."""
        if epoch < self.warmup:
            return None
        if self.splits and epoch % self.split_every == 0:
            return "split"
        if self.merges and (epoch - self.merge_offset) % self.merge_every == 0:
            return "merge"
        return None


def init_model(x, config, prior):
    d = x.shape[1]
    z = kmeans(x, config.init_k, config.seed)
    r = np.zeros((x.shape[0], config.init_k))
    r[np.arange(x.shape[0]), z] = 1.0
    clusters = m_step(x, r, prior)
    seeds = np.random.default_rng([config.seed, 1])
    cluster_net = init_net(d, config.hidden, config.init_k, int(seeds.integers(2**31)),
                           x_shift=x.mean(axis=0), x_scale=_input_scale(x))
    nets = Nets(cluster_net, [])
    subclusters = []
    for k in range(config.init_k):
        net, pair = new_sub_net(x, x[z == k], config.hidden, int(seeds.integers(2**31)), prior)
        nets.sub.append(net)
        subclusters.append(pair)
    return MixtureState(clusters, subclusters), nets, z


def realign(x, state, nets, config, rng):
    sweeps, agree, tv = realign_cluster_net(nets.cluster, x, state, config.batch,
                                            config.lr_cluster, rng)
    log.debug("realigned clustering net in %d sweeps (agreement %.4f, tv %.4f)", sweeps, agree, tv)


def fit(x, config, truth=None, callback=None):
    """Run the full nonparametric training loop and return a RunRecord.

    ``truth`` is consulted only after training, for metrics.
    """
    started = time.perf_counter()
    x = as_features(x)
    prior = config.prior_for(x)
    state, nets, z = init_model(x, config, prior)
    train_rng = np.random.default_rng([config.seed, 2])
    accept_rng = np.random.default_rng([config.seed, 3])
    seed_rng = np.random.default_rng([config.seed, 4])

    realign(x, state, nets, config, train_rng)
    history = []
    k_traj = []
    idle_rounds = 0
    for epoch in range(config.epochs_max):
        nets, state, report, z = train_epoch_fixed_k(x, state, nets, prior, config,
                                                     train_rng, epoch)
        kind = config.proposal_kind(epoch)
        outcomes = []
        if kind == "split":
            zsub = sub_labels_for(nets, x, z)
            state, nets, z, outcomes = propose_splits(x, z, zsub, state, nets, prior,
                                                      accept_rng, config.hidden, seed_rng)
        elif kind == "merge":
            state, nets, z, outcomes = propose_merges(x, z, state, nets, prior,
                                                      accept_rng, config.hidden, seed_rng)
        if any(o.accepted for o in outcomes):
            realign(x, state, nets, config, train_rng)
        if __debug__:
            state.check()
        n_acc = sum(o.accepted for o in outcomes)
        entry = {
            "epoch": epoch,
            "k": state.k,
            "cluster_loss": report.cluster_loss,
            "sub_loss": report.sub_loss,
            "proposal": kind,
            "proposed": len(outcomes),
            "accepted": n_acc,
        }
        history.append(entry)
        k_traj.append(state.k)
        log.info("epoch %d K=%d loss=%.4g %s", epoch, state.k, report.cluster_loss,
                 f"{kind}: {n_acc}/{len(outcomes)} accepted" if kind else "")
        if callback is not None:
            callback(epoch, state, z)
        if outcomes:
            idle_rounds = 0 if n_acc else idle_rounds + 1
            if idle_rounds >= config.patience:
                break

    labels, _ = compact_labels(z)
    occupied = sorted(set(int(v) for v in np.unique(z)))
    clusters = [state.clusters[k] for k in occupied]
    record = RunRecord(config=asdict(config), seed=config.seed, labels=labels,
                       k_trajectory=k_traj, history=history, clusters=clusters)
    if truth is not None:
        record.metrics = evaluate(x, labels, truth)
    record.wall_clock_sec = time.perf_counter() - started
    return record


def evaluate(x, pred, truth):
    out = {
        "acc": metrics.clustering_accuracy(pred, truth),
        "nmi": metrics.nmi(pred, truth),
        "ari": metrics.ari(pred, truth),
        "silhouette": None,
    }
    if np.unique(pred).size >= 2:
        out["silhouette"] = metrics.silhouette(x, pred)
    return out


def run_oracle_em(x, k, config, truth=None, tol=1e-9):
    """Classical Bayesian EM at fixed K with the same prior as ``fit``."""
    started = time.perf_counter()
    x = as_features(x)
    prior = config.prior_for(x)
    state, z, trace = em_oracle(x, k, prior, config.epochs_max, config.seed, tol=tol)
    labels, _ = compact_labels(z)
    record = RunRecord(config=asdict(config), seed=config.seed, labels=labels,
                       k_trajectory=[k] * (len(trace) - 1), clusters=state.clusters,
                       history=[{"epoch": i, "log_posterior": float(v)}
                                for i, v in enumerate(trace[1:])],
                       extra={"log_posterior_trace": [float(v) for v in trace]})
    if truth is not None:
        record.metrics = evaluate(x, labels, truth)
    record.wall_clock_sec = time.perf_counter() - started
    return record
