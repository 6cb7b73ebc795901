"""Post-run figures written next to the run artifacts."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402


def plot_k_trajectory(k_trajectory, path, true_k=None):
    """Line plot of the number of clusters after every epoch."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.step(np.arange(len(k_trajectory)), k_trajectory, where="post", color="tab:blue")
    if true_k is not None:
        ax.axhline(true_k, color="tab:gray", linestyle="--", linewidth=1, label=f"true K = {true_k}")
        ax.legend(loc="lower right")
    ax.set_xlabel("epoch")
    ax.set_ylabel("K")
    ax.yaxis.set_major_locator(MaxNLocator(integer=True))
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_clusters_2d(x, labels, path, clusters=()):
    """Scatter of 2-D points coloured by label, with one-sigma ellipses if given."""
    x = np.asarray(x)
    if x.shape[1] != 2:
        raise ValueError("cluster scatter needs 2-D features")
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    ax.scatter(x[:, 0], x[:, 1], c=labels, s=2, cmap="tab20", linewidths=0)
    t = np.linspace(0.0, 2.0 * np.pi, 100)
    circle = np.stack([np.cos(t), np.sin(t)])
    for c in clusters:
        vals, vecs = np.linalg.eigh(c.sigma)
        ring = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ circle
        ax.plot(c.mu[0] + ring[0], c.mu[1] + ring[1], color="black", linewidth=0.8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_figures(record, x, out_dir, true_k=None):
    """Render the figures for a finished run; returns the written paths."""
    out_dir = Path(out_dir)
    paths = [plot_k_trajectory(record.k_trajectory, out_dir / "k_trajectory.png", true_k)]
    if x.shape[1] == 2:
        paths.append(plot_clusters_2d(x, record.labels, out_dir / "clusters.png", record.clusters))
    return paths
