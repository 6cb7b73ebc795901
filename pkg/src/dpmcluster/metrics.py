"""Clustering evaluation: ACC, NMI, ARI and silhouette."""
from math import comb

import numpy as np
from scipy.optimize import linear_sum_assignment


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"label lengths differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def contingency(pred, truth):
    """Counts matrix with rows indexed by predicted cluster, columns by true class."""
    pred, truth = _pair(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1 if p.size else 0, t.max() + 1 if t.size else 0), dtype=np.int64)
    np.add.at(table, (p.ravel(), t.ravel()), 1)
    return table


def hungarian(cost):
    """Minimum-cost perfect matching on a square matrix; returns column per row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(cost.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def clustering_accuracy(pred, truth):
    table = contingency(pred, truth)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:table.shape[0], :table.shape[1]] = table
    match = hungarian(-padded)
    return float(padded[np.arange(size), match].sum()) / len(np.asarray(pred))


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth):
    """2 I(y; z) / (H(y) + H(z)) in nats."""
    table = contingency(pred, truth)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0 or h_true == 0:
        return 1.0 if h_pred == h_true else 0.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return max(0.0, min(1.0, 2.0 * mi / (h_pred + h_true)))


def ari(pred, truth):
    table = contingency(pred, truth)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two points")
    sum_cells = sum(comb(int(c), 2) for c in table.ravel())
    sum_rows = sum(comb(int(c), 2) for c in table.sum(axis=1))
    sum_cols = sum(comb(int(c), 2) for c in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both partitions trivial in the same way
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def silhouette(x, labels, chunk=256):
    """Mean silhouette with Euclidean distance; singleton clusters score 0."""
    x = np.asarray(x, dtype=np.float64)
    _, z = np.unique(np.asarray(labels), return_inverse=True)
    z = z.ravel()
    k = z.max() + 1
    if k < 2:
        raise ValueError("silhouette needs at least two clusters")
    counts = np.bincount(z, minlength=k).astype(np.float64)
    onehot = np.zeros((x.shape[0], k))
    onehot[np.arange(x.shape[0]), z] = 1.0
    scores = np.zeros(x.shape[0])
    for start in range(0, x.shape[0], chunk):
        stop = min(start + chunk, x.shape[0])
        d2 = np.zeros((stop - start, x.shape[0]))
        for j in range(x.shape[1]):
            d2 += (x[start:stop, j, None] - x[None, :, j]) ** 2
        dist = np.sqrt(d2)
        sums = dist @ onehot
        own = z[start:stop]
        rows = np.arange(stop - start)
        own_n = counts[own]
        a = np.where(own_n > 1, sums[rows, own] / np.maximum(own_n - 1, 1), 0.0)
        mean_other = sums / counts
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        scores[start:stop] = np.where(own_n > 1, s, 0.0)
    return float(scores.mean())
