"""Feature/label files, synthetic mixtures, imbalance subsampling and run artifacts."""
import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_features(path):
    """Load an (n, d) matrix from comma-separated text.

    A first line with any non-numeric cell is treated as a header.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty feature file")
    if not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {i}, column {j}") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: non-finite value {cell!r} at row {i}, column {j}")
            out[i, j] = v
    return out


def read_labels(path):
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if lines and not lines[0].lstrip("-").isdigit():
        lines = lines[1:]
    if not lines:
        raise DataError(f"{path}: empty label file")
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _atomic_write(path, data):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _matrix_csv(a):
    a = np.atleast_2d(a)
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in a)


def write_features(path, x):
    _atomic_write(path, _matrix_csv(x))


def write_labels(path, z):
    _atomic_write(path, "".join(f"{int(v)}\n" for v in z))


def _random_spd(rng, d, cond=10.0, scale=1.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eig = scale * rng.uniform(1.0 / cond, 1.0, size=d)
    return (q * eig) @ q.T


def generate_gmm(k, n, d, separation, weights=None, seed=0, max_tries=10_000):
    """Sample a well-separated anisotropic Gaussian mixture.

    Means are placed by rejection so every pair sits at least
    ``separation`` times the mean component standard deviation apart.
    Returns ``(x, labels, params)`` with params holding means, covs, weights.
    """
    if min(k, n, d) < 1:
        raise ValueError("k, n and d must all be at least 1")
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = np.full(k, 1.0 / k)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a length-k probability vector")
    covs = np.stack([_random_spd(rng, d) for _ in range(k)])
    mean_std = float(np.mean([np.sqrt(np.trace(c) / d) for c in covs]))
    min_dist = separation * mean_std
    half_box = max(min_dist, 1.0) * k ** (1.0 / d)
    means = []
    tries = 0
    while len(means) < k:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {k} means {min_dist:.3g} apart")
        cand = rng.uniform(-half_box, half_box, size=d)
        if all(np.linalg.norm(cand - m) >= min_dist for m in means):
            means.append(cand)
    means = np.stack(means)
    labels = rng.choice(k, size=n, p=weights)
    x = np.empty((n, d))
    for j in range(k):
        idx = np.flatnonzero(labels == j)
        x[idx] = rng.multivariate_normal(means[j], covs[j], size=idx.size)
    params = {"means": means, "covs": covs, "weights": weights, "mean_std": mean_std}
    return x, labels, params


def imbalance_subsample(x, labels, proportions=None, seed=0):
    """Undersample each class to a fraction of its size.

    With ``proportions=None`` a class histogram is drawn from a flat
    Dirichlet and scaled so the largest class is kept in full. Returns
    ``(x_sub, labels_sub, kept_indices, proportions)``.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    rng = np.random.default_rng(seed)
    sizes = np.array([np.sum(labels == c) for c in classes])
    if proportions is None:
        hist = rng.dirichlet(np.ones(classes.size))
        # largest feasible total for the drawn histogram
        share = hist / sizes
        proportions = hist / share.max() / sizes
    proportions = np.asarray(proportions, dtype=np.float64)
    if proportions.shape != classes.shape:
        raise ValueError(f"need {classes.size} proportions, got {proportions.size}")
    if np.any(proportions <= 0) or np.any(proportions > 1):
        raise ValueError("proportions must lie in (0, 1]")
    kept = []
    for c, p, size in zip(classes, proportions, sizes):
        members = np.flatnonzero(labels == c)
        take = int(round(p * size))
        if take == 0:
            raise DataError(f"class {c} would keep no members")
        kept.append(np.sort(rng.choice(members, size=take, replace=False)))
    kept = np.sort(np.concatenate(kept))
    return x[kept], labels[kept], kept, proportions


@dataclass
class RunRecord:
    config: dict
    seed: int
    labels: np.ndarray
    k_trajectory: list
    history: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def final_k(self):
        return int(np.unique(self.labels).size)

    def summary(self):
        out = {
            "final_k": self.final_k,
            "k_trajectory": [int(k) for k in self.k_trajectory],
            "acc": self.metrics.get("acc"),
            "nmi": self.metrics.get("nmi"),
            "ari": self.metrics.get("ari"),
            "silhouette": self.metrics.get("silhouette"),
            "config": self.config,
            "seed": int(self.seed),
            "epochs": len(self.history),
            "history": self.history,
            "wall_clock_sec": float(self.wall_clock_sec),
        }
        out.update(self.extra)
        return out


def write_run(record, out_dir):
    """Write labels.csv, summary.json and per-cluster parameter CSVs."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_labels(out_dir / "labels.csv", record.labels)
        _atomic_write(out_dir / "summary.json",
                      json.dumps(record.summary(), indent=2, sort_keys=True) + "\n")
        if record.clusters:
            params = out_dir / "params"
            params.mkdir(exist_ok=True)
            for k, c in enumerate(record.clusters):
                _atomic_write(params / f"cluster_{k}_mean.csv", _matrix_csv(c.mu))
                _atomic_write(params / f"cluster_{k}_cov.csv", _matrix_csv(c.sigma))
            _atomic_write(params / "weights.csv",
                          "".join(f"{float(c.pi)!r}\n" for c in record.clusters))
    except OSError as exc:
        raise OSError(f"failed writing run artifacts to {out_dir}: {exc}") from exc
    return out_dir
