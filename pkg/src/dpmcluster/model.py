"""Shared domain types: features, labels, hyperparameters and mixture state."""
from dataclasses import dataclass, field

import numpy as np

from .numerics import cholesky_logdet


def as_features(x):
    """Validate and return an (n, d) float64 feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"features must be a non-empty (n, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
    return x


def compact_labels(z):
    """Relabel to contiguous 0..K'-1, preserving the order of the original values.

    Returns the new labels and the old->new mapping.
    """
    z = np.asarray(z, dtype=np.int64)
    values, inverse = np.unique(z, return_inverse=True)
    mapping = {int(v): i for i, v in enumerate(values)}
    return inverse.astype(np.int64).reshape(z.shape), mapping


def check_responsibilities(r, atol=1e-9):
    r = np.asarray(r)
    if r.ndim != 2:
        raise ValueError(f"responsibilities must be 2-d, got shape {r.shape}")
    if np.any(r < 0) or np.any(r > 1 + atol):
        raise ValueError("responsibilities outside [0, 1]")
    if not np.allclose(r.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ValueError("responsibility rows do not sum to 1")
    return r


@dataclass
class NIWHyper:
    """NIW prior (m, kappa, nu, psi) plus the DP concentration alpha."""

    m: np.ndarray
    kappa: float
    nu: float
    psi: np.ndarray
    alpha: float = 10.0

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64).reshape(-1)
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=np.float64))
        d = self.m.shape[0]
        if self.psi.shape != (d, d):
            raise ValueError(f"psi shape {self.psi.shape} does not match mean dim {d}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.nu > d - 1:
            raise ValueError(f"nu must exceed d - 1 = {d - 1}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        cholesky_logdet(self.psi)

    @property
    def d(self):
        return self.m.shape[0]

    @classmethod
    def default_for(cls, x, alpha=10.0, kappa=1e-4, nu=None, psi_scale=0.005,
                    psi_mode="identity-scale"):
        """Weak prior centred on the data mean."""
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[1]
        if psi_mode == "identity-scale":
            psi = np.eye(d) * psi_scale
        elif psi_mode == "data-std-scale":
            psi = np.eye(d) * float(np.std(x)) * psi_scale
        else:
            raise ValueError(f"unknown psi_mode {psi_mode!r}")
        return cls(m=x.mean(axis=0), kappa=kappa, nu=d + 2.0 if nu is None else nu,
                   psi=psi, alpha=alpha)


@dataclass
class GaussianComponent:
    mu: np.ndarray
    sigma: np.ndarray
    pi: float

    def copy(self):
        return GaussianComponent(self.mu.copy(), self.sigma.copy(), float(self.pi))


@dataclass
class MixtureState:
    """K clusters, each carrying a two-component subcluster mixture."""

    clusters: list
    subclusters: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.clusters)

    @property
    def weights(self):
        return np.array([c.pi for c in self.clusters])

    @property
    def means(self):
        return np.stack([c.mu for c in self.clusters])

    def normalize(self):
        total = sum(c.pi for c in self.clusters)
        for c in self.clusters:
            c.pi = c.pi / total

    def copy(self):
        return MixtureState([c.copy() for c in self.clusters],
                            [(a.copy(), b.copy()) for a, b in self.subclusters])

    def check(self, atol=1e-9):
        if self.k < 1:
            raise ValueError("mixture needs at least one cluster")
        if abs(self.weights.sum() - 1.0) > atol:
            raise ValueError("cluster weights do not sum to 1")
        if len(self.subclusters) != self.k:
            raise ValueError("subcluster list out of step with clusters")
        for a, b in self.subclusters:
            if abs(a.pi + b.pi - 1.0) > atol:
                raise ValueError("subcluster weights do not sum to 1")
