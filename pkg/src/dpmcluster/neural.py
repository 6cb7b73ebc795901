"""Single-hidden-layer soft-assignment networks, trained by hand-written backprop.

The same class serves the clustering net (K outputs) and every subclustering
net (two outputs). Output units can be duplicated or removed in place so the
net tracks the current number of clusters.
"""
from dataclasses import dataclass, field

import numpy as np

PARAMS = ("w1", "b1", "w2", "b2")
TARGET_FLOOR = 1e-10
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AssignNet:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    # affine input normalization, applied before the first layer
    x_shift: np.ndarray = None
    x_scale: np.ndarray = None
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if self.x_shift is None:
            self.x_shift = np.zeros(self.d_in)
        if self.x_scale is None:
            self.x_scale = np.ones(self.d_in)
        for name in PARAMS:
            self.m.setdefault(name, np.zeros_like(getattr(self, name)))
            self.v.setdefault(name, np.zeros_like(getattr(self, name)))

    @property
    def d_in(self):
        return self.w1.shape[0]

    @property
    def hidden(self):
        return self.w1.shape[1]

    @property
    def k_out(self):
        return self.w2.shape[1]

    def copy(self):
        return AssignNet(*(getattr(self, p).copy() for p in PARAMS),
                         x_shift=self.x_shift.copy(), x_scale=self.x_scale.copy(),
                         m={k: a.copy() for k, a in self.m.items()},
                         v={k: a.copy() for k, a in self.v.items()}, t=self.t)

    def params(self):
        return {p: getattr(self, p) for p in PARAMS}


def init_net(d_in, h, k_out, seed, x_shift=None, x_scale=None):
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if min(d_in, h, k_out) < 1:
        raise ValueError("network dimensions must be positive")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d_in + h))
    lim2 = np.sqrt(6.0 / (h + k_out))
    return AssignNet(
        w1=rng.uniform(-lim1, lim1, size=(d_in, h)),
        b1=np.zeros(h),
        w2=rng.uniform(-lim2, lim2, size=(h, k_out)),
        b2=np.zeros(k_out),
        x_shift=None if x_shift is None else np.asarray(x_shift, dtype=np.float64).copy(),
        x_scale=None if x_scale is None else np.asarray(x_scale, dtype=np.float64).copy(),
    )


def _hidden(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ValueError(f"expected input of width {net.d_in}, got shape {x.shape}")
    xn = (x - net.x_shift) / net.x_scale
    pre = xn @ net.w1 + net.b1
    return xn, pre, np.maximum(pre, 0.0)


def logits(net, x):
    _, _, hid = _hidden(net, x)
    return hid @ net.w2 + net.b2


def _log_softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    return a - np.log(np.exp(a).sum(axis=1, keepdims=True))


def forward(net, x):
    """Row-stochastic soft assignments for a batch."""
    return np.exp(_log_softmax(logits(net, x)))


def _backprop(net, xn, pre, hid, d_logits):
    grads = {"w2": hid.T @ d_logits, "b2": d_logits.sum(axis=0)}
    d_hid = (d_logits @ net.w2.T) * (pre > 0)
    grads["w1"] = xn.T @ d_hid
    grads["b1"] = d_hid.sum(axis=0)
    return grads


def _softmax_pullback(r, g):
    # d/da of sum_k r_k g_k with g held fixed
    return r * (g - np.sum(r * g, axis=1, keepdims=True))


def kl_cluster_loss_grad(net, x, target):
    """Sum over the batch of KL(net output || target), with gradients.

    ``target`` is treated as a constant and floored at 1e-10 before the log.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape[1] != net.k_out:
        raise ValueError(f"target has {target.shape[1]} columns, net has {net.k_out} outputs")
    xn, pre, hid = _hidden(net, x)
    log_r = _log_softmax(hid @ net.w2 + net.b2)
    r = np.exp(log_r)
    g = log_r - np.log(np.maximum(target, TARGET_FLOOR))
    loss = float(np.sum(r * g))
    return loss, _backprop(net, xn, pre, hid, _softmax_pullback(r, g))


def cross_entropy_loss_grad(net, x, target):
    """Sum over the batch of -sum_k target_k log r_k, with gradients.

    Mass-covering counterpart of the KL loss; its logit gradient is r - target.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape[1] != net.k_out:
        raise ValueError(f"target has {target.shape[1]} columns, net has {net.k_out} outputs")
    xn, pre, hid = _hidden(net, x)
    log_r = _log_softmax(hid @ net.w2 + net.b2)
    loss = float(-np.sum(target * log_r))
    return loss, _backprop(net, xn, pre, hid, np.exp(log_r) - target)


def isotropic_subcluster_loss_grad(net, x, sub_means):
    """Responsibility-weighted squared distance to fixed subcluster means."""
    xn, pre, hid = _hidden(net, x)
    r = np.exp(_log_softmax(hid @ net.w2 + net.b2))
    means = np.asarray(sub_means, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    dist = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    loss = float(np.sum(r * dist))
    return loss, _backprop(net, xn, pre, hid, _softmax_pullback(r, dist))


def adam_step(net, grads, lr):
    """One bias-corrected Adam update, in place; returns ``net``."""
    net.t += 1
    c1 = 1.0 - BETA1 ** net.t
    c2 = 1.0 - BETA2 ** net.t
    for name in PARAMS:
        g = grads[name]
        m = net.m[name]
        v = net.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p = getattr(net, name)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return net


def duplicate_output_unit(net, k, noise_scale=0.0, rng=None):
    """Append a copy of output unit ``k`` (weights, bias and Adam moments)."""
    if not 0 <= k < net.k_out:
        raise IndexError(f"unit {k} out of range for {net.k_out} outputs")
    col = net.w2[:, k].copy()
    bias = net.b2[k]
    if noise_scale > 0:
        rng = np.random.default_rng() if rng is None else rng
        col = col + rng.normal(0.0, noise_scale, size=col.shape)
    net.w2 = np.column_stack([net.w2, col])
    net.b2 = np.append(net.b2, bias)
    for buf in (net.m, net.v):
        buf["w2"] = np.column_stack([buf["w2"], buf["w2"][:, k]])
        buf["b2"] = np.append(buf["b2"], buf["b2"][k])
    return net


def remove_output_unit(net, k):
    """Delete output unit ``k``; the remaining units keep their order."""
    if net.k_out == 1:
        raise ValueError("cannot remove the last output unit")
    if not 0 <= k < net.k_out:
        raise IndexError(f"unit {k} out of range for {net.k_out} outputs")
    net.w2 = np.delete(net.w2, k, axis=1)
    net.b2 = np.delete(net.b2, k)
    for buf in (net.m, net.v):
        buf["w2"] = np.delete(buf["w2"], k, axis=1)
        buf["b2"] = np.delete(buf["b2"], k)
    return net
