"""Desk-scale evaluation: discriminative, predictive, and correlational
scores for comparing a generated window set against real data."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numcore import AdamState, Mlp, RngStream, adam_update, mlp_apply, \
    mlp_gradients

HIDDEN = 32
TRAIN_STEPS = 500
BATCH = 64


@dataclass
class MetricReport:
    name: str
    value: float
    seed: int
    config_hash: str = ""
    auxiliary: dict = field(default_factory=dict)

    @classmethod
    def build(cls, name, value, seed, config: dict, aux=None):
        digest = hashlib.sha256(repr(sorted(config.items())).encode()).hexdigest()
        return cls(name, float(value), seed, digest[:12], aux or {})


def _as_windows(ds):
    w = ds.windows if hasattr(ds, "windows") else np.asarray(ds)
    return np.asarray(w, dtype=np.float64)


def _train_net(dims, x, y, rng: RngStream, kind: str):
    """Fit a small MLP with Adam; kind is "logistic" or "l2"."""
    net = Mlp.init(dims, rng.child(1))
    opt = AdamState.create(_net_params(net), lr=1e-3)
    gen = rng.child(2).generator()
    n = x.shape[0]
    for _ in range(TRAIN_STEPS):
        idx = gen.integers(0, n, size=min(BATCH, n))
        out, tape = mlp_apply(net, x[idx])
        if kind == "logistic":
            p = 1.0 / (1.0 + np.exp(-out))
            upstream = (p - y[idx]) / idx.size
        else:
            upstream = 2.0 * (out - y[idx]) / out.size
        wg, bg, _ = mlp_gradients(net, tape, upstream)
        grads = {}
        for i, (gw, gb) in enumerate(zip(wg, bg)):
            grads[f"W{i}"] = gw
            grads[f"b{i}"] = gb
        adam_update(opt, _net_params(net), grads)
        net.bump_version()
    return net


def _net_params(net):
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"W{i}"] = w
        out[f"b{i}"] = b
    return out


def discriminative_score(real, gen, rng: RngStream) -> float:
    """|test accuracy - 0.5| of a small classifier separating real from
    generated windows (80/20 split). 0 means indistinguishable."""
    rw = _as_windows(real)
    gw = _as_windows(gen)
    if rw.shape[0] < 64 or gw.shape[0] < 64:
        raise ContractViolation("need at least 64 windows per side")
    x = np.concatenate([rw.reshape(rw.shape[0], -1),
                        gw.reshape(gw.shape[0], -1)])
    y = np.concatenate([np.ones((rw.shape[0], 1)), np.zeros((gw.shape[0], 1))])
    order = rng.child(0).generator().permutation(x.shape[0])
    x, y = x[order], y[order]
    split = int(0.8 * x.shape[0])
    net = _train_net([x.shape[1], HIDDEN, 1], x[:split], y[:split],
                     rng.child(10), "logistic")
    logits, _ = mlp_apply(net, x[split:])
    acc = float(np.mean((logits > 0) == (y[split:] > 0.5)))
    return abs(acc - 0.5)


def predictive_score(real, gen, rng: RngStream) -> float:
    """Train-on-synthetic test-on-real one-step-ahead MAE."""
    rw = _as_windows(real)
    gw = _as_windows(gen)
    if rw.shape[1] < 2 or gw.shape[1] < 2:
        raise ContractViolation("need seq_len >= 2 for one-step prediction")
    d = gw.shape[2]

    def pairs(w):
        return (w[:, :-1].reshape(-1, d), w[:, 1:].reshape(-1, d))

    gx, gy = pairs(gw)
    net = _train_net([d, HIDDEN, d], gx, gy, rng.child(20), "l2")
    rx, ry = pairs(rw)
    pred, _ = mlp_apply(net, rx)
    return float(np.mean(np.abs(pred - ry)))


def _corr_matrix(w):
    """Lag-0 cross-channel correlations pooled over all timesteps; pairs
    touching a zero-variance channel are defined as 0."""
    flat = w.reshape(-1, w.shape[2])
    std = flat.std(axis=0)
    dead = std == 0.0
    if np.any(dead):
        warnings.warn("zero-variance channel: correlations set to 0",
                      stacklevel=2)
    safe = np.where(dead, 1.0, std)
    centered = (flat - flat.mean(axis=0)) / safe
    corr = centered.T @ centered / flat.shape[0]
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    return corr


def correlational_score(real, gen) -> float:
    """Mean absolute difference of lag-0 cross-channel correlation
    matrices (strict upper triangle). 0 for D = 1."""
    rw = _as_windows(real)
    gw = _as_windows(gen)
    d = rw.shape[2]
    if d < 2:
        return 0.0
    iu = np.triu_indices(d, k=1)
    diff = np.abs(_corr_matrix(rw)[iu] - _corr_matrix(gw)[iu])
    return float(diff.mean())
