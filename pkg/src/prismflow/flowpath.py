"""Conditional flow-matching primitives: linear path, target velocity,
the global velocity estimator, and the CFM regression loss."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericError, ShapeError
from .numcore import mlp_apply, mlp_gradients

DEFAULT_TIME_FREQS = (1.0, 2.0, 4.0, 8.0)


def time_features(t, freqs=DEFAULT_TIME_FREQS) -> np.ndarray:
    """Fourier features of flow time: [sin(2*pi*f*t), cos(2*pi*f*t)] per f.

    Scalar t -> (2F,); array (B,) -> (B, 2F).
    """
    t = np.asarray(t, dtype=np.float64)
    ang = 2.0 * np.pi * np.multiply.outer(t, np.asarray(freqs))
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def interpolate_state(x0: np.ndarray, x1: np.ndarray, t) -> np.ndarray:
    """Linear path point (1-t)*x0 + t*x1.

    t may be a scalar or a per-sample vector broadcast over leading axis.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (1.0 - t) * x0 + t * x1


def target_velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Constant path velocity x1 - x0 (independent of t)."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x1.shape}")
    return x1 - x0


def encoder_input(model, x, t) -> np.ndarray:
    """Flattened state concatenated with time features. Batched: (B, S*D + 2F)."""
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    flat = x.reshape(b, -1)
    return np.concatenate([flat, time_features(t, model.cfg.time_freqs)], axis=1)


def encode(model, x, t):
    """Shared trunk features h_t for a batch of states. Returns (h, tape)."""
    return mlp_apply(model.encoder, encoder_input(model, x, t))


def global_velocity(model, x, t) -> np.ndarray:
    """Global transport field evaluated on a batch: (B, S, D)."""
    h, _ = encode(model, x, t)
    v, _ = mlp_apply(model.head, h)
    if not np.all(np.isfinite(v)):
        raise NumericError("global velocity produced non-finite values")
    return v.reshape(x.shape)


def cfm_loss(model, x0, x1, t):
    """Flow-matching regression loss and its gradients w.r.t. the global
    estimator (encoder trunk + velocity head).

    Loss is the mean over batch and elements of the squared velocity
    error, so its scale is independent of sequence length and channels.
    Returns (loss, grads) with grads keyed like model.params().
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ContractViolation("cfm_loss: empty batch")
    b = x0.shape[0]
    xt = interpolate_state(x0, x1, t)
    u = target_velocity(x0, x1).reshape(b, -1)

    h, enc_tape = encode(model, xt, t)
    v, head_tape = mlp_apply(model.head, h)
    resid = v - u
    loss = float(np.mean(resid * resid))

    dv = 2.0 * resid / resid.size
    hw, hb, dh = mlp_gradients(model.head, head_tape, dv)
    ew, eb, _ = mlp_gradients(model.encoder, enc_tape, dh)

    grads = model.zero_grads()
    model.pack_mlp_grads(grads, "head", hw, hb)
    model.pack_mlp_grads(grads, "encoder", ew, eb)
    return loss, grads
