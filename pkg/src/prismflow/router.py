"""Routing and competition: categorical expert routing, endpoint
estimation, confidence-aware winner-take-all scoring, the masked WTA
loss, and the load-balancing regularizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericError, ShapeError
from .experts import operator_grads
from .flowpath import encode, interpolate_state, time_features
from .numcore import mlp_apply, mlp_gradients


@dataclass
class WtaConfig:
    beta: float = 0.01  # confidence weight on -log(prob)
    eps: float = 1e-8  # stabilizer inside the log
    prob_floor: float = 1e-8  # clamp for the balance KL

    def validate(self) -> None:
        if self.beta < 0:
            raise ContractViolation("beta must be >= 0")
        if self.eps <= 0:
            raise ContractViolation("eps must be > 0")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def route(model, t, h):
    """Categorical expert probabilities for a batch of trunk features.

    Returns (probs, logits, tape, router_input); probs rows are strictly
    positive and sum to 1.
    """
    tf = time_features(t, model.cfg.time_freqs)
    rin = np.concatenate([tf, h], axis=-1)
    logits, tape = mlp_apply(model.router, rin)
    if not np.all(np.isfinite(logits)):
        raise NumericError("router produced non-finite logits")
    return softmax(logits), logits, tape, rin


def estimate_endpoint(x_t, t, v_global, v_expert):
    """Linear extrapolation to t=1 along the constant-velocity path:
    x_t + (1 - t) * (v_global + v_expert)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if np.shape(v_global) != x_t.shape or np.shape(v_expert) != x_t.shape:
        raise ShapeError("velocity shape does not match state shape")
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape((-1,) + (1,) * (x_t.ndim - 1))
    return x_t + (1.0 - t) * (v_global + v_expert)


def wta_scores(endpoints, x1, probs, cfg: WtaConfig):
    """Confidence-aware scores, one per expert.

    endpoints: (K, ...) candidate endpoints for one sample, or a list.
    Score = element-mean squared endpoint error - beta*log(prob + eps).
    """
    cfg.validate()
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ContractViolation("routing probabilities must be nonnegative")
    x1 = np.asarray(x1, dtype=np.float64)
    scores = []
    for k, xhat in enumerate(endpoints):
        err = np.asarray(xhat) - x1
        mse = float(np.mean(err * err))
        scores.append(mse - cfg.beta * np.log(probs[k] + cfg.eps))
    return np.asarray(scores)


def select_winner(scores) -> int:
    """Argmin with smallest-index tie-breaking."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 1:
        raise ContractViolation("need at least one score")
    if np.any(np.isnan(scores)):
        raise NumericError("NaN score in winner selection")
    return int(np.argmin(scores))


@dataclass
class WtaBatchInfo:
    """Per-batch routing diagnostics from a wta_loss evaluation."""

    winners: np.ndarray  # (B,) int
    scores: np.ndarray  # (B, K)
    probs: np.ndarray  # (B, K)
    endpoint_mses: np.ndarray  # (B, K)


def wta_loss(model, x0, x1, t, cfg: WtaConfig, lam=None, winners=None,
             frozen_v_global=None, update_encoder=True):
    """Masked winner-take-all loss over a batch, with exact gradients.

    Gradient routing: the winning expert's (S, R), the shared projector
    and decoder, and the router (through the confidence term only)
    receive gradients; non-winning expert blocks get exactly zero. The
    global velocity inside the endpoint estimate is treated as a
    constant, so the global head gets no WTA gradient. `frozen_v_global`
    supplies that constant explicitly (finite-difference harnesses);
    otherwise it is computed from the current head and detached.

    Returns (loss, grads, WtaBatchInfo).
    """
    cfg.validate()
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    b = x0.shape[0]
    if b == 0:
        raise ContractViolation("wta_loss: empty batch")
    t = np.asarray(t, dtype=np.float64).reshape(b)
    sd = x1[0].size
    kk = model.n_experts
    lam = np.ones(b) if lam is None else np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ContractViolation("lambda weights must be >= 0")

    xt = interpolate_state(x0, x1, t).reshape(b, sd)
    x1f = x1.reshape(b, sd)
    h, enc_tape = encode(model, xt.reshape(x0.shape), t)

    if frozen_v_global is None:
        v_g, _ = mlp_apply(model.head, h)  # value only; no grad to head
    else:
        v_g = np.asarray(frozen_v_global, dtype=np.float64).reshape(b, sd)

    probs, _, router_tape, _ = route(model, t, h)

    z, proj_tape = mlp_apply(model.projector, h)
    ops = [model.operator(k) for k in range(kk)]
    az = [z @ ops[k].T for k in range(kk)]
    resid, dec_tapes = [], []
    for k in range(kk):
        r, tape = mlp_apply(model.decoder, np.concatenate([z, az[k]], axis=1))
        resid.append(r)
        dec_tapes.append(tape)

    one_minus_t = (1.0 - t)[:, None]
    errs = [xt + one_minus_t * (v_g + resid[k]) - x1f for k in range(kk)]
    mses = np.stack([np.mean(e * e, axis=1) for e in errs], axis=1)  # (B, K)
    scores = mses - cfg.beta * np.log(probs + cfg.eps)

    if winners is None:
        winners = np.argmin(scores, axis=1)
    winners = np.asarray(winners, dtype=np.int64)
    rows = np.arange(b)
    loss = float(np.mean(lam * scores[rows, winners]))

    # backward; per-sample weight of its winning score in the batch mean
    w = lam / b
    grads = model.zero_grads()
    dz_total = np.zeros_like(z)
    for k in range(kk):
        mask = winners == k
        if not np.any(mask):
            continue  # masked expert: exactly zero gradient
        derr = np.zeros((b, sd))
        derr[mask] = (2.0 / sd) * w[mask, None] * errs[k][mask]
        dresid = one_minus_t * derr
        dw, db, din = mlp_gradients(model.decoder, dec_tapes[k], dresid)
        model.pack_mlp_grads(grads, "decoder", dw, db)
        dz_dec = din[:, : model.cfg.latent_dim]
        da = din[:, model.cfg.latent_dim:]
        dz_total += dz_dec + da @ ops[k]
        d_op = da.T @ z  # dL/dA^k, winner rows only (others are zero)
        ds, dr = operator_grads(model.expert_s[k], model.expert_r[k], d_op)
        grads[f"expert{k}.S"] += ds
        grads[f"expert{k}.R"] += dr

    pw, pb, dh_expert = mlp_gradients(model.projector, proj_tape, dz_total)
    model.pack_mlp_grads(grads, "projector", pw, pb)

    # confidence term: only the winner's -beta*log(prob + eps) is live
    p_win = probs[rows, winners]
    dprob_win = -cfg.beta * w / (p_win + cfg.eps)
    coef = dprob_win * p_win
    onehot = np.zeros((b, kk))
    onehot[rows, winners] = 1.0
    dlogits = coef[:, None] * (onehot - probs)
    rw, rb, drin = mlp_gradients(model.router, router_tape, dlogits)
    model.pack_mlp_grads(grads, "router", rw, rb)

    if update_encoder:
        tf_dim = 2 * len(model.cfg.time_freqs)
        dh = dh_expert + drin[:, tf_dim:]
        ew, eb, _ = mlp_gradients(model.encoder, enc_tape, dh)
        model.pack_mlp_grads(grads, "encoder", ew, eb)

    info = WtaBatchInfo(winners=winners, scores=scores, probs=probs,
                        endpoint_mses=mses)
    return loss, grads, info


def balance_loss(probs, prob_floor: float = 1e-8) -> float:
    """KL(uniform || batch-mean routing distribution), clamped below.

    Zero iff the batch-average routing is uniform (up to the clamp).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ContractViolation("balance_loss expects a (B, K) batch of simplices")
    kk = probs.shape[1]
    pibar = np.maximum(probs.mean(axis=0), prob_floor)
    u = 1.0 / kk
    return float(np.sum(u * (np.log(u) - np.log(pibar))))


def balance_loss_and_grads(model, x0, x1, t, cfg: WtaConfig, h_override=None):
    """Balance regularizer with gradients to the router body only.

    The trunk features feeding the router are treated as constants here;
    the balance term regularizes routing, not the representation.
    `h_override` pins those features explicitly (finite-difference use).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    b = x0.shape[0]
    t = np.asarray(t, dtype=np.float64).reshape(b)
    if h_override is None:
        xt = interpolate_state(x0, x1, t)
        h, _ = encode(model, xt, t)
    else:
        h = np.asarray(h_override, dtype=np.float64)
    probs, _, tape, _ = route(model, t, h)
    loss = balance_loss(probs, cfg.prob_floor)

    kk = probs.shape[1]
    pibar = probs.mean(axis=0)
    live = pibar > cfg.prob_floor
    dpibar = np.where(live, -(1.0 / kk) / np.maximum(pibar, cfg.prob_floor), 0.0)
    dprobs = np.tile(dpibar / b, (b, 1))
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    dlogits = probs * (dprobs - inner)
    rw, rb, _ = mlp_gradients(model.router, tape, dlogits)
    grads = model.zero_grads()
    model.pack_mlp_grads(grads, "router", rw, rb)
    return loss, grads, probs
