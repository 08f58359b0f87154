"""Combined training objective, optimization loop, and checkpointing."""

from __future__ import annotations

import configparser
import json
import time
from dataclasses import dataclass, asdict

import numpy as np

from .checkpoint import atomic_write_text
from .errors import ConfigError, ContractViolation, NumericError
from .flowpath import cfm_loss, encode, interpolate_state
from .model import ModelConfig, PrismFlowModel
from .numcore import AdamState, RngStream, adam_update, mlp_apply
from .router import WtaConfig, balance_loss_and_grads, wta_loss

LAMBDA_KINDS = ("constant", "linear-ramp", "late-gate")


@dataclass
class TrainConfig:
    alpha_w: float = 1.0
    alpha_b: float = 0.005
    lambda_kind: str = "constant"
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    n_experts: int = 4
    seed: int = 0
    beta: float = 0.01
    wta_eps: float = 1e-8
    prob_floor: float = 1e-8
    wta_updates_encoder: bool = True
    divergence_guard: float = 1e6

    def validate(self) -> None:
        if self.alpha_w < 0 or self.alpha_b < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_kind not in LAMBDA_KINDS:
            raise ConfigError(f"unknown lambda schedule {self.lambda_kind!r}")

    def wta(self) -> WtaConfig:
        return WtaConfig(beta=self.beta, eps=self.wta_eps,
                         prob_floor=self.prob_floor)


def lambda_schedule(kind: str, t):
    """Time weighting for the WTA term: constant 1, a linear ramp in t,
    or a hard gate that trains competition only on the late half of the
    path, where the interpolant already resembles the data."""
    t = np.asarray(t, dtype=np.float64)
    if kind == "constant":
        return np.ones_like(t)
    if kind == "linear-ramp":
        return t.copy()
    if kind == "late-gate":
        return (t > 0.5).astype(np.float64)
    raise ConfigError(f"unknown lambda schedule {kind!r}")


def total_loss(model, x0, x1, t, cfg: TrainConfig, winners=None,
               frozen_v_global=None, frozen_h_balance=None):
    """Weighted sum of the three objectives with routed gradients.

    Routing: global head <- CFM only; trunk encoder <- CFM + WTA;
    projector/decoder/winning experts <- WTA; router <- WTA confidence
    term + balance. Returns (value, grads, parts, wta_info).
    """
    cfg.validate()
    wcfg = cfg.wta()
    lam = lambda_schedule(cfg.lambda_kind, t)

    c_val, grads = cfm_loss(model, x0, x1, t)
    w_val, w_grads, info = wta_loss(
        model, x0, x1, t, wcfg, lam=lam, winners=winners,
        frozen_v_global=frozen_v_global,
        update_encoder=cfg.wta_updates_encoder)
    b_val, b_grads, _ = balance_loss_and_grads(
        model, x0, x1, t, wcfg, h_override=frozen_h_balance)

    for name in grads:
        grads[name] += cfg.alpha_w * w_grads[name] + cfg.alpha_b * b_grads[name]
    value = c_val + cfg.alpha_w * w_val + cfg.alpha_b * b_val
    parts = {"cfm": c_val, "wta": w_val, "bal": b_val}
    return value, grads, parts, info


def frozen_total_loss_fn(model, x0, x1, t, cfg: TrainConfig):
    """Closure for the finite-difference oracle.

    Detached quantities (the global velocity inside the WTA endpoint,
    the winner assignment, and the trunk features feeding the balance
    term) are pinned at their current values so central differences see
    the same function the routed analytic gradient differentiates.
    """
    b = np.asarray(x0).shape[0]
    tt = np.asarray(t, dtype=np.float64).reshape(b)
    xt = interpolate_state(x0, x1, tt)
    h0, _ = encode(model, xt, tt)
    v0, _ = mlp_apply(model.head, h0)
    _, _, _, info = total_loss(model, x0, x1, tt, cfg)

    def fn(_params):
        value, grads, _, _ = total_loss(
            model, x0, x1, tt, cfg, winners=info.winners,
            frozen_v_global=v0, frozen_h_balance=h0)
        return value, grads

    return fn


def train_step(model, opt: AdamState, x1_batch, rng: RngStream,
               cfg: TrainConfig):
    """One optimizer step: draw (x0, t), evaluate the objective, update."""
    gen = rng.generator()
    b = x1_batch.shape[0]
    x0 = gen.standard_normal(x1_batch.shape)
    t = gen.uniform(0.0, 1.0, size=b)
    value, grads, parts, info = total_loss(model, x0, x1_batch, t, cfg)
    if not np.isfinite(value):
        worst = int(np.argmax(~np.isfinite(info.scores).all(axis=1)))
        raise NumericError(f"non-finite loss at sample index {worst}")
    if value > cfg.divergence_guard:
        raise NumericError(f"training diverged: loss {value:.3e} exceeds guard")
    if cfg.lr != 0.0:
        adam_update(opt, model.params(), grads)
        model.bump_versions()
    metrics = {"total": value, **parts,
               "usage": np.bincount(info.winners, minlength=model.n_experts)}
    return metrics


@dataclass
class TrainReport:
    """Per-epoch training records, serializable as JSON lines."""

    epochs: list

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(row) for row in self.epochs) + "\n"

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_jsonl())


def fit(windows, model_cfg: ModelConfig, cfg: TrainConfig,
        norm_shift=None, norm_scale=None, log=None):
    """Train a model from scratch on an array of windows (n, S, D).

    Returns (model, TrainReport). Deterministic given (configs, seed).
    """
    cfg.validate()
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ContractViolation("fit expects a nonempty (n, S, D) window array")
    model_cfg.seq_len = windows.shape[1]
    model_cfg.channels = windows.shape[2]
    model_cfg.n_experts = cfg.n_experts

    root = RngStream(cfg.seed)
    model = PrismFlowModel.init(model_cfg, root)
    if norm_shift is not None:
        model.norm_shift = np.asarray(norm_shift, dtype=np.float64)
        model.norm_scale = np.asarray(norm_scale, dtype=np.float64)
    opt = AdamState.create(model.params(), lr=cfg.lr)

    n = windows.shape[0]
    report = TrainReport(epochs=[])
    step_id = 0
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = root.child(10_000 + epoch).generator().permutation(n)
        sums = {"cfm": 0.0, "wta": 0.0, "bal": 0.0}
        usage = np.zeros(model.n_experts, dtype=np.int64)
        nb = 0
        for start in range(0, n, cfg.batch_size):
            batch = windows[order[start:start + cfg.batch_size]]
            m = train_step(model, opt, batch,
                           root.child(1_000_000 + step_id), cfg)
            step_id += 1
            nb += 1
            for key in sums:
                sums[key] += m[key]
            usage += m["usage"]
        row = {"epoch": epoch,
               "cfm": sums["cfm"] / nb, "wta": sums["wta"] / nb,
               "bal": sums["bal"] / nb,
               "usage": usage.tolist(),
               "wall_time": time.perf_counter() - tic}
        report.epochs.append(row)
        if log is not None:
            frac = usage / max(usage.sum(), 1)
            log(f"epoch {epoch}: cfm={row['cfm']:.4f} wta={row['wta']:.4f} "
                f"bal={row['bal']:.4f} usage=" +
                "/".join(f"{f:.2f}" for f in frac))
    return model, report


def load_config_file(path: str) -> dict:
    """Parse a key = value config file with [train]/[model]/[sampler]
    sections into a dict of string dicts."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return {section: dict(parser[section]) for section in parser.sections()}


def train_config_header(model_cfg: ModelConfig, cfg: TrainConfig) -> dict:
    return {"train_config": asdict(cfg)}
