"""Single command-line entry point: train, sample, impute, forecast,
eval, dmd, diagnose, gen-data.

Exit codes: 0 success, 1 usage error, 2 runtime error. Outputs are
written atomically; every artifact gets a sidecar/header with the fully
resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import atomic_write_text
from .datasets import (DiagnosticSpec, gen_bimodal_frequency, gen_sines,
                       gen_velocity_mixture_diagnostic, load_csv_windows,
                       normalize, save_csv_windows, velocity_energy_gap)
from .errors import PrismFlowError
from .experts import operator_eigenvalues
from .metrics import (MetricReport, correlational_score, discriminative_score,
                      predictive_score)
from .model import ModelConfig, PrismFlowModel
from .numcore import RngStream
from .sampler import ConditionMask, SamplerConfig, generate, \
    generate_conditional
from .spectra import exact_dmd, spectral_overlap
from .trainer import TrainConfig, fit, load_config_file

CONFIG_ENV = "PRISMFLOW_CONFIG"


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k != "func" and v is not None}


def _write_meta(out_path: str, args) -> None:
    atomic_write_text(out_path + ".meta.json",
                      json.dumps({"tool_version": __version__,
                                  "resolved_config": _resolved(args)},
                                 indent=2, default=str) + "\n")


def _load_file_config(args, section: str) -> dict:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    file_cfg = load_config_file(path)
    return file_cfg.get(section, {})


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    base = _load_file_config(args, "train")
    casts = {"alpha_w": float, "alpha_b": float, "lambda_kind": str,
             "epochs": int, "batch_size": int, "lr": float,
             "n_experts": int, "beta": float, "wta_eps": float,
             "prob_floor": float, "divergence_guard": float,
             "wta_updates_encoder": lambda s: s.lower() in ("1", "true", "yes")}
    for key, cast in casts.items():
        if key in base:
            setattr(cfg, key, cast(base[key]))
    for key in casts:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    return cfg


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig()
    base = _load_file_config(args, "model")
    for key in ("latent_dim", "hidden_dim", "head_hidden", "dec_hidden",
                "router_hidden", "enc_layers"):
        if key in base:
            setattr(cfg, key, int(base[key]))
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    if "delta" in base:
        cfg.delta = float(base["delta"])
    if getattr(args, "delta", None) is not None:
        cfg.delta = args.delta
    return cfg


def cmd_gen_data(args):
    rng = RngStream(args.seed)
    if args.kind == "sines":
        ds = gen_sines(args.n, args.seq_len, args.channels, rng=rng)
    elif args.kind == "bimodal":
        ds = gen_bimodal_frequency(args.n, args.seq_len, args.channels,
                                   args.f_low, args.f_high, rng=rng)
    else:
        raise PrismFlowError(f"unknown dataset kind {args.kind!r}")
    save_csv_windows(ds.windows, args.out)
    _write_meta(args.out, args)
    if ds.labels is not None:
        atomic_write_text(args.out + ".labels",
                          "\n".join(str(int(x)) for x in ds.labels) + "\n")
    print(f"wrote {ds.n} windows to {args.out}")


def cmd_train(args):
    ds = load_csv_windows(args.data, seq_len=args.seq_len,
                          stride=args.stride, mode=args.load_mode)
    shift = scale = None
    if args.normalize:
        ds = normalize(ds)
        shift, scale = ds.norm_shift, ds.norm_scale
    tcfg = _train_config(args)
    mcfg = _model_config(args)
    model, report = fit(ds.windows, mcfg, tcfg, norm_shift=shift,
                        norm_scale=scale,
                        log=(None if args.quiet else print))
    model.save(args.out, extra_header={
        "train_config": _resolved(args), "tool_version": __version__})
    if args.report:
        report.epochs.insert(0, {"resolved_config": _resolved(args)})
        report.save(args.report)
    print(f"saved checkpoint to {args.out}")


def cmd_sample(args):
    model = PrismFlowModel.load(args.checkpoint)
    cfg = SamplerConfig(steps=args.steps, gamma=args.gamma)
    batch = generate(model, args.n, cfg, RngStream(args.seed))
    if model.norm_shift is not None:
        batch = batch * model.norm_scale + model.norm_shift
    save_csv_windows(batch, args.out)
    _write_meta(args.out, args)
    print(f"wrote {args.n} samples to {args.out}")


def _conditional(args, mode):
    model = PrismFlowModel.load(args.checkpoint)
    observed = load_csv_windows(args.observed, mode="blocks")
    mask = load_csv_windows(args.mask, mode="blocks")
    cfg = SamplerConfig(steps=args.steps, gamma=args.gamma,
                        eta_g=args.eta_g, mode=mode)
    outs = []
    for i in range(observed.n):
        y = observed.windows[i]
        if model.norm_shift is not None:
            y = (y - model.norm_shift) / model.norm_scale
        cond = ConditionMask(mask=mask.windows[i] > 0.5, values=y)
        sample = generate_conditional(model, cond, cfg,
                                      RngStream(args.seed, i))
        outs.append(sample[0])
    batch = np.asarray(outs)
    if model.norm_shift is not None:
        batch = batch * model.norm_scale + model.norm_shift
    save_csv_windows(batch, args.out)
    _write_meta(args.out, args)
    print(f"wrote {len(outs)} conditional samples to {args.out}")


def cmd_impute(args):
    _conditional(args, "imputation")


def cmd_forecast(args):
    _conditional(args, "forecasting")


def cmd_eval(args):
    real = load_csv_windows(args.real, seq_len=args.seq_len,
                            mode=args.load_mode)
    gen = load_csv_windows(args.gen, seq_len=args.seq_len,
                           mode=args.load_mode)
    rng = RngStream(args.seed)
    wanted = args.metrics.split(",")
    rows = [{"resolved_config": _resolved(args)}]
    for name in wanted:
        if name == "disc":
            value = discriminative_score(real, gen, rng.child(1))
        elif name == "pred":
            value = predictive_score(real, gen, rng.child(2))
        elif name == "corr":
            value = correlational_score(real, gen)
        elif name == "spectral":
            value = spectral_overlap(
                exact_dmd(real.windows, rank=args.rank, delay=args.delay),
                exact_dmd(gen.windows, rank=args.rank, delay=args.delay))
        else:
            raise PrismFlowError(f"unknown metric {name!r}")
        report = MetricReport.build(name, value, args.seed, _resolved(args))
        rows.append(report.__dict__)
        print(f"{name}: {value:.6f}")
    if args.out:
        atomic_write_text(args.out,
                          "\n".join(json.dumps(r, default=str)
                                    for r in rows) + "\n")


def cmd_dmd(args):
    lines = ["source,re,im,amplitude"]
    if args.experts:
        model = PrismFlowModel.load(args.experts)
        for k in range(model.n_experts):
            for ev in operator_eigenvalues(model.operator(k)):
                lines.append(f"expert{k},{ev.real!r},{ev.imag!r},")
        atomic_write_text(args.out, "\n".join(lines) + "\n")
        _write_meta(args.out, args)
        print(f"wrote expert spectra to {args.out}")
        return
    if not (args.real and args.gen):
        raise PrismFlowError("dmd needs --experts or both --real and --gen")
    real = load_csv_windows(args.real, mode="blocks")
    gen = load_csv_windows(args.gen, mode="blocks")
    sr = exact_dmd(real.windows, rank=args.rank, delay=args.delay)
    sg = exact_dmd(gen.windows, rank=args.rank, delay=args.delay)
    for tag, spec in (("real", sr), ("gen", sg)):
        for ev, amp in zip(spec.eigenvalues, spec.amplitudes):
            lines.append(f"{tag},{ev.real!r},{ev.imag!r},{amp!r}")
    overlap = spectral_overlap(sr, sg)
    lines.append(f"overlap,{overlap!r},,")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    _write_meta(args.out, args)
    print(f"spectral overlap: {overlap:.6f}")


def cmd_diagnose(args):
    spec = DiagnosticSpec(separation=args.c, weights=(args.w, 1.0 - args.w),
                          n=args.n)
    x0, x1, _ = gen_velocity_mixture_diagnostic(spec, RngStream(args.seed))
    mean_sq, sq_mean = velocity_energy_gap(x0, x1)
    u = (x1 - x0).reshape(spec.n, -1)
    print(f"mean velocity (element avg): {u.mean():.6f}")
    print(f"mean ||u||^2: {mean_sq:.6f}")
    print(f"||mean u||^2: {sq_mean:.6f}")
    print(f"energy gap:   {mean_sq - sq_mean:.6f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prismflow", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--kind", required=True, choices=["sines", "bimodal"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seq-len", dest="seq_len", type=int, default=24)
    g.add_argument("--channels", type=int, default=5)
    g.add_argument("--f-low", dest="f_low", type=float, default=2.0)
    g.add_argument("--f-high", dest="f_high", type=float, default=8.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a CSV dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--seq-len", dest="seq_len", type=int, default=None)
    t.add_argument("--stride", type=int, default=1)
    t.add_argument("--load-mode", dest="load_mode", default="blocks",
                   choices=["blocks", "sliding"])
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--k", dest="n_experts", type=int, default=None)
    t.add_argument("--alpha-w", dest="alpha_w", type=float, default=None)
    t.add_argument("--alpha-b", dest="alpha_b", type=float, default=None)
    t.add_argument("--beta", type=float, default=None)
    t.add_argument("--lambda-kind", dest="lambda_kind", default=None,
                   choices=["constant", "linear-ramp", "late-gate"])
    t.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    t.add_argument("--head-hidden", dest="head_hidden", type=int, default=None)
    t.add_argument("--delta", type=float, default=None)
    t.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                   default=True)
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--out", required=True)
    t.add_argument("--report", default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate unconditional samples")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    for verb, func in (("impute", cmd_impute), ("forecast", cmd_forecast)):
        c = sub.add_parser(verb, help=f"{verb} with guidance sampling")
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--observed", required=True)
        c.add_argument("--mask", required=True)
        c.add_argument("--eta-g", dest="eta_g", type=float, default=1.0)
        c.add_argument("--steps", type=int, default=100)
        c.add_argument("--gamma", type=float, default=1.0)
        c.add_argument("--seed", type=int, required=True)
        c.add_argument("--out", required=True)
        c.set_defaults(func=func)

    e = sub.add_parser("eval", help="compare real vs generated CSVs")
    e.add_argument("--real", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--metrics", default="disc,pred,corr,spectral")
    e.add_argument("--seq-len", dest="seq_len", type=int, default=None)
    e.add_argument("--load-mode", dest="load_mode", default="blocks",
                   choices=["blocks", "sliding"])
    e.add_argument("--rank", type=int, default=10)
    e.add_argument("--delay", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dmd", help="DMD spectra of data or trained experts")
    d.add_argument("--real", default=None)
    d.add_argument("--gen", default=None)
    d.add_argument("--experts", default=None,
                   help="checkpoint path: export per-expert operator spectra")
    d.add_argument("--rank", type=int, default=10)
    d.add_argument("--delay", type=int, default=1)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dmd)

    di = sub.add_parser("diagnose",
                        help="two-mode velocity averaging diagnostic")
    di.add_argument("--c", type=float, default=2.0)
    di.add_argument("--w", type=float, default=0.5)
    di.add_argument("--n", type=int, default=5000)
    di.add_argument("--seed", type=int, default=0)
    di.set_defaults(func=cmd_diagnose)
    return p


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        args.func(args)
    except PrismFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
