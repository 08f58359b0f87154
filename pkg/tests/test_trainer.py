import json

import numpy as np
import pytest

from prismflow.errors import ConfigError, ContractViolation, NumericError
from prismflow.model import ModelConfig
from prismflow.numcore import AdamState, RngStream, finite_difference_check
from prismflow.trainer import (TrainConfig, fit, frozen_total_loss_fn,
                               lambda_schedule, load_config_file, total_loss,
                               train_step)


class TestLambdaSchedule:
    def test_constant_is_one(self):
        np.testing.assert_array_equal(
            lambda_schedule("constant", np.array([0.0, 0.3, 1.0])), 1.0)

    def test_linear_ramp_is_identity(self):
        t = np.array([0.0, 0.25, 1.0])
        np.testing.assert_array_equal(lambda_schedule("linear-ramp", t), t)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            lambda_schedule("cosine", np.zeros(2))


class TestTotalLoss:
    def test_is_weighted_sum_of_parts(self, tiny_model, tiny_batch):
        x0, x1, t = tiny_batch
        cfg = TrainConfig(alpha_w=0.7, alpha_b=0.3, n_experts=2)
        value, _, parts, _ = total_loss(tiny_model, x0, x1, t, cfg)
        assert value == pytest.approx(
            parts["cfm"] + 0.7 * parts["wta"] + 0.3 * parts["bal"],
            rel=1e-12)

    def test_zero_weights_reduce_to_flow_matching(self, tiny_model,
                                                  tiny_batch):
        x0, x1, t = tiny_batch
        cfg = TrainConfig(alpha_w=0.0, alpha_b=0.0, n_experts=2)
        value, grads, parts, _ = total_loss(tiny_model, x0, x1, t, cfg)
        assert value == pytest.approx(parts["cfm"], rel=1e-12)
        for k in range(tiny_model.n_experts):
            assert np.all(grads[f"expert{k}.S"] == 0.0)

    def test_global_head_gets_flow_gradient_only(self, tiny_model,
                                                 tiny_batch):
        x0, x1, t = tiny_batch
        big = TrainConfig(alpha_w=5.0, alpha_b=5.0, n_experts=2)
        none = TrainConfig(alpha_w=0.0, alpha_b=0.0, n_experts=2)
        _, g1, _, _ = total_loss(tiny_model, x0, x1, t, big)
        _, g0, _, _ = total_loss(tiny_model, x0, x1, t, none)
        for name in g1:
            if name.startswith("head"):
                np.testing.assert_array_equal(g1[name], g0[name])

    def test_negative_weight_rejected(self, tiny_model, tiny_batch):
        x0, x1, t = tiny_batch
        with pytest.raises(ConfigError):
            total_loss(tiny_model, x0, x1, t,
                       TrainConfig(alpha_w=-1.0, n_experts=2))

    def test_gradients_match_finite_differences(self, tiny_model, tiny_batch):
        x0, x1, t = tiny_batch
        cfg = TrainConfig(alpha_w=1.0, alpha_b=1.0, beta=0.5, n_experts=2)
        fn = frozen_total_loss_fn(tiny_model, x0, x1, t, cfg)
        err = finite_difference_check(fn, tiny_model.params(), 1e-5)
        assert err < 1e-4


class TestTrainStep:
    def test_updates_parameters(self, tiny_model, tiny_batch):
        _, x1, _ = tiny_batch
        cfg = TrainConfig(n_experts=2)
        opt = AdamState.create(tiny_model.params(), lr=cfg.lr)
        before = {n: p.copy() for n, p in tiny_model.params().items()}
        m = train_step(tiny_model, opt, x1, RngStream(3), cfg)
        after = tiny_model.params()
        assert any(not np.array_equal(before[n], after[n]) for n in before)
        assert np.isfinite(m["total"])
        assert m["usage"].sum() == x1.shape[0]

    def test_lr_zero_leaves_model_unchanged(self, tiny_model, tiny_batch):
        _, x1, _ = tiny_batch
        cfg = TrainConfig(lr=0.0, n_experts=2)
        opt = AdamState.create(tiny_model.params(), lr=0.0)
        before = {n: p.copy() for n, p in tiny_model.params().items()}
        train_step(tiny_model, opt, x1, RngStream(3), cfg)
        for n, p in tiny_model.params().items():
            np.testing.assert_array_equal(before[n], p)

    def test_divergence_guard(self, tiny_model, tiny_batch):
        _, x1, _ = tiny_batch
        cfg = TrainConfig(n_experts=2, divergence_guard=1e-12)
        opt = AdamState.create(tiny_model.params(), lr=cfg.lr)
        with pytest.raises(NumericError):
            train_step(tiny_model, opt, x1 * 10.0, RngStream(3), cfg)


class TestFit:
    def windows(self, n=32):
        gen = RngStream(9).generator()
        return gen.standard_normal((n, 8, 2)) * 0.5

    def test_deterministic_given_seed(self):
        mc = ModelConfig(seq_len=8, channels=2, latent_dim=4, hidden_dim=8,
                         dec_hidden=8, router_hidden=8)
        tc = TrainConfig(epochs=2, batch_size=16, n_experts=2, seed=5)
        w = self.windows()
        m1, r1 = fit(w, mc, tc)
        m2, r2 = fit(w, mc, tc)
        for n, p in m1.params().items():
            np.testing.assert_array_equal(p, m2.params()[n])
        assert r1.epochs[0]["cfm"] == r2.epochs[0]["cfm"]

    def test_loss_decreases(self):
        mc = ModelConfig(seq_len=8, channels=2, latent_dim=4, hidden_dim=16,
                         dec_hidden=8, router_hidden=8)
        tc = TrainConfig(epochs=15, batch_size=16, n_experts=2, seed=0)
        _, report = fit(self.windows(64), mc, tc)
        first = report.epochs[0]["cfm"]
        last = report.epochs[-1]["cfm"]
        assert last < first

    def test_report_serializes_to_jsonl(self, tmp_path):
        mc = ModelConfig(seq_len=8, channels=2, latent_dim=4, hidden_dim=8,
                         dec_hidden=8, router_hidden=8)
        tc = TrainConfig(epochs=2, batch_size=16, n_experts=2)
        _, report = fit(self.windows(), mc, tc)
        path = tmp_path / "report.jsonl"
        report.save(str(path))
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == 2
        assert {"epoch", "cfm", "wta", "bal", "usage"} <= rows[0].keys()

    def test_rejects_bad_windows(self):
        mc = ModelConfig(seq_len=8, channels=2)
        with pytest.raises(ContractViolation):
            fit(np.zeros((4, 8)), mc, TrainConfig(epochs=1))


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nepochs = 3\nlr = 0.01\n"
                        "[model]\nlatent_dim = 8\n")
        cfg = load_config_file(str(path))
        assert cfg["train"]["epochs"] == "3"
        assert cfg["model"]["latent_dim"] == "8"

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config_file("/nonexistent/run.ini")
