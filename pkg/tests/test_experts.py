import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prismflow.errors import ContractViolation, ShapeError
from prismflow.experts import (assemble_operator, decode_expert_velocity,
                               latent_velocity, operator_eigenvalues)
from prismflow.flowpath import encode
from prismflow.numcore import RngStream


class TestAssembleOperator:
    def test_all_zero(self):
        a = assemble_operator(np.zeros((3, 3)), np.zeros((3, 3)), 0.0)
        np.testing.assert_array_equal(a, np.zeros((3, 3)))

    def test_identity_dissipation(self):
        a = assemble_operator(np.zeros((3, 3)), np.eye(3), 0.0)
        np.testing.assert_array_equal(a, -np.eye(3))
        np.testing.assert_allclose(operator_eigenvalues(a), [-1, -1, -1])

    def test_rotation_plus_damping(self):
        s = np.array([[0.0, 0.5], [-0.5, 0.0]])
        a = assemble_operator(s, np.zeros((2, 2)), 0.1)
        np.testing.assert_allclose(a, [[-0.1, 1.0], [-1.0, -0.1]])
        eig = operator_eigenvalues(a)
        np.testing.assert_allclose(sorted(eig.imag), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(eig.real, [-0.1, -0.1], atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            assemble_operator(np.zeros((2, 3)), np.zeros((2, 3)), 0.0)
        with pytest.raises(ShapeError):
            assemble_operator(np.zeros((2, 2)), np.zeros((3, 3)), 0.0)

    @given(st.integers(0, 10_000), st.sampled_from([0.0, 0.05, 0.5]))
    @settings(max_examples=60, deadline=None)
    def test_dissipativity(self, seed, delta):
        gen = np.random.default_rng(seed)
        a = assemble_operator(gen.standard_normal((5, 5)),
                              gen.standard_normal((5, 5)), delta)
        assert operator_eigenvalues(a).real.max() <= -delta + 1e-9
        sym = 0.5 * (a + a.T)
        assert np.linalg.eigvalsh(sym).max() <= -delta + 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_skew_decomposition_exact(self, seed):
        gen = np.random.default_rng(seed)
        r = gen.standard_normal((4, 4))
        delta = 0.3
        a = assemble_operator(gen.standard_normal((4, 4)), r, delta)
        skew = a + delta * np.eye(4) + r.T @ r
        np.testing.assert_allclose(skew, -skew.T, atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_latent_energy_decay(self, seed):
        gen = np.random.default_rng(seed)
        delta = 0.2
        a = assemble_operator(gen.standard_normal((4, 4)),
                              gen.standard_normal((4, 4)), delta)
        z = gen.standard_normal(4)
        # d/dt ||z||^2 = 2 z^T A z <= -2 delta ||z||^2
        assert 2 * z @ a @ z <= -2 * delta * z @ z + 1e-9


class TestLatentVelocity:
    def test_zero_state(self, tiny_model):
        assert np.all(latent_velocity(tiny_model, 0, np.zeros(4)) == 0.0)

    def test_negative_identity(self, tiny_model):
        tiny_model.expert_s[0][:] = 0.0
        tiny_model.expert_r[0][:] = np.eye(4)
        tiny_model.cfg.delta = 0.0
        v = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(latent_velocity(tiny_model, 0, v), -v)

    def test_rotation_example(self):
        class Bank:
            n_experts = 1

            def operator(self, k):
                return assemble_operator(
                    np.array([[0.0, 0.5], [-0.5, 0.0]]), np.zeros((2, 2)), 0.1)

        out = latent_velocity(Bank(), 0, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, [-0.1, -1.0])

    def test_index_out_of_range(self, tiny_model):
        with pytest.raises(ContractViolation):
            latent_velocity(tiny_model, 5, np.zeros(4))


class TestDecodeExpertVelocity:
    def test_zero_decoder(self, tiny_model, tiny_batch):
        x0, _, t = tiny_batch
        for w in tiny_model.decoder.weights:
            w[:] = 0.0
        for b in tiny_model.decoder.biases:
            b[:] = 0.0
        h, _ = encode(tiny_model, x0, t)
        for k in range(tiny_model.n_experts):
            resid, *_ = decode_expert_velocity(tiny_model, k, h)
            assert np.all(resid == 0.0)

    def test_output_shape(self, tiny_model, tiny_batch):
        x0, _, t = tiny_batch
        h, _ = encode(tiny_model, x0, t)
        for k in range(tiny_model.n_experts):
            resid, *_ = decode_expert_velocity(tiny_model, k, h)
            assert resid.shape == (x0.shape[0], 16)

    def test_experts_generically_distinct(self, tiny_model, tiny_batch):
        x0, _, t = tiny_batch
        h, _ = encode(tiny_model, x0, t)
        r0, *_ = decode_expert_velocity(tiny_model, 0, h)
        r1, *_ = decode_expert_velocity(tiny_model, 1, h)
        assert np.abs(r0 - r1).max() > 0.0


class TestOperatorEigenvalues:
    def test_pure_rotation(self):
        eig = operator_eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(sorted(eig.imag), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(eig.real, 0.0, atol=1e-12)

    def test_sorted_output(self):
        eig = operator_eigenvalues(np.diag([-3.0, 1.0, -0.5]))
        assert list(eig.real) == sorted(eig.real)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            operator_eigenvalues(np.zeros((2, 3)))
