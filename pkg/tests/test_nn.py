"""MLP / attention / position-encoding blocks against direct-formula oracles."""

import math

import numpy as np
import pytest

import mtlbench.tensor as T
from mtlbench.errors import ConfigError
from mtlbench.nn import (
    Attention,
    AttentionSpec,
    LayerNorm,
    Linear,
    Mlp,
    MlpSpec,
    ParameterStore,
    sinusoidal_encoding,
)
from mtlbench.tensor import Tensor

from helpers import check_gradients


@pytest.fixture
def store():
    return ParameterStore()


class TestParameterStore:
    def test_duplicate_name_rejected(self, store):
        store.register("w", np.zeros(2), "encoder")
        with pytest.raises(ConfigError):
            store.register("w", np.zeros(2), "encoder")

    def test_unknown_group_rejected(self, store):
        with pytest.raises(ConfigError):
            store.register("w", np.zeros(2), "bogus")

    def test_set_trainable_by_group(self, store):
        store.register("enc.w", np.zeros(2), "encoder")
        store.register("dec.w", np.zeros(2), "decoder")
        store.set_trainable("decoder", False)
        assert store["enc.w"].requires_grad
        assert not store["dec.w"].requires_grad
        assert store.trainable_names() == ["enc.w"]


class TestMlp:
    def test_identity_layer_returns_input(self, store):
        rng = np.random.default_rng(0)
        mlp = Mlp.create(store, "m", [3, 3], rng, "encoder")
        mlp.layers[0].w.data[:] = np.eye(3)
        mlp.layers[0].b.data[:] = 0.0
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(mlp(Tensor(x)).data, x)

    def test_zero_weights_zero_output(self, store):
        rng = np.random.default_rng(1)
        mlp = Mlp.create(store, "m", [4, 2], rng, "encoder")
        mlp.layers[0].w.data[:] = 0.0
        mlp.layers[0].b.data[:] = 0.0
        out = mlp(Tensor(rng.normal(size=(3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2)))

    def test_single_layer_matches_matmul_plus_bias_oracle(self, store):
        rng = np.random.default_rng(2)
        mlp = Mlp.create(store, "m", [4, 2], rng, "encoder")
        x = rng.normal(size=(3, 4))
        out = mlp(Tensor(x)).data
        w, b = mlp.layers[0].w.data, mlp.layers[0].b.data
        expect = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                expect[i, j] = b[j]
                for k in range(4):
                    expect[i, j] += x[i, k] * w[k, j]
        assert np.abs(out - expect).max() < 1e-12

    def test_hidden_relu_and_gradients(self, store):
        rng = np.random.default_rng(3)
        mlp = Mlp.create(store, "m", [3, 5, 2], rng, "encoder")
        x = Tensor(rng.normal(size=(4, 3)))
        params = [layer.w for layer in mlp.layers] + [layer.b for layer in mlp.layers]
        check_gradients(lambda: (mlp(x) ** 2.0).sum(), params, tol=1e-5)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            MlpSpec((4,))
        with pytest.raises(ConfigError):
            MlpSpec((4, 0, 2))

    def test_leading_dims_flattened(self, store):
        rng = np.random.default_rng(4)
        mlp = Mlp.create(store, "m", [3, 2], rng, "encoder")
        x = rng.normal(size=(2, 5, 3))
        out = mlp(Tensor(x))
        assert out.shape == (2, 5, 2)
        flat = mlp(Tensor(x.reshape(10, 3)))
        np.testing.assert_array_equal(out.data.reshape(10, 2), flat.data)


class TestAttention:
    def test_spec_rejects_indivisible_heads(self):
        with pytest.raises(ConfigError):
            AttentionSpec(dim=10, heads=3)

    def test_single_token_weight_is_one(self, store):
        rng = np.random.default_rng(5)
        attn = Attention.create(store, "a", AttentionSpec(8, 2), rng, "encoder")
        x = Tensor(rng.normal(size=(1, 8)))
        out = attn(x, x, x)
        # weight 1.0 on the only token: output equals out_proj(v_proj(x))
        expect = attn.out_proj(attn.v_proj(x))
        np.testing.assert_allclose(out.data, expect.data, atol=1e-15)

    def test_two_identical_keys_split_weight_evenly(self, store):
        rng = np.random.default_rng(6)
        attn = Attention.create(store, "a", AttentionSpec(4, 1), rng, "encoder")
        q = Tensor(rng.normal(size=(1, 4)))
        key = rng.normal(size=4)
        k = Tensor(np.stack([key, key]))
        v = Tensor(rng.normal(size=(2, 4)))
        out = attn(q, k, v)
        mean_v = attn.out_proj(attn.v_proj(v).mean(axis=0, keepdims=True))
        np.testing.assert_allclose(out.data, mean_v.data, atol=1e-12)

    def test_matches_dense_softmax_oracle_single_head(self, store):
        rng = np.random.default_rng(7)
        d = 6
        attn = Attention.create(store, "a", AttentionSpec(d, 1), rng, "encoder")
        q = rng.normal(size=(3, d))
        k = rng.normal(size=(3, d))
        v = rng.normal(size=(3, d))
        out = attn(Tensor(q), Tensor(k), Tensor(v)).data

        def lin(x, layer):
            return x @ layer.w.data + layer.b.data

        qq, kk, vv = lin(q, attn.q_proj), lin(k, attn.k_proj), lin(v, attn.v_proj)
        scores = qq @ kk.T / math.sqrt(d)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        expect = lin(w @ vv, attn.out_proj)
        assert np.abs(out - expect).max() < 1e-12

    def test_cross_attention_distinct_token_counts(self, store):
        rng = np.random.default_rng(8)
        attn = Attention.create(store, "a", AttentionSpec(8, 2), rng, "decoder")
        q = Tensor(rng.normal(size=(5, 8)))
        k = Tensor(rng.normal(size=(3, 8)))
        v = Tensor(rng.normal(size=(3, 8)))
        assert attn(q, k, v).shape == (5, 8)

    def test_attention_rows_sum_to_one_multihead(self, store):
        # reconstruct the weight matrix per head and check the simplex invariant
        rng = np.random.default_rng(9)
        d, h = 8, 4
        attn = Attention.create(store, "a", AttentionSpec(d, h), rng, "encoder")
        q = rng.normal(size=(5, d))
        k = rng.normal(size=(6, d))
        dh = d // h
        qq = (q @ attn.q_proj.w.data + attn.q_proj.b.data).reshape(5, h, dh).transpose(1, 0, 2)
        kk = (k @ attn.k_proj.w.data + attn.k_proj.b.data).reshape(6, h, dh).transpose(1, 2, 0)
        scores = qq @ kk / math.sqrt(dh)
        w = np.exp(scores - scores.max(axis=-1, keepdims=True))
        w /= w.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_grouped_matches_dense_when_sets_are_full(self, store):
        rng = np.random.default_rng(10)
        d = 8
        attn = Attention.create(store, "a", AttentionSpec(d, 2), rng, "encoder")
        x = rng.normal(size=(4, d))
        dense = attn(Tensor(x), Tensor(x), Tensor(x)).data
        sets = np.broadcast_to(x, (4, 4, d)).copy()
        grouped = attn.grouped(Tensor(x), Tensor(sets), Tensor(sets)).data
        assert np.abs(dense - grouped).max() < 1e-12

    def test_gradients_dense_and_grouped(self, store):
        rng = np.random.default_rng(11)
        d = 4
        attn = Attention.create(store, "a", AttentionSpec(d, 2), rng, "encoder")
        x = Tensor(rng.normal(size=(3, d)), requires_grad=True)
        idx = np.array([[0, 1], [1, 2], [2, 0]])
        params = [attn.q_proj.w, attn.k_proj.w, attn.v_proj.w, attn.out_proj.w, attn.out_proj.b, x]

        def dense_loss():
            return (attn(x, x, x) ** 2.0).sum()

        def grouped_loss():
            sets = T.take_rows(x, idx)
            return (attn.grouped(x, sets, sets) ** 2.0).sum()

        check_gradients(dense_loss, params, tol=1e-5)
        check_gradients(grouped_loss, params, tol=1e-5)


class TestSinusoidalEncoding:
    def test_zero_position_alternates_zero_one(self):
        out = sinusoidal_encoding(Tensor(np.zeros((1, 1))), 8).data[0]
        np.testing.assert_array_equal(out, np.tile([0.0, 1.0], 4))

    def test_deterministic(self):
        pos = Tensor(np.array([[1.5], [-2.0]]))
        a = sinusoidal_encoding(pos, 16).data
        b = sinusoidal_encoding(pos, 16).data
        np.testing.assert_array_equal(a, b)

    def test_closed_form_dim4(self):
        # base 10000, position 1: [sin(1), cos(1), sin(1e-2), cos(1e-2)]
        out = sinusoidal_encoding(Tensor(np.array([[1.0]])), 4).data[0]
        expect = np.array([math.sin(1.0), math.cos(1.0), math.sin(1e-2), math.cos(1e-2)])
        assert np.abs(out - expect).max() < 1e-12

    def test_2d_positions_split_channels(self):
        out = sinusoidal_encoding(Tensor(np.array([[3.0, 0.0]])), 8).data[0]
        x_part = sinusoidal_encoding(Tensor(np.array([[3.0]])), 4).data[0]
        np.testing.assert_array_equal(out[:4], x_part)
        np.testing.assert_array_equal(out[4:], np.tile([0.0, 1.0], 2))

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            sinusoidal_encoding(Tensor(np.zeros((1, 1))), 5)

    def test_gradient_flows_through_positions(self):
        rng = np.random.default_rng(12)
        pos = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        check_gradients(lambda: (sinusoidal_encoding(pos, 8) ** 2.0).sum(), [pos], tol=1e-5)


class TestLayerNorm:
    def test_normalizes_rows(self, store):
        ln = LayerNorm.create(store, "ln", 6, "encoder")
        rng = np.random.default_rng(13)
        out = ln(Tensor(rng.normal(loc=3.0, scale=2.0, size=(4, 6)))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-4)

    def test_gradients(self, store):
        ln = LayerNorm.create(store, "ln", 5, "encoder")
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        check_gradients(lambda: (ln(x) ** 2.0).sum(), [x, ln.gamma, ln.beta], tol=1e-5)
