"""Tensor engine: forward oracles, gradient checks, optimizer, checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowformer import nncore
from flowformer.nncore import tensor as T
from flowformer.nncore.checkpoint import load_checkpoint, restore, save_checkpoint
from flowformer.nncore.layers import apply_activation, causal_mask
from flowformer.nncore.tensor import Parameter, Tensor, binary_cross_entropy

from fd import check_gradients

F64 = np.float64


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# -- forward oracles ----------------------------------------------------------


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_matches_naive_triple_loop():
    rng = rng_for(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    got = (Tensor(a) @ Tensor(b)).data
    assert np.allclose(got, naive_matmul(a, b), atol=1e-6)


def test_dense_identity_and_relu():
    w = Tensor(np.eye(2, dtype=np.float32))
    x = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
    out = nncore.dense(x, w, None, None)
    assert np.allclose(out.data, [[1.0, 0.0]])
    x2 = Tensor(np.array([[-1.0, 2.0]], dtype=np.float32))
    out2 = nncore.dense(x2, w, None, "relu")
    assert np.allclose(out2.data, [[0.0, 2.0]])


def test_dense_shape_mismatch_raises():
    rng = rng_for(1)
    layer = nncore.Dense(4, 2, rng=rng)
    with pytest.raises(ValueError):
        layer(Tensor(np.zeros((3, 5), dtype=np.float32)))


def test_softmax_symmetry_and_stability():
    out = T.softmax(Tensor(np.array([0.0, 0.0], dtype=np.float32)), axis=-1)
    assert np.allclose(out.data, [0.5, 0.5])
    big = T.softmax(Tensor(np.array([1000.0, 0.0], dtype=np.float32)), axis=-1)
    assert np.all(np.isfinite(big.data))
    assert big.data[0] > 0.999 and big.data[1] < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=16), st.integers(0, 10_000))
def test_softmax_normalises(values, seed):
    x = np.array(values, dtype=np.float64)
    out = T.softmax(Tensor(x), axis=-1)
    assert np.all(out.data > 0)
    assert abs(out.data.sum() - 1.0) < 1e-6


def test_layer_norm_constant_vector_is_zero_before_affine():
    x = Tensor(np.full((2, 4), 3.7, dtype=np.float64))
    gain = Tensor(np.ones(4, dtype=np.float64))
    bias = Tensor(np.zeros(4, dtype=np.float64))
    out = nncore.layer_norm(x, gain, bias)
    assert np.allclose(out.data, 0.0, atol=1e-2)


def test_layer_norm_statistics_and_row_oracle():
    rng = rng_for(2)
    x = rng.normal(size=(5, 16)).astype(F64)
    gain = Tensor(np.ones(16, dtype=F64))
    bias = Tensor(np.zeros(16, dtype=F64))
    out = nncore.layer_norm(Tensor(x), gain, bias).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)
    # independent per-row normalisation
    for i in range(x.shape[0]):
        row = x[i]
        expect = (row - row.mean()) / math.sqrt(row.var() + 1e-5)
        assert np.allclose(out[i], expect, atol=1e-9)


def naive_single_head_attention(x: np.ndarray, layer) -> np.ndarray:
    """Explicit-loop attention oracle for h=1."""
    wq, bq = layer.query.weight.data, layer.query.bias.data
    wk, bk = layer.key.weight.data, layer.key.bias.data
    wv, bv = layer.value.weight.data, layer.value.bias.data
    wo, bo = layer.out.weight.data, layer.out.bias.data
    batch, length, d = x.shape
    out = np.zeros_like(x)
    for b in range(batch):
        q = x[b] @ wq + bq
        k = x[b] @ wk + bk
        v = x[b] @ wv + bv
        for t in range(length):
            scores = np.array([q[t] @ k[s] / math.sqrt(d) for s in range(length)])
            if layer.causal:
                scores[t + 1 :] = -np.inf
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            mixed = sum(weights[s] * v[s] for s in range(length))
            out[b, t] = mixed @ wo + bo
    return out


@pytest.mark.parametrize("causal", [False, True])
def test_attention_matches_naive_loops(causal):
    rng = rng_for(3)
    layer = nncore.MultiHeadAttention(6, 1, causal=causal, rng=rng, dtype=F64)
    x = rng.normal(size=(2, 3, 6)).astype(F64)
    got = layer(Tensor(x)).data
    assert np.allclose(got, naive_single_head_attention(x, layer), atol=1e-8)


def test_attention_single_token_is_projection_of_value():
    rng = rng_for(4)
    layer = nncore.MultiHeadAttention(8, 2, causal=True, rng=rng, dtype=F64)
    x = rng.normal(size=(1, 1, 8)).astype(F64)
    got = layer(Tensor(x)).data
    v = x[0, 0] @ layer.value.weight.data + layer.value.bias.data
    expect = v @ layer.out.weight.data + layer.out.bias.data
    assert np.allclose(got[0, 0], expect, atol=1e-10)


def test_causal_attention_ignores_future_positions():
    rng = rng_for(5)
    layer = nncore.MultiHeadAttention(8, 2, causal=True, rng=rng, dtype=F64)
    x = rng.normal(size=(1, 5, 8)).astype(F64)
    base = layer(Tensor(x)).data
    x2 = x.copy()
    x2[0, 3:] += 10.0
    moved = layer(Tensor(x2)).data
    assert np.allclose(base[0, :3], moved[0, :3], atol=1e-6)
    assert not np.allclose(base[0, 3:], moved[0, 3:], atol=1e-3)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        nncore.MultiHeadAttention(6, 4, causal=False, rng=rng_for(0))


# -- gradient checks -----------------------------------------------------------


def weighted_sum(out: Tensor, coeffs: np.ndarray) -> Tensor:
    return (out * Tensor(coeffs)).sum()


def test_backward_sum_gives_ones():
    w = Parameter(np.ones((2, 3), dtype=F64))
    loss = w.sum()
    loss.backward()
    assert np.allclose(w.grad, 1.0)


def test_backward_square_scalar():
    x = Parameter(np.array(3.0, dtype=F64))
    (x * x).backward()
    assert np.allclose(x.grad, 6.0)


def test_backward_accumulates_additively():
    w = Parameter(np.ones(4, dtype=F64))
    w.sum().backward()
    w.sum().backward()
    assert np.allclose(w.grad, 2.0)


def test_backward_requires_scalar():
    w = Parameter(np.ones(4, dtype=F64))
    with pytest.raises(ValueError):
        (w * w).backward()


@pytest.mark.parametrize("activation", [None, "relu", "gelu", "sigmoid"])
@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_dense(activation, seed):
    rng = rng_for(100 + seed)
    d_in, d_out = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    layer = nncore.Dense(d_in, d_out, activation=activation, rng=rng, dtype=F64)
    # keep relu inputs away from the kink
    x = rng.normal(size=(3, d_in)) + 0.25
    coeffs = rng.normal(size=(3, d_out))
    x_leaf = Parameter(x.astype(F64))

    def build():
        return weighted_sum(layer(x_leaf), coeffs)

    err = check_gradients(
        build,
        [(x_leaf.data, x_leaf), (layer.weight.data, layer.weight), (layer.bias.data, layer.bias)],
    )
    for leaf in (x_leaf, layer.weight, layer.bias):
        leaf.zero_grad()
    assert err < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_layer_norm(seed):
    rng = rng_for(200 + seed)
    dim = int(rng.integers(2, 8))
    layer = nncore.LayerNorm(dim, dtype=F64)
    layer.gain.data = rng.normal(1.0, 0.2, size=dim)
    layer.bias.data = rng.normal(0.0, 0.2, size=dim)
    x_leaf = Parameter(rng.normal(size=(4, dim)).astype(F64))
    coeffs = rng.normal(size=(4, dim))

    def build():
        return weighted_sum(layer(x_leaf), coeffs)

    err = check_gradients(
        build,
        [(x_leaf.data, x_leaf), (layer.gain.data, layer.gain), (layer.bias.data, layer.bias)],
    )
    assert err < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_softmax(seed):
    rng = rng_for(300 + seed)
    shape = (2, int(rng.integers(2, 7)))
    x_leaf = Parameter(rng.normal(size=shape).astype(F64))
    coeffs = rng.normal(size=shape)

    def build():
        return weighted_sum(T.softmax(x_leaf, axis=-1), coeffs)

    err = check_gradients(build, [(x_leaf.data, x_leaf)])
    assert err < 1e-3


@pytest.mark.parametrize("causal", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_attention(causal, seed):
    rng = rng_for(400 + seed)
    heads = int(rng.choice([1, 2]))
    d_model = heads * int(rng.integers(2, 4))
    length = int(rng.integers(2, 4))
    layer = nncore.MultiHeadAttention(d_model, heads, causal=causal, rng=rng, dtype=F64)
    x_leaf = Parameter(rng.normal(size=(2, length, d_model)).astype(F64))
    coeffs = rng.normal(size=(2, length, d_model))

    def build():
        return weighted_sum(layer(x_leaf), coeffs)

    leaves = [(x_leaf.data, x_leaf)] + [(p.data, p) for p in layer.parameters()]
    err = check_gradients(build, leaves)
    assert err < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_embedding_lookup(seed):
    rng = rng_for(500 + seed)
    levels, dim = int(rng.integers(3, 7)), int(rng.integers(2, 5))
    layer = nncore.Embedding(levels, dim, rng=rng, dtype=F64)
    indices = rng.integers(0, levels, size=(3, 4))
    coeffs = rng.normal(size=(3, 4, dim))

    def build():
        return weighted_sum(layer(indices), coeffs)

    err = check_gradients(build, [(layer.table.data, layer.table)])
    assert err < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_binary_cross_entropy_through_sigmoid(seed):
    rng = rng_for(600 + seed)
    n = int(rng.integers(2, 8))
    logits = Parameter(rng.normal(size=n).astype(F64))
    targets = rng.integers(0, 2, size=n).astype(F64)

    def build():
        return binary_cross_entropy(T.sigmoid(logits), targets)

    err = check_gradients(build, [(logits.data, logits)])
    assert err < 1e-3


def test_embedding_rejects_out_of_range_index():
    layer = nncore.Embedding(4, 2, rng=rng_for(0))
    with pytest.raises(IndexError):
        layer(np.array([[0, 4]]))


# -- adam ------------------------------------------------------------------------


def test_adam_first_step_closed_form():
    p = Parameter(np.array([1.0], dtype=np.float64))
    opt = nncore.Adam([p], learning_rate=0.001)
    p.grad = np.array([1.0])
    opt.step()
    # m_hat = 1, v_hat = 1: step is lr / (1 + eps)
    assert abs((1.0 - p.data[0]) - 0.001 / (1.0 + opt.eps)) < 1e-12
    assert p.grad is None


def test_adam_zero_grad_leaves_parameter_unchanged():
    p = Parameter(np.array([2.5], dtype=np.float64))
    opt = nncore.Adam([p], learning_rate=0.1)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == 2.5


def test_adam_missing_grad_raises():
    p = Parameter(np.array([1.0]), name="w")
    opt = nncore.Adam([p], learning_rate=0.1)
    with pytest.raises(ValueError):
        opt.step()


def test_adam_minimises_quadratic_and_matches_scalar_recurrence():
    p = Parameter(np.array([5.0], dtype=np.float64))
    opt = nncore.Adam([p], learning_rate=0.1)
    for _ in range(100):
        loss = (p * p).sum()
        loss.backward()
        opt.step()
    assert abs(p.data[0]) < 0.5

    # independent scalar recurrence of the same update rule
    w, m, v = 5.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2.0 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1.0 - 0.9**t)
        v_hat = v / (1.0 - 0.999**t)
        w -= 0.1 * m_hat / (math.sqrt(v_hat) + 1e-7)
    assert abs(w - p.data[0]) < 1e-9


# -- dropout, determinism, checkpoints -------------------------------------------


def test_dropout_rate_zero_and_inference_are_identity():
    rng = rng_for(7)
    x = Tensor(rng.normal(size=(4, 5)).astype(np.float32))
    zero = nncore.Dropout(0.0, rng=rng)
    assert zero(x) is x
    half = nncore.Dropout(0.5, rng=rng)
    half.set_training(False)
    assert half(x) is x
    half.set_training(True)
    dropped = half(x)
    assert not np.allclose(dropped.data, x.data)


def test_glorot_init_deterministic_for_seed():
    a = nncore.glorot_uniform(rng_for(11), 8, 4)
    b = nncore.glorot_uniform(rng_for(11), 8, 4)
    assert np.array_equal(a, b)


def test_causal_mask_shape_and_values():
    mask = causal_mask(3)
    assert mask[0, 0] == 0 and mask[1, 0] == 0
    assert mask[0, 1] < -1e8 and mask[0, 2] < -1e8 and mask[1, 2] < -1e8


def test_checkpoint_round_trip(tmp_path):
    rng = rng_for(13)
    layer = nncore.Dense(5, 3, rng=rng)
    named = list(layer.named_parameters())
    path = tmp_path / "weights.ffck"
    save_checkpoint(named, path)
    loaded = load_checkpoint(path)
    assert set(loaded) == {name for name, _ in named}
    for name, param in named:
        assert np.array_equal(loaded[name], param.data)
    layer.weight.data[:] = 0.0
    restore(named, loaded)
    assert not np.allclose(layer.weight.data, 0.0)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ffck"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_activation_rejects_unknown_name():
    with pytest.raises(ValueError):
        apply_activation(Tensor(np.zeros(2)), "tanh")
