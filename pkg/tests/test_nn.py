"""Layer contracts: layer norm, multi-head attention, MLP stacks."""

import numpy as np
import pytest

from pointcompact import nn
from pointcompact import tensor as T
from pointcompact.gradcheck import grad_check


def scalarize(t, seed=0):
    w = np.random.default_rng(seed).normal(size=t.shape)
    return (t * T.DiffTensor(w)).sum()


# -- layer norm -------------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    ln = nn.layer_norm_init(4, "ln")
    x = T.DiffTensor(np.full((2, 4), 3.7))
    out = nn.layer_norm(x, ln, eps=1e-5)
    assert np.allclose(out.data, 0.0, atol=1e-12)  # eps absorbs the zero variance


def test_layer_norm_hand_value():
    # row [1, 3]: mean 2, population std 1 -> [-1, 1] as eps -> 0
    ln = nn.layer_norm_init(2, "ln")
    out = nn.layer_norm(T.DiffTensor([[1.0, 3.0]]), ln, eps=1e-12)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(0)
    ln = nn.layer_norm_init(6, "ln")
    x = T.parameter(rng.normal(size=(3, 6)), "x")
    params = [x] + ln.parameters()
    report = grad_check(lambda: scalarize(nn.layer_norm(x.tensor, ln)), params, tol=1e-5)
    assert report.max_rel_err < 1e-5, report


def test_layer_norm_width_mismatch():
    ln = nn.layer_norm_init(4, "ln")
    with pytest.raises(nn.ConfigError):
        nn.layer_norm(T.DiffTensor(np.zeros((2, 5))), ln)


# -- attention ---------------------------------------------------------------------


def _identity_attention(dim, heads=1):
    attn = nn.attention_init(np.random.default_rng(0), dim, heads, "attn")
    for lp in (attn.wq, attn.wk, attn.wv, attn.wo):
        lp.w.tensor.data = np.eye(dim)
        if lp.b is not None:
            lp.b.tensor.data = np.zeros(dim)
    return attn


def test_attention_single_key_returns_projected_value():
    # softmax over one key is 1, so output == value under identity projections
    attn = _identity_attention(4)
    v = np.random.default_rng(1).normal(size=(1, 4))
    out = nn.multi_head_attention(T.DiffTensor(v), T.DiffTensor(v), T.DiffTensor(v), attn)
    assert np.allclose(out.data, v, atol=1e-12)


def test_attention_cross_shape_contract():
    rng = np.random.default_rng(2)
    attn = nn.attention_init(rng, 8, 2, "attn")
    q = T.DiffTensor(rng.normal(size=(2, 8)))
    kv = T.DiffTensor(rng.normal(size=(3, 8)))
    out = nn.multi_head_attention(q, kv, kv, attn)
    assert out.shape == (2, 8)


def test_attention_head_split_must_divide():
    with pytest.raises(nn.ConfigError):
        nn.attention_init(np.random.default_rng(0), 8, 3, "attn")


def test_attention_key_value_counts_must_match():
    rng = np.random.default_rng(3)
    attn = nn.attention_init(rng, 4, 2, "attn")
    q = T.DiffTensor(rng.normal(size=(2, 4)))
    k = T.DiffTensor(rng.normal(size=(3, 4)))
    v = T.DiffTensor(rng.normal(size=(4, 4)))
    with pytest.raises(nn.ConfigError):
        nn.multi_head_attention(q, k, v, attn)


def test_attention_full_gradcheck():
    rng = np.random.default_rng(4)
    attn = nn.attention_init(rng, 8, 2, "attn")
    q = T.parameter(rng.normal(size=(3, 8)), "q")
    kv = T.parameter(rng.normal(size=(4, 8)), "kv")
    params = [q, kv] + attn.parameters()

    def f():
        return scalarize(nn.multi_head_attention(q.tensor, kv.tensor, kv.tensor, attn))

    report = grad_check(f, params, tol=1e-5)
    assert report.max_rel_err < 1e-5, report


def test_attention_batched_matches_unbatched():
    rng = np.random.default_rng(5)
    attn = nn.attention_init(rng, 8, 2, "attn")
    x = rng.normal(size=(3, 5, 8))
    batched = nn.multi_head_attention(T.DiffTensor(x), T.DiffTensor(x), T.DiffTensor(x), attn)
    for b in range(3):
        single = nn.multi_head_attention(T.DiffTensor(x[b]), T.DiffTensor(x[b]),
                                         T.DiffTensor(x[b]), attn)
        assert np.allclose(batched.data[b], single.data, atol=1e-12)


# -- MLP ----------------------------------------------------------------------------


def test_mlp_zero_weights_zero_output():
    layers = nn.mlp_init(np.random.default_rng(0), (3, 5, 2), "mlp")
    for lp in layers:
        lp.w.tensor.data[:] = 0.0
        lp.b.tensor.data[:] = 0.0
    out = nn.mlp_forward(T.DiffTensor(np.ones((4, 3))), layers)
    assert np.array_equal(out.data, np.zeros((4, 2)))


def test_mlp_single_layer_is_affine():
    rng = np.random.default_rng(1)
    layers = nn.mlp_init(rng, (3, 2), "mlp")
    x = rng.normal(size=(5, 3))
    out = nn.mlp_forward(T.DiffTensor(x), layers)
    expected = x @ layers[0].w.data + layers[0].b.data
    assert np.allclose(out.data, expected, atol=1e-15)


def test_mlp_chain_mismatch_rejected():
    rng = np.random.default_rng(2)
    layers = [nn.linear_init(rng, 3, 4, "a"), nn.linear_init(rng, 5, 2, "b")]
    with pytest.raises(nn.ConfigError):
        nn.mlp_forward(T.DiffTensor(np.zeros((1, 3))), layers)


def test_mlp_input_width_checked():
    layers = nn.mlp_init(np.random.default_rng(0), (3, 4), "mlp")
    with pytest.raises(nn.ConfigError):
        nn.mlp_forward(T.DiffTensor(np.zeros((2, 7))), layers)


@pytest.mark.parametrize("activation", ["relu", "gelu"])
def test_mlp_gradcheck(activation):
    rng = np.random.default_rng(6)
    layers = nn.mlp_init(rng, (3, 6, 4, 2), "mlp")
    x = T.parameter(rng.normal(size=(4, 3)), "x")
    params = [x] + [p for lp in layers for p in lp.parameters()]
    report = grad_check(lambda: scalarize(nn.mlp_forward(x.tensor, layers, activation)),
                        params, tol=1e-5)
    assert report.max_rel_err < 1e-5, report


def test_transformer_layer_gradcheck():
    rng = np.random.default_rng(7)
    layer = nn.transformer_layer_init(rng, 8, 2, 2, "tf")
    x = T.parameter(rng.normal(size=(4, 8)), "x")
    params = [x] + layer.parameters()
    report = grad_check(lambda: scalarize(nn.transformer_layer(x.tensor, layer)),
                        params, tol=1e-5, max_entries_per_param=24)
    assert report.max_rel_err < 1e-5, report
