"""Neural layers on top of the autodiff substrate.

Weight containers are plain dataclasses of named :class:`Parameter` objects;
forward functions are free functions over :class:`DiffTensor`. Attention and
FFN blocks use GELU; geometry-flavoured MLPs (set encoders, positional
embeddings, reconstruction heads) use ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (DiffTensor, Parameter, concat, gelu, matmul, parameter,
                     relu, reshape, softmax, swapaxes)


class ConfigError(ValueError):
    """Inconsistent layer configuration (widths that do not chain, bad head split)."""


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "linear": lambda x: x}


# -- initialisation --------------------------------------------------------------


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def he(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=(fan_in, fan_out))


# -- linear / MLP ------------------------------------------------------------------


@dataclass
class LinearParams:
    w: Parameter            # (fan_in, fan_out)
    b: Parameter | None     # (fan_out,), or None for bias-free projections

    def parameters(self):
        return [self.w] if self.b is None else [self.w, self.b]

    @property
    def fan_in(self) -> int:
        return self.w.shape[0]

    @property
    def fan_out(self) -> int:
        return self.w.shape[1]


def linear_init(rng, fan_in: int, fan_out: int, name: str, init=glorot,
                bias: bool = True) -> LinearParams:
    return LinearParams(
        w=parameter(init(rng, fan_in, fan_out), f"{name}.w"),
        b=parameter(np.zeros(fan_out), f"{name}.b") if bias else None,
    )


def linear(x: DiffTensor, layer: LinearParams) -> DiffTensor:
    """Affine map over the last axis.

    Leading axes are flattened into one row axis so every call is a single
    2-D matmul: one big GEMM is faster than many small ones, and it keeps
    results bit-identical however callers batch their inputs.
    """
    if x.ndim == 2:
        out = matmul(x, layer.w.tensor)
        return out if layer.b is None else out + layer.b.tensor
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 1 else reshape(x, (1, x.shape[-1]))
    out = matmul(flat, layer.w.tensor)
    if layer.b is not None:
        out = out + layer.b.tensor
    return reshape(out, (*lead, layer.fan_out))


def mlp_init(rng, widths, name: str, init=he) -> list[LinearParams]:
    """Chain of linear layers with the given widths, e.g. (3, 64, 128)."""
    return [linear_init(rng, i, o, f"{name}.l{n}", init)
            for n, (i, o) in enumerate(zip(widths[:-1], widths[1:]))]


def mlp_forward(x: DiffTensor, layers: list[LinearParams], activation: str = "relu") -> DiffTensor:
    """Affine-activation stack; the final layer is linear.

    Raises ConfigError if consecutive layer extents do not chain or the input
    width does not match the first layer.
    """
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    act = _ACTIVATIONS[activation]
    for prev, nxt in zip(layers[:-1], layers[1:]):
        if prev.fan_out != nxt.fan_in:
            raise ConfigError(f"mlp widths do not chain: {prev.fan_out} -> {nxt.fan_in}")
    if layers and x.shape[-1] != layers[0].fan_in:
        raise ConfigError(f"mlp input width {x.shape[-1]} != first layer fan_in {layers[0].fan_in}")
    for i, lp in enumerate(layers):
        x = linear(x, lp)
        if i < len(layers) - 1:
            x = act(x)
    return x


# -- layer norm -----------------------------------------------------------------------


@dataclass
class LayerNormParams:
    gamma: Parameter  # (d,)
    beta: Parameter   # (d,)

    def parameters(self):
        return [self.gamma, self.beta]


def layer_norm_init(dim: int, name: str) -> LayerNormParams:
    return LayerNormParams(
        gamma=parameter(np.ones(dim), f"{name}.gamma"),
        beta=parameter(np.zeros(dim), f"{name}.beta"),
    )


def layer_norm(x: DiffTensor, ln: LayerNormParams, eps: float = 1e-5) -> DiffTensor:
    """Per-row normalization over the last axis, then affine (gamma, beta)."""
    if ln.gamma.shape != (x.shape[-1],):
        raise ConfigError(f"layer_norm dim {ln.gamma.shape[0]} != feature width {x.shape[-1]}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return xc * inv * ln.gamma.tensor + ln.beta.tensor


# -- multi-head attention ------------------------------------------------------------


@dataclass
class AttentionParams:
    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    heads: int

    def parameters(self):
        return [p for lp in (self.wq, self.wk, self.wv, self.wo) for p in lp.parameters()]


def attention_init(rng, dim: int, heads: int, name: str) -> AttentionParams:
    if dim % heads != 0:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    # no key bias: a constant shift of every key cancels inside the softmax,
    # so the parameter would be exactly gradient-free
    return AttentionParams(
        wq=linear_init(rng, dim, dim, f"{name}.q", glorot),
        wk=linear_init(rng, dim, dim, f"{name}.k", glorot, bias=False),
        wv=linear_init(rng, dim, dim, f"{name}.v", glorot),
        wo=linear_init(rng, dim, dim, f"{name}.o", glorot),
        heads=heads,
    )


def _split_heads(x: DiffTensor, heads: int) -> DiffTensor:
    # (..., T, d) -> (..., heads, T, d/heads)
    *batch, t, d = x.shape
    x = reshape(x, (*batch, t, heads, d // heads))
    return swapaxes(x, -2, -3)


def _merge_heads(x: DiffTensor) -> DiffTensor:
    # (..., heads, T, dh) -> (..., T, heads*dh)
    x = swapaxes(x, -2, -3)
    *batch, t, h, dh = x.shape
    return reshape(x, (*batch, t, h * dh))


def multi_head_attention(q: DiffTensor, k: DiffTensor, v: DiffTensor,
                         weights: AttentionParams) -> DiffTensor:
    """Scaled dot-product attention with per-head projections.

    q: (..., Tq, d), k/v: (..., Tk, d) with equal token counts. Self-attention
    is the q = k = v call. Returns (..., Tq, d).
    """
    d = q.shape[-1]
    if d % weights.heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {weights.heads} heads")
    if k.shape[-2] != v.shape[-2]:
        raise ConfigError(f"key/value token counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    qh = _split_heads(linear(q, weights.wq), weights.heads)
    kh = _split_heads(linear(k, weights.wk), weights.heads)
    vh = _split_heads(linear(v, weights.wv), weights.heads)
    scale = 1.0 / np.sqrt(d // weights.heads)
    scores = matmul(qh, swapaxes(kh, -1, -2)) * scale  # (..., H, Tq, Tk)
    attn = softmax(scores, axis=-1)
    out = _merge_heads(matmul(attn, vh))
    return linear(out, weights.wo)


# -- transformer building blocks --------------------------------------------------------


@dataclass
class FFNParams:
    l1: LinearParams
    l2: LinearParams

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()


def ffn_init(rng, dim: int, expand: int, name: str) -> FFNParams:
    return FFNParams(
        l1=linear_init(rng, dim, dim * expand, f"{name}.l1", glorot),
        l2=linear_init(rng, dim * expand, dim, f"{name}.l2", glorot),
    )


def ffn(x: DiffTensor, p: FFNParams) -> DiffTensor:
    return linear(gelu(linear(x, p.l1)), p.l2)


@dataclass
class TransformerLayerParams:
    """Pre-norm self-attention block: x + attn(norm1(x)), then x + ffn(norm2(x))."""

    norm1: LayerNormParams
    attn: AttentionParams
    norm2: LayerNormParams
    mlp: FFNParams

    def parameters(self):
        return (self.norm1.parameters() + self.attn.parameters()
                + self.norm2.parameters() + self.mlp.parameters())


def transformer_layer_init(rng, dim: int, heads: int, expand: int, name: str) -> TransformerLayerParams:
    return TransformerLayerParams(
        norm1=layer_norm_init(dim, f"{name}.norm1"),
        attn=attention_init(rng, dim, heads, f"{name}.attn"),
        norm2=layer_norm_init(dim, f"{name}.norm2"),
        mlp=ffn_init(rng, dim, expand, f"{name}.ffn"),
    )


def transformer_layer(x: DiffTensor, p: TransformerLayerParams, eps: float = 1e-5) -> DiffTensor:
    h = layer_norm(x, p.norm1, eps)
    x = x + multi_head_attention(h, h, h, p.attn)
    return x + ffn(layer_norm(x, p.norm2, eps), p.mlp)
