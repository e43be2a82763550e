"""Decoders that turn encoded visible tokens into masked-slot features.

The partial-aware decoder never sees masked-patch coordinates: masked slots
start as copies of one learned query vector, and each layer first predicts
them from the visible tokens (query self-attention, then cross-attention
against position-tagged visible tokens), then runs a standard pre-norm
Transformer layer over all tokens.

A conventional masked-token decoder (`decode_vanilla`) is kept as the
baseline for the leakage ablation: a plain Transformer stack where masked
slots optionally receive their center positional embedding per layer -- the
shortcut the partial-aware design removes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (AttentionParams, FFNParams, LayerNormParams, attention_init,
                 ffn, ffn_init, layer_norm, layer_norm_init,
                 multi_head_attention, transformer_layer, transformer_layer_init,
                 TransformerLayerParams)
from .tensor import DiffTensor, as_tensor, broadcast_to, concat, slice_axis


@dataclass
class DecoderConfig:
    depth: int
    dim: int
    heads: int
    ffn_expand: int = 4

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"decoder depth must be >= 1, got {self.depth}")
        if self.dim % self.heads != 0:
            raise ValueError(f"decoder dim {self.dim} not divisible by {self.heads} heads")


@dataclass
class PPMWeights:
    """Per-layer weights of the masked-query prediction block."""

    norm_k: LayerNormParams
    norm_q: LayerNormParams
    self_attn: AttentionParams
    cross_attn: AttentionParams
    norm_q2: LayerNormParams
    mlp: FFNParams

    def parameters(self):
        return (self.norm_k.parameters() + self.norm_q.parameters()
                + self.self_attn.parameters() + self.cross_attn.parameters()
                + self.norm_q2.parameters() + self.mlp.parameters())


@dataclass
class PartialDecoderLayerWeights:
    ppm: PPMWeights
    transformer: TransformerLayerParams

    def parameters(self):
        return self.ppm.parameters() + self.transformer.parameters()


@dataclass
class PartialDecoderWeights:
    config: DecoderConfig
    layers: list[PartialDecoderLayerWeights]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class VanillaDecoderWeights:
    """Plain Transformer stack for the masked-token baseline."""

    config: DecoderConfig
    layers: list[TransformerLayerParams]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def init_partial_decoder(rng: np.random.Generator, config: DecoderConfig,
                         name: str = "decoder") -> PartialDecoderWeights:
    d, h, e = config.dim, config.heads, config.ffn_expand
    layers = []
    for i in range(config.depth):
        ppm = PPMWeights(
            norm_k=layer_norm_init(d, f"{name}.{i}.ppm.norm_k"),
            norm_q=layer_norm_init(d, f"{name}.{i}.ppm.norm_q"),
            self_attn=attention_init(rng, d, h, f"{name}.{i}.ppm.self"),
            cross_attn=attention_init(rng, d, h, f"{name}.{i}.ppm.cross"),
            norm_q2=layer_norm_init(d, f"{name}.{i}.ppm.norm_q2"),
            mlp=ffn_init(rng, d, e, f"{name}.{i}.ppm.ffn"),
        )
        layers.append(PartialDecoderLayerWeights(
            ppm=ppm,
            transformer=transformer_layer_init(rng, d, h, e, f"{name}.{i}.tf"),
        ))
    return PartialDecoderWeights(config=config, layers=layers)


def init_vanilla_decoder(rng: np.random.Generator, config: DecoderConfig,
                         name: str = "vdecoder") -> VanillaDecoderWeights:
    layers = [transformer_layer_init(rng, config.dim, config.heads, config.ffn_expand,
                                     f"{name}.{i}")
              for i in range(config.depth)]
    return VanillaDecoderWeights(config=config, layers=layers)


@dataclass
class DecoderState:
    """Tokens in [visible; masked] order plus the visible positional embedding."""

    tokens: DiffTensor        # (..., M, d)
    visible_count: int
    pos_visible: DiffTensor   # (..., V, d)

    @property
    def masked_count(self) -> int:
        return self.tokens.shape[-2] - self.visible_count


def ppm(state: DecoderState, w: PPMWeights, eps: float = 1e-5) -> DecoderState:
    """Masked-query prediction step.

    Visible tokens K get the positional embedding and a norm: K' = norm(K + pos).
    Queries Q run residual self-attention over the normed queries, residual
    cross-attention with K' as key and value, and a pre-norm FFN. Output token
    order stays [K'; Q'].
    """
    v = state.visible_count
    m_total = state.tokens.shape[-2]
    if v < 1 or m_total - v < 1:
        raise ValueError(f"ppm needs visible and masked tokens, got {v} of {m_total} visible")
    k = slice_axis(state.tokens, 0, v, axis=-2)
    q = slice_axis(state.tokens, v, m_total, axis=-2)
    kp = layer_norm(k + state.pos_visible, w.norm_k, eps)
    qn = layer_norm(q, w.norm_q, eps)
    q = q + multi_head_attention(qn, qn, qn, w.self_attn)
    q = q + multi_head_attention(q, kp, kp, w.cross_attn)
    qp = q + ffn(layer_norm(q, w.norm_q2, eps), w.mlp)
    return DecoderState(tokens=concat([kp, qp], axis=-2), visible_count=v,
                        pos_visible=state.pos_visible)


def slot_queries(mask_query, lead: tuple, slots: int, d: int) -> DiffTensor:
    """Expand the learned query table into per-slot decoder inputs.

    A (1, d) query broadcasts into every slot (conventional mask token); an
    (n, d) table with n >= slots contributes its first `slots` rows.
    """
    q = as_tensor(mask_query)
    if q.ndim != 2 or q.shape[1] != d:
        raise ValueError(f"mask query must be (n, {d}), got {q.shape}")
    if q.shape[0] == 1:
        return broadcast_to(q, (*lead, slots, d))
    if q.shape[0] < slots:
        raise ValueError(f"{slots} masked slots requested but only {q.shape[0]} "
                         "learned queries are available")
    rows = q if q.shape[0] == slots else slice_axis(q, 0, slots, axis=0)
    return broadcast_to(rows, (*lead, slots, d))


def decode(en, pos, masked_count: int, weights: PartialDecoderWeights,
           mask_query: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Decode masked-slot features from encoded visible tokens.

    en: (..., V, d) encoded visible tokens; pos: (..., V, d) decoder-side
    positional embedding of the visible centers; masked slots start from the
    learned query table (see `slot_queries`). Returns the final masked-slot
    features, (..., masked_count, d).
    """
    if masked_count < 1:
        raise ValueError(f"masked_count must be >= 1, got {masked_count}")
    en = as_tensor(en)
    *lead, v, d = en.shape
    queries = slot_queries(mask_query, tuple(lead), masked_count, d)
    state = DecoderState(tokens=concat([en, queries], axis=-2), visible_count=v,
                         pos_visible=as_tensor(pos))
    for layer in weights.layers:
        state = ppm(state, layer.ppm, eps)
        state = DecoderState(tokens=transformer_layer(state.tokens, layer.transformer, eps),
                             visible_count=v, pos_visible=state.pos_visible)
    return slice_axis(state.tokens, v, v + masked_count, axis=-2)


def decode_vanilla(en, pos_visible, masked_count: int, weights: VanillaDecoderWeights,
                   mask_token: DiffTensor, pos_masked=None, use_masked_pos: bool = False,
                   eps: float = 1e-5) -> DiffTensor:
    """Masked-token baseline decoder.

    Every layer adds pos_visible to the visible slots; with use_masked_pos the
    masked slots also get pos_masked (the center-coordinate embedding) per
    layer -- the positional shortcut. Without it they carry no positional
    signal at all. Returns the final masked-slot features.
    """
    if masked_count < 1:
        raise ValueError(f"masked_count must be >= 1, got {masked_count}")
    if use_masked_pos and pos_masked is None:
        raise ValueError("use_masked_pos requires the masked-center positional embedding")
    en = as_tensor(en)
    pos_visible = as_tensor(pos_visible)
    *lead, v, d = en.shape
    tokens = concat([en, slot_queries(mask_token, tuple(lead), masked_count, d)], axis=-2)
    for layer in weights.layers:
        k = slice_axis(tokens, 0, v, axis=-2) + pos_visible
        q = slice_axis(tokens, v, v + masked_count, axis=-2)
        if use_masked_pos:
            q = q + as_tensor(pos_masked)
        tokens = transformer_layer(concat([k, q], axis=-2), layer, eps)
    return slice_axis(tokens, v, v + masked_count, axis=-2)
