"""Compact attention-free encoder: stacked local-aggregation + FFN layers.

Each layer re-adds the positional embedding, then runs a pre-norm residual
local aggregation step and a pre-norm residual FFN:

    h   = features + pos
    h   = h + LAM(norm1(h), centers)
    out = h + FFN(norm2(h))

The local aggregation module (LAM) looks up each token's k nearest tokens in
center-coordinate space, maps concat(self, neighbor) pairs through a shared
local MLP, max-pools over the neighborhood, and mixes channels with a global
MLP. Centers never change, so the neighbor graph is computed once per forward
pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (FFNParams, LayerNormParams, LinearParams, ffn, ffn_init, he,
                 layer_norm, layer_norm_init, linear, linear_init)
from .tensor import DiffTensor, Parameter, as_tensor, broadcast_to, concat, gather_tokens, relu


@dataclass
class EncoderConfig:
    depth: int
    dim: int
    lam_k: int
    ffn_expand: int = 4

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"encoder depth must be >= 1, got {self.depth}")
        if self.dim < 1 or self.lam_k < 1 or self.ffn_expand < 1:
            raise ValueError("encoder dims, lam_k and ffn_expand must be positive")


@dataclass
class EncoderLayerWeights:
    norm1: LayerNormParams
    local: LinearParams   # (2d, d) shared pair MLP
    glob: LinearParams    # (d, d) channel mixer after the pool
    norm2: LayerNormParams
    mlp: FFNParams

    def parameters(self):
        return (self.norm1.parameters() + self.local.parameters() + self.glob.parameters()
                + self.norm2.parameters() + self.mlp.parameters())


@dataclass
class EncoderWeights:
    config: EncoderConfig
    layers: list[EncoderLayerWeights]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def init_encoder_weights(rng: np.random.Generator, config: EncoderConfig,
                         name: str = "encoder") -> EncoderWeights:
    d = config.dim
    layers = [
        EncoderLayerWeights(
            norm1=layer_norm_init(d, f"{name}.{i}.norm1"),
            local=linear_init(rng, 2 * d, d, f"{name}.{i}.local", he),
            glob=linear_init(rng, d, d, f"{name}.{i}.global", he),
            norm2=layer_norm_init(d, f"{name}.{i}.norm2"),
            mlp=ffn_init(rng, d, config.ffn_expand, f"{name}.{i}.ffn"),
        )
        for i in range(config.depth)
    ]
    return EncoderWeights(config=config, layers=layers)


def token_knn(centers: np.ndarray, k: int) -> np.ndarray:
    """k nearest tokens per token by center coordinates, self included.

    centers (V, 3) or (B, V, 3) -> indices (V, k) or (B, V, k). Distance ties
    break toward the lower token index (stable sort).
    """
    centers = np.asarray(centers, dtype=np.float64)
    v = centers.shape[-2]
    if not 1 <= k <= v:
        raise ValueError(f"cannot take {k} token neighbors from {v} tokens")
    diff = centers[..., :, None, :] - centers[..., None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    return np.argsort(d2, axis=-1, kind="stable")[..., :k]


def _lam(features: DiffTensor, nbr_idx: np.ndarray, w: EncoderLayerWeights) -> DiffTensor:
    # features (..., V, d), nbr_idx (..., V, k) -> (..., V, d)
    k = nbr_idx.shape[-1]
    neighbors = gather_tokens(features, nbr_idx)                  # (..., V, k, d)
    *lead, v, d = features.shape
    selves = broadcast_to(features.reshape((*lead, v, 1, d)), (*lead, v, k, d))
    pairs = concat([selves, neighbors], axis=-1)                  # (..., V, k, 2d)
    local = relu(linear(pairs, w.local))                          # (..., V, k, d)
    pooled = local.max(axis=-2)                                   # (..., V, d)
    return linear(pooled, w.glob)


def local_aggregate(features, centers, k: int, w: EncoderLayerWeights) -> DiffTensor:
    """Neighborhood feature aggregation for (..., V, d) tokens at (..., V, 3) centers."""
    return _lam(as_tensor(features), token_knn(centers, k), w)


def encoder_layer(features, pos, centers, w: EncoderLayerWeights, lam_k: int,
                  nbr_idx: np.ndarray | None = None, eps: float = 1e-5) -> DiffTensor:
    """One compact encoder layer; `nbr_idx` may carry a precomputed neighbor graph."""
    if nbr_idx is None:
        nbr_idx = token_knn(centers, lam_k)
    h = as_tensor(features) + as_tensor(pos)
    h = h + _lam(layer_norm(h, w.norm1, eps), nbr_idx, w)
    return h + ffn(layer_norm(h, w.norm2, eps), w.mlp)


def encode(e0, pos, centers, weights: EncoderWeights, eps: float = 1e-5) -> DiffTensor:
    """Run all encoder layers, re-adding the same positional embedding each layer.

    e0/pos: (..., V, d), centers: (..., V, 3) -> (..., V, d).
    """
    nbr_idx = token_knn(centers, weights.config.lam_k)
    x = as_tensor(e0)
    pos = as_tensor(pos)
    for layer in weights.layers:
        x = encoder_layer(x, pos, centers, layer, weights.config.lam_k, nbr_idx, eps)
    return x
