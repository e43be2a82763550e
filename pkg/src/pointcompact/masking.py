"""Random patch masking and the embedding layers feeding the encoder.

The semantic embedding is a small permutation-invariant set encoder (shared
per-point MLP, channel-wise max pool, post MLP); positions embed through a
two-layer MLP, with separate weights for the encoder and decoder sides. A
single learned query vector stands in for every masked slot at decoder input,
so masked patches are indistinguishable there: no coordinate of a masked
patch ever reaches the encoder or decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PatchSet
from .nn import LinearParams, mlp_forward, mlp_init
from .tensor import DiffTensor, Parameter, as_tensor, parameter


@dataclass(frozen=True)
class MaskPartition:
    """Index split of M patches into visible and masked."""

    visible_indices: np.ndarray
    masked_indices: np.ndarray
    mask_ratio: float

    @property
    def n_visible(self) -> int:
        return self.visible_indices.size

    @property
    def n_masked(self) -> int:
        return self.masked_indices.size


def make_mask(m: int, ratio: float, rng_seed: int) -> MaskPartition:
    """Uniformly random partition of m patches, deterministic per seed.

    round(ratio * m) patches are masked; both sides of the split must be
    nonempty.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    n_masked = round(ratio * m)
    if n_masked < 1 or n_masked >= m:
        raise ValueError(f"degenerate mask: {n_masked} of {m} patches masked at ratio {ratio}")
    perm = np.random.default_rng(rng_seed).permutation(m)
    return MaskPartition(
        visible_indices=np.sort(perm[n_masked:]),
        masked_indices=np.sort(perm[:n_masked]),
        mask_ratio=float(ratio),
    )


@dataclass
class EmbeddingWeights:
    """Embedding-side parameters: set encoder, positional MLPs, mask queries.

    The mask queries are a learned (n_queries, d) table: one randomly
    initialized row per masked slot. The rows are constants of the model --
    they carry slot identity but no information about any input, so masked
    patch coordinates still cannot reach the decoder. (A single broadcast
    query would keep all masked slots identical through every decoder layer,
    leaving query self-attention without gradient and every slot predicting
    the same patch.) Conventional masked-token baselines use n_queries = 1.
    """

    point_mlp: list[LinearParams]   # shared per-point MLP, 3 -> ... -> width
    post_mlp: list[LinearParams]    # width -> d after the max pool
    pos_encoder: list[LinearParams]  # 3 -> hidden -> d, encoder side
    pos_decoder: list[LinearParams]  # 3 -> hidden -> d, decoder side
    mask_query: Parameter           # (n_queries, d) learned slot queries
    dim: int

    def parameters(self) -> list[Parameter]:
        ps = [p for lp in self.point_mlp + self.post_mlp + self.pos_encoder + self.pos_decoder
              for p in lp.parameters()]
        ps.append(self.mask_query)
        return ps


def init_embedding_weights(rng: np.random.Generator, dim: int,
                           embed_hidden: tuple[int, int] = (64, 128),
                           pos_hidden: int = 128, n_queries: int = 1,
                           name: str = "embed") -> EmbeddingWeights:
    h1, h2 = embed_hidden
    return EmbeddingWeights(
        point_mlp=mlp_init(rng, (3, h1, h2), f"{name}.point"),
        post_mlp=mlp_init(rng, (h2, dim), f"{name}.post"),
        pos_encoder=mlp_init(rng, (3, pos_hidden, dim), f"{name}.pos_enc"),
        pos_decoder=mlp_init(rng, (3, pos_hidden, dim), f"{name}.pos_dec"),
        mask_query=parameter(rng.normal(0.0, 0.02, size=(n_queries, dim)),
                             f"{name}.mask_query"),
        dim=dim,
    )


def set_encode(relcoords, point_mlp: list[LinearParams],
               post_mlp: list[LinearParams]) -> DiffTensor:
    """Permutation-invariant set encoder core: shared per-point MLP,
    channel-wise max over the point axis, post MLP. (..., K, 3) -> (..., d)."""
    h = mlp_forward(as_tensor(relcoords), point_mlp, "relu")
    return mlp_forward(h.max(axis=-2), post_mlp, "relu")


def pos_encode(centers, layers: list[LinearParams]) -> DiffTensor:
    """Positional MLP core: (..., 3) -> (..., d)."""
    return mlp_forward(as_tensor(centers), layers, "relu")


def embed_semantic(relcoords, w: EmbeddingWeights) -> DiffTensor:
    """Set-encode patches of relative coordinates: (..., K, 3) -> (..., d).

    Exactly permutation-invariant within each patch.
    """
    return set_encode(relcoords, w.point_mlp, w.post_mlp)


def embed_position(centers, w: EmbeddingWeights, which: str = "encoder") -> DiffTensor:
    """Two-layer MLP from center coordinates: (..., 3) -> (..., d)."""
    if which == "encoder":
        layers = w.pos_encoder
    elif which == "decoder":
        layers = w.pos_decoder
    else:
        raise ValueError(f"which must be 'encoder' or 'decoder', got {which!r}")
    return pos_encode(centers, layers)


def initial_features(patches: PatchSet, mask: MaskPartition, w: EmbeddingWeights) -> DiffTensor:
    """Initial visible tokens: semantic + positional embedding, (V, d).

    Only visible patches are read; masked centers and relative coordinates
    never enter this computation.
    """
    vis_rel = patches.relcoords[mask.visible_indices]
    vis_cen = patches.centers[mask.visible_indices]
    return embed_semantic(vis_rel, w) + embed_position(vis_cen, w, "encoder")
