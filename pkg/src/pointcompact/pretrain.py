"""Self-supervised pre-training: mask patches, encode the visible ones,
decode masked-slot features, and reconstruct both the masked patches'
relative coordinates (semantics) and their centers (positions).

The loss is the sum of two squared Chamfer terms: per-patch Chamfer between
predicted and true relative coordinates, averaged over masked patches, plus a
set-to-set Chamfer between predicted and true centers. Centers are compared
as sets because masked slots are exchangeable at decoder input; no target can
be pinned to a particular slot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, OptimizerConfig
from .decoder import (DecoderConfig, PartialDecoderWeights, VanillaDecoderWeights,
                      decode, decode_vanilla, init_partial_decoder, init_vanilla_decoder)
from .encoder import EncoderConfig, EncoderWeights, encode, init_encoder_weights
from .geometry import PatchSet, PointCloud, chamfer_l2_per_set, farthest_point_sample, knn_group, normalize
from .masking import (EmbeddingWeights, MaskPartition, embed_position, embed_semantic,
                      init_embedding_weights, make_mask)
from .nn import LinearParams, mlp_forward, mlp_init
from .tensor import DiffTensor, Parameter, named_parameters, reshape

DECODER_KINDS = ("partial", "vanilla", "vanilla_nopos")


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss); carries a diagnostics dump."""


@dataclass
class ReconHeads:
    """Reconstruction heads mapping masked-slot features to geometry."""

    semantic: list[LinearParams]  # d -> hidden -> K*3, reshaped to (K, 3)
    position: list[LinearParams]  # d -> hidden -> 3
    patch_size: int

    def parameters(self):
        return [p for lp in self.semantic + self.position for p in lp.parameters()]


def init_recon_heads(rng, dim: int, patch_size: int, hidden: int,
                     name: str = "heads") -> ReconHeads:
    return ReconHeads(
        semantic=mlp_init(rng, (dim, hidden, patch_size * 3), f"{name}.semantic"),
        position=mlp_init(rng, (dim, hidden, 3), f"{name}.position"),
        patch_size=patch_size,
    )


@dataclass
class PretrainModel:
    config: ModelConfig
    embed: EmbeddingWeights
    encoder: EncoderWeights
    decoder: PartialDecoderWeights | VanillaDecoderWeights
    heads: ReconHeads
    decoder_kind: str = "partial"

    def parameters(self) -> list[Parameter]:
        ps = (self.embed.parameters() + self.encoder.parameters()
              + self.decoder.parameters() + self.heads.parameters())
        named_parameters(ps)  # enforce name uniqueness
        return ps


def init_pretrain_model(config: ModelConfig, decoder_kind: str = "partial",
                        seed: int | None = None) -> PretrainModel:
    if decoder_kind not in DECODER_KINDS:
        raise ValueError(f"decoder_kind must be one of {DECODER_KINDS}, got {decoder_kind!r}")
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    n_queries = config.n_masked if decoder_kind == "partial" else 1
    embed = init_embedding_weights(rng, config.dim, config.embed_hidden,
                                   config.pos_hidden, n_queries=n_queries)
    enc = init_encoder_weights(
        rng, EncoderConfig(depth=config.encoder_depth, dim=config.dim,
                           lam_k=config.lam_k, ffn_expand=config.ffn_expand))
    dec_cfg = DecoderConfig(depth=config.decoder_depth, dim=config.dim,
                            heads=config.heads, ffn_expand=config.ffn_expand)
    if decoder_kind == "partial":
        dec = init_partial_decoder(rng, dec_cfg)
    else:
        dec = init_vanilla_decoder(rng, dec_cfg)
    heads = init_recon_heads(rng, config.dim, config.patch_size, config.head_hidden)
    return PretrainModel(config=config, embed=embed, encoder=enc, decoder=dec,
                         heads=heads, decoder_kind=decoder_kind)


# -- pipeline ---------------------------------------------------------------------


def patchify(cloud: PointCloud, config: ModelConfig, seed_index: int = 0) -> PatchSet:
    """Normalize, FPS-select centers, and KNN-group one cloud."""
    pc = normalize(cloud)
    idx = farthest_point_sample(pc, config.n_patches, seed_index=seed_index)
    return knn_group(pc, idx, config.patch_size)


def _stack_masked(patch_sets: list[PatchSet], masks: list[MaskPartition]):
    """Stack per-cloud visible/masked splits into batch arrays."""
    vis_rel = np.stack([ps.relcoords[mk.visible_indices] for ps, mk in zip(patch_sets, masks)])
    vis_cen = np.stack([ps.centers[mk.visible_indices] for ps, mk in zip(patch_sets, masks)])
    msk_rel = np.stack([ps.relcoords[mk.masked_indices] for ps, mk in zip(patch_sets, masks)])
    msk_cen = np.stack([ps.centers[mk.masked_indices] for ps, mk in zip(patch_sets, masks)])
    return vis_rel, vis_cen, msk_rel, msk_cen


def semantic_term(r_s, p_m) -> DiffTensor:
    """Mean over masked patches of the per-patch squared Chamfer distance.

    r_s/p_m: (..., Mm, K, 3); any leading axes are averaged together.
    """
    per = chamfer_l2_per_set(r_s, p_m)  # (..., Mm)
    return per if per.ndim == 0 else per.mean()


def position_term(r_p, c_m) -> DiffTensor:
    """Set-to-set squared Chamfer between predicted and true centers.

    r_p/c_m: (..., Mm, 3); order-free in the Mm axis, batch axes averaged.
    """
    per = chamfer_l2_per_set(r_p, c_m)
    return per if per.ndim == 0 else per.mean()


@dataclass
class PretrainOutput:
    loss: DiffTensor
    semantic: float
    position: float
    masked_features: DiffTensor  # (..., Mm, d) decoder output


def pretrain_loss_batch(patch_sets: list[PatchSet], masks: list[MaskPartition],
                        model: PretrainModel) -> PretrainOutput:
    """Masked-reconstruction loss over a batch of pre-patchified clouds.

    All clouds must share the patch count and mask ratio so the visible counts
    agree; the whole batch runs as one graph.
    """
    cfg = model.config
    n_vis = masks[0].n_visible
    n_msk = masks[0].n_masked
    if any(m.n_visible != n_vis for m in masks):
        raise ValueError("all masks in a batch must have the same visible count")
    vis_rel, vis_cen, msk_rel, msk_cen = _stack_masked(patch_sets, masks)

    e0_sem = embed_semantic(vis_rel, model.embed)            # (B, V, d)
    pos = embed_position(vis_cen, model.embed, "encoder")    # (B, V, d)
    en = encode(e0_sem + pos, pos, vis_cen, model.encoder)
    tp = embed_position(vis_cen, model.embed, "decoder")

    if model.decoder_kind == "partial":
        r = decode(en, tp, n_msk, model.decoder, model.embed.mask_query.tensor)
    elif model.decoder_kind == "vanilla":
        pos_masked = embed_position(msk_cen, model.embed, "decoder")  # the positional shortcut
        r = decode_vanilla(en, tp, n_msk, model.decoder, model.embed.mask_query.tensor,
                           pos_masked=pos_masked, use_masked_pos=True)
    else:  # vanilla_nopos
        r = decode_vanilla(en, tp, n_msk, model.decoder, model.embed.mask_query.tensor)

    b = len(patch_sets)
    r_s = reshape(mlp_forward(r, model.heads.semantic, "relu"), (b, n_msk, cfg.patch_size, 3))
    r_p = mlp_forward(r, model.heads.position, "relu")       # (B, Mm, 3)

    sem = semantic_term(r_s, msk_rel)
    pos_t = position_term(r_p, msk_cen)
    loss = sem + pos_t
    return PretrainOutput(loss=loss, semantic=sem.item(), position=pos_t.item(),
                          masked_features=r)


def pretrain_loss(cloud: PointCloud, config: ModelConfig, model: PretrainModel,
                  mask_seed) -> PretrainOutput:
    """Full single-cloud pipeline: normalize, patchify, mask, embed, encode,
    decode, reconstruct. Returns the scalar loss plus per-term diagnostics."""
    patches = patchify(cloud, config)
    mask = make_mask(config.n_patches, config.mask_ratio, mask_seed)
    return pretrain_loss_batch([patches], [mask], model)


# -- optimizer -----------------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def cosine_lr(step: int, opt: OptimizerConfig) -> float:
    """Warmup then cosine decay; `step` is 0-based."""
    if opt.warmup_steps > 0 and step < opt.warmup_steps:
        return opt.peak_lr * (step + 1) / opt.warmup_steps
    span = max(1, opt.total_steps - opt.warmup_steps)
    progress = min(1.0, (step - opt.warmup_steps) / span)
    return 0.5 * opt.peak_lr * (1.0 + np.cos(np.pi * progress))


def adamw_step(params: list[Parameter], state: AdamWState, lr: float, opt: OptimizerConfig):
    """Decoupled-weight-decay Adam update; decay only touches >=2-D weights."""
    state.step += 1
    t = state.step
    b1, b2 = opt.beta1, opt.beta2
    for p in params:
        if not p.trainable:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[p.name] = m
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        update = mhat / (np.sqrt(vhat) + opt.eps)
        if opt.weight_decay and p.tensor.ndim >= 2:
            update = update + opt.weight_decay * p.data
        p.tensor.data -= lr * update


# -- training loop ---------------------------------------------------------------------


@dataclass
class StepStats:
    step: int
    loss: float
    semantic: float
    position: float
    lr: float


@dataclass
class TrainState:
    model: PretrainModel
    opt: AdamWState = field(default_factory=AdamWState)
    step: int = 0
    loss_history: list = field(default_factory=list)

    def parameters(self):
        return self.model.parameters()


def train_step(state: TrainState, batch: list[PointCloud],
               patch_sets: list[PatchSet] | None = None) -> StepStats:
    """One optimization step over a batch of clouds.

    Patchification is recomputed unless `patch_sets` carries cached patches.
    Masks are drawn deterministically from (mask_seed, step, cloud index).
    """
    if not batch and not patch_sets:
        raise ValueError("train_step needs a nonempty batch")
    cfg = state.model.config
    if patch_sets is None:
        patch_sets = [patchify(c, cfg) for c in batch]
    masks = [make_mask(cfg.n_patches, cfg.mask_ratio, (cfg.mask_seed, state.step, i))
             for i in range(len(patch_sets))]
    params = state.parameters()
    for p in params:
        p.zero_grad()
    out = pretrain_loss_batch(patch_sets, masks, state.model)
    loss_value = out.loss.item()
    if not np.isfinite(loss_value):
        raise TrainingError(
            f"non-finite loss at step {state.step}: total={loss_value} "
            f"semantic={out.semantic} position={out.position}")
    out.loss.backward()
    lr = cosine_lr(state.step, cfg.optimizer)
    adamw_step(params, state.opt, lr, cfg.optimizer)
    state.step += 1
    stats = StepStats(step=state.step, loss=loss_value, semantic=out.semantic,
                      position=out.position, lr=lr)
    state.loss_history.append(loss_value)
    return stats


def pretrain_run(clouds: list[PointCloud], config: ModelConfig, steps: int,
                 batch_size: int | None = None, decoder_kind: str = "partial",
                 log_path=None, progress_every: int = 0) -> TrainState:
    """Train a fresh model for `steps` steps over a fixed cloud set.

    Deterministic given config seeds. Writes a per-step CSV log
    (step, total, semantic, position, lr) when `log_path` is given.
    """
    model = init_pretrain_model(config, decoder_kind)
    state = TrainState(model=model)
    cached = [patchify(c, config) for c in clouds]
    batch_size = min(batch_size or len(clouds), len(clouds))
    order_rng = np.random.default_rng((config.data_seed, 0xBA7C))
    order: list[int] = []
    log_fh = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
    writer = None
    if log_fh:
        writer = csv.writer(log_fh)
        writer.writerow(["step", "total", "semantic", "position", "lr"])
    try:
        for _ in range(steps):
            if len(order) < batch_size:
                order = list(order_rng.permutation(len(cached)))
            take, order = order[:batch_size], order[batch_size:]
            stats = train_step(state, [], patch_sets=[cached[i] for i in take])
            if writer:
                writer.writerow([stats.step, repr(stats.loss), repr(stats.semantic),
                                 repr(stats.position), repr(stats.lr)])
            if progress_every and stats.step % progress_every == 0:
                print(f"step {stats.step}: loss={stats.loss:.6f} "
                      f"(semantic={stats.semantic:.6f}, position={stats.position:.6f}, "
                      f"lr={stats.lr:.2e})")
    finally:
        if log_fh:
            log_fh.close()
    return state
