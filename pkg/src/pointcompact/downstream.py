"""Transfer tasks: shape classification with the compact encoder, and point
cloud completion driven directly by the masked-query decoder.

Completion works because the decoder takes no information about the missing
region: the partial cloud is patchified as the visible set, the requested
number of query slots is decoded, and the reconstruction heads emit both the
synthesized patch centers and their relative coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import ModelConfig
from .encoder import EncoderConfig, EncoderWeights, encode, init_encoder_weights
from .decoder import decode
from .geometry import (PatchSet, PointCloud, canonical_seed_index, chamfer_l1,
                       chamfer_l2_value, farthest_point_sample, knn_group,
                       normalize_with_transform)
from .masking import pos_encode, set_encode
from .nn import ConfigError, LinearParams, mlp_forward, mlp_init
from .pretrain import (AdamWState, PretrainModel, adamw_step, cosine_lr, patchify)
from .tensor import DiffTensor, Parameter, as_tensor, concat, log_softmax, named_parameters, no_grad


@dataclass
class ClassifierModel:
    """Set embedding + compact encoder + mean/max-pooled MLP head."""

    config: ModelConfig
    class_names: list[str]
    point_mlp: list[LinearParams]
    post_mlp: list[LinearParams]
    pos_mlp: list[LinearParams]
    encoder: EncoderWeights
    head: list[LinearParams]  # 2d -> hidden -> n_classes

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def parameters(self) -> list[Parameter]:
        ps = [p for lp in self.point_mlp + self.post_mlp + self.pos_mlp + self.head
              for p in lp.parameters()]
        ps += self.encoder.parameters()
        named_parameters(ps)
        return ps


def init_classifier_model(config: ModelConfig, class_names: list[str],
                          seed: int | None = None) -> ClassifierModel:
    if len(class_names) < 2:
        raise ConfigError(f"classification needs >= 2 classes, got {len(class_names)}")
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    h1, h2 = config.embed_hidden
    d = config.dim
    return ClassifierModel(
        config=config,
        class_names=list(class_names),
        point_mlp=mlp_init(rng, (3, h1, h2), "embed.point"),
        post_mlp=mlp_init(rng, (h2, d), "embed.post"),
        pos_mlp=mlp_init(rng, (3, config.pos_hidden, d), "embed.pos_enc"),
        encoder=init_encoder_weights(
            rng, EncoderConfig(depth=config.encoder_depth, dim=d,
                               lam_k=config.lam_k, ffn_expand=config.ffn_expand)),
        head=mlp_init(rng, (2 * d, config.cls_hidden, len(class_names)), "head"),
    )


def transfer_encoder_weights(dst: ClassifierModel, src: PretrainModel):
    """Copy the pretrained embedding and encoder into a classifier in place."""
    pairs = list(zip(dst.point_mlp, src.embed.point_mlp))
    pairs += list(zip(dst.post_mlp, src.embed.post_mlp))
    pairs += list(zip(dst.pos_mlp, src.embed.pos_encoder))
    for d_lp, s_lp in pairs:
        d_lp.w.tensor.data = s_lp.w.data.copy()
        d_lp.b.tensor.data = s_lp.b.data.copy()
    for dp, sp in zip(dst.encoder.parameters(), src.encoder.parameters()):
        if dp.shape != sp.shape:
            raise ConfigError(f"encoder shape mismatch {dp.name}: {dp.shape} vs {sp.shape}")
        dp.tensor.data = sp.data.copy()


def classifier_logits(model: ClassifierModel, rel: np.ndarray, cen: np.ndarray) -> DiffTensor:
    """Logits for batched patches: rel (B, M, K, 3), cen (B, M, 3) -> (B, C)."""
    sem = set_encode(rel, model.point_mlp, model.post_mlp)
    pos = pos_encode(cen, model.pos_mlp)
    tokens = encode(sem + pos, pos, cen, model.encoder)
    pooled = concat([tokens.mean(axis=-2), tokens.max(axis=-2)], axis=-1)
    return mlp_forward(pooled, model.head, "relu")


def cross_entropy(logits: DiffTensor, labels: np.ndarray) -> DiffTensor:
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


@dataclass
class ClassifyReport:
    accuracy: float
    n_classes: int
    epochs: int
    train_loss_history: list = field(default_factory=list)
    val_accuracy_history: list = field(default_factory=list)
    model: "ClassifierModel | None" = field(default=None, repr=False)


def _prepare_labeled(dataset: list[tuple[PointCloud, str]], config: ModelConfig,
                     class_names: list[str]):
    """Patchify once (permutation-invariant FPS seed) and encode labels."""
    index = {c: i for i, c in enumerate(class_names)}
    rel, cen, labels = [], [], []
    for cloud, name in dataset:
        if name not in index:
            raise ConfigError(f"label {name!r} not among head classes {class_names}")
        ps = patchify(cloud, config, seed_index=canonical_seed_index(cloud.points))
        rel.append(ps.relcoords)
        cen.append(ps.centers)
        labels.append(index[name])
    return np.stack(rel), np.stack(cen), np.array(labels, dtype=np.int64)


def evaluate_classifier(model: ClassifierModel, rel: np.ndarray, cen: np.ndarray,
                        labels: np.ndarray, batch_size: int = 64) -> float:
    correct = 0
    with no_grad():
        for lo in range(0, len(labels), batch_size):
            hi = min(lo + batch_size, len(labels))
            logits = classifier_logits(model, rel[lo:hi], cen[lo:hi])
            correct += int((np.argmax(logits.data, axis=-1) == labels[lo:hi]).sum())
    return correct / len(labels)


def finetune_classify(train: list[tuple[PointCloud, str]],
                      val: list[tuple[PointCloud, str]],
                      config: ModelConfig,
                      pretrained: PretrainModel | None = None,
                      epochs: int = 30, batch_size: int = 25,
                      class_names: list[str] | None = None,
                      progress: bool = False) -> ClassifyReport:
    """Train a classifier head (and encoder) end to end; report val accuracy.

    `pretrained` initializes the embedding + encoder from a pretraining run;
    None trains from scratch. `class_names` pins the head's classes (labels
    outside it are a configuration error); by default the classes are the
    labels present in the data. Deterministic given config seeds.
    """
    if class_names is None:
        class_names = sorted({name for _, name in train} | {name for _, name in val})
    if len(class_names) < 2:
        raise ConfigError(f"classification needs >= 2 classes, got {len(class_names)}")
    model = init_classifier_model(config, class_names)
    if pretrained is not None:
        transfer_encoder_weights(model, pretrained)

    rel_t, cen_t, y_t = _prepare_labeled(train, config, class_names)
    rel_v, cen_v, y_v = _prepare_labeled(val, config, class_names)

    params = model.parameters()
    opt_state = AdamWState()
    opt_cfg = replace(config.optimizer,
                      total_steps=max(1, epochs * ((len(train) + batch_size - 1) // batch_size)))
    order_rng = np.random.default_rng((config.data_seed, 0xC1A55))
    report = ClassifyReport(accuracy=0.0, n_classes=len(class_names), epochs=epochs)
    step = 0
    for epoch in range(epochs):
        order = order_rng.permutation(len(y_t))
        epoch_loss = 0.0
        for lo in range(0, len(order), batch_size):
            take = order[lo:lo + batch_size]
            for p in params:
                p.zero_grad()
            loss = cross_entropy(classifier_logits(model, rel_t[take], cen_t[take]), y_t[take])
            loss.backward()
            adamw_step(params, opt_state, cosine_lr(step, opt_cfg), opt_cfg)
            epoch_loss += loss.item() * len(take)
            step += 1
        report.train_loss_history.append(epoch_loss / len(y_t))
        acc = evaluate_classifier(model, rel_v, cen_v, y_v)
        report.val_accuracy_history.append(acc)
        if progress:
            print(f"epoch {epoch + 1}/{epochs}: train_loss={report.train_loss_history[-1]:.4f} "
                  f"val_acc={acc:.4f}")
    report.accuracy = report.val_accuracy_history[-1]
    report.model = model
    return report


# -- completion -------------------------------------------------------------------


@dataclass
class CompletionRequest:
    partial: PointCloud
    n_patches: int              # target total patch count M
    patch_size: int             # points per synthesized patch
    masked_slots: int | None = None  # defaults to M - visible patch count


@dataclass
class CompletionResult:
    completed: PointCloud
    synthesized: np.ndarray        # (slots * K, 3), parent coordinates
    visible_count: int
    metrics: dict | None = None


def complete(req: CompletionRequest, model: PretrainModel,
             ground_truth: PointCloud | None = None) -> CompletionResult:
    """Fill in missing geometry around a partial cloud.

    The partial cloud is normalized, patchified as the visible token set, and
    the requested number of masked query slots is decoded into synthesized
    patches. Output points = partial points plus synthesized patches, mapped
    back to the input frame. Ground truth, when given, is used for metrics
    only.
    """
    if model.decoder_kind != "partial":
        raise ValueError("completion requires the masked-query decoder "
                         f"(model has {model.decoder_kind!r})")
    cfg = model.config
    slots = req.masked_slots
    if slots is None:
        slots = max(1, round(req.n_patches * cfg.mask_ratio))
    visible = req.n_patches - slots
    if slots < 1:
        raise ValueError(f"nothing to synthesize: masked_slots={slots}")
    if visible < 1:
        raise ValueError(f"no visible patches left: {req.n_patches} patches, {slots} slots")
    if req.partial.n < max(req.patch_size, visible):
        raise ValueError(f"partial cloud with {req.partial.n} points cannot form "
                         f"{visible} patches of {req.patch_size} points")

    norm, centroid, scale = normalize_with_transform(req.partial)
    idx = farthest_point_sample(norm, visible, canonical_seed_index(norm))
    patches = knn_group(norm, idx, req.patch_size)
    with no_grad():
        rel = patches.relcoords[None]
        cen = patches.centers[None]
        sem = set_encode(rel, model.embed.point_mlp, model.embed.post_mlp)
        pos = pos_encode(cen, model.embed.pos_encoder)
        en = encode(sem + pos, pos, cen, model.encoder)
        tp = pos_encode(cen, model.embed.pos_decoder)
        r = decode(en, tp, slots, model.decoder, model.embed.mask_query.tensor)
        r_s = mlp_forward(r, model.heads.semantic, "relu").data.reshape(slots, model.heads.patch_size, 3)
        r_p = mlp_forward(r, model.heads.position, "relu").data.reshape(slots, 3)

    synth_norm = (r_p[:, None, :] + r_s).reshape(-1, 3)
    synth = synth_norm * scale + centroid
    completed = PointCloud(np.concatenate([req.partial.points, synth], axis=0))

    metrics = None
    if ground_truth is not None:
        metrics = {
            "chamfer_l2_completed": chamfer_l2_value(completed.points, ground_truth.points),
            "chamfer_l1_completed": chamfer_l1(completed.points, ground_truth.points),
            "chamfer_l2_partial": chamfer_l2_value(req.partial.points, ground_truth.points),
            "chamfer_l1_partial": chamfer_l1(req.partial.points, ground_truth.points),
        }
    return CompletionResult(completed=completed, synthesized=synth,
                            visible_count=visible, metrics=metrics)
