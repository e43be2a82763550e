"""Analytic parameter and forward-FLOP accounting.

Parameter formulas mirror the weight builders exactly and are verified
against enumeration in the test suite. The FLOP model is the dominant-term
convention: a multiply-accumulate counts as 2 FLOPs, attention counts its
QKV/output projections plus score and weighted-sum matmuls, neighborhood
search counts 8 FLOPs per pairwise distance, pooling counts one FLOP per
compared element, and normalizations/activations are excluded. Counts are
for a single cloud (batch 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .decoder import DecoderConfig, init_vanilla_decoder
from .nn import mlp_init
from .tensor import Parameter

TARGETS = ("encoder-only", "full-pretrain", "classifier")


@dataclass
class CostReport:
    target: str
    params_by_component: dict = field(default_factory=dict)
    flops_by_class: dict = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(self.params_by_component.values())

    @property
    def total_flops(self) -> float:
        return float(sum(self.flops_by_class.values()))

    def table(self) -> str:
        lines = [f"target: {self.target}", "", "parameters:"]
        width = max(len(k) for k in self.params_by_component) if self.params_by_component else 0
        for k, v in self.params_by_component.items():
            lines.append(f"  {k:<{width}}  {v:>12,}")
        lines.append(f"  {'total':<{width}}  {self.total_params:>12,}"
                     f"  ({self.total_params / 1e6:.3f} M)")
        lines.append("")
        lines.append("forward FLOPs (batch 1):")
        width = max(len(k) for k in self.flops_by_class) if self.flops_by_class else 0
        for k, v in self.flops_by_class.items():
            lines.append(f"  {k:<{width}}  {v:>14,.0f}")
        lines.append(f"  {'total':<{width}}  {self.total_flops:>14,.0f}"
                     f"  ({self.total_flops / 1e9:.4f} GFLOPs)")
        return "\n".join(lines)


# -- parameter formulas (mirror the builders) ---------------------------------------


def _linear(i: int, o: int) -> int:
    return i * o + o


def _norm(d: int) -> int:
    return 2 * d


def _attn(d: int) -> int:
    return 4 * _linear(d, d) - d  # key projection carries no bias


def _ffn(d: int, expand: int) -> int:
    return _linear(d, d * expand) + _linear(d * expand, d)


def _set_encoder(h1: int, h2: int, d: int) -> int:
    return _linear(3, h1) + _linear(h1, h2) + _linear(h2, d)


def _pos_mlp(h: int, d: int) -> int:
    return _linear(3, h) + _linear(h, d)


def _encoder_layer(d: int, expand: int) -> int:
    return _norm(d) + _linear(2 * d, d) + _linear(d, d) + _norm(d) + _ffn(d, expand)


def _transformer_layer(d: int, expand: int) -> int:
    return _norm(d) + _attn(d) + _norm(d) + _ffn(d, expand)


def _ppm(d: int, expand: int) -> int:
    return 3 * _norm(d) + 2 * _attn(d) + _ffn(d, expand)


def _decoder_layer(d: int, expand: int) -> int:
    return _ppm(d, expand) + _transformer_layer(d, expand)


def _recon_heads(d: int, hidden: int, k: int) -> int:
    return (_linear(d, hidden) + _linear(hidden, k * 3)
            + _linear(d, hidden) + _linear(hidden, 3))


def _cls_head(d: int, hidden: int, classes: int) -> int:
    return _linear(2 * d, hidden) + _linear(hidden, classes)


# -- FLOP formulas --------------------------------------------------------------------


def _fl_linear(rows: int, i: int, o: int) -> float:
    return 2.0 * rows * i * o


def _fl_attention(tq: int, tk: int, d: int) -> float:
    proj = _fl_linear(tq, d, d) * 2 + _fl_linear(tk, d, d) * 2  # q,o on queries; k,v on keys
    scores = 2.0 * tq * tk * d
    weighted = 2.0 * tq * tk * d
    return proj + scores + weighted


def _fl_embed(f: dict, v: int, k: int, cfg: ModelConfig):
    h1, h2 = cfg.embed_hidden
    f["matmul"] += _fl_linear(v * k, 3, h1) + _fl_linear(v * k, h1, h2)
    f["pooling"] += float(v * k * h2)
    f["matmul"] += _fl_linear(v, h2, cfg.dim)
    f["matmul"] += _fl_linear(v, 3, cfg.pos_hidden) + _fl_linear(v, cfg.pos_hidden, cfg.dim)


def _fl_encoder(f: dict, v: int, cfg: ModelConfig):
    d = cfg.dim
    f["knn"] += 8.0 * v * v  # token neighbor graph, once per forward
    per_layer_local = _fl_linear(v * cfg.lam_k, 2 * d, d)
    per_layer_pool = float(v * cfg.lam_k * d)
    per_layer_global = _fl_linear(v, d, d)
    per_layer_ffn = _fl_linear(v, d, d * cfg.ffn_expand) + _fl_linear(v, d * cfg.ffn_expand, d)
    f["matmul"] += cfg.encoder_depth * (per_layer_local + per_layer_global + per_layer_ffn)
    f["pooling"] += cfg.encoder_depth * per_layer_pool


def _fl_decoder(f: dict, v: int, mm: int, cfg: ModelConfig):
    d, e = cfg.dim, cfg.ffn_expand
    total = v + mm
    ppm_attn = _fl_attention(mm, mm, d) + _fl_attention(mm, v, d)
    ppm_ffn = _fl_linear(mm, d, d * e) + _fl_linear(mm, d * e, d)
    tf_attn = _fl_attention(total, total, d)
    tf_ffn = _fl_linear(total, d, d * e) + _fl_linear(total, d * e, d)
    f["attention"] += cfg.decoder_depth * (ppm_attn + tf_attn)
    f["matmul"] += cfg.decoder_depth * (ppm_ffn + tf_ffn)
    # decoder positional embedding of visible centers
    f["matmul"] += _fl_linear(v, 3, cfg.pos_hidden) + _fl_linear(v, cfg.pos_hidden, d)


def _fl_patchify(f: dict, cfg: ModelConfig):
    n, m = cfg.n_points, cfg.n_patches
    f["knn"] += 8.0 * n * m  # FPS distance updates
    f["knn"] += 8.0 * n * m  # center-to-point grouping distances


def count_costs(config: ModelConfig, target: str, classes: int = 4) -> CostReport:
    """Analytic CostReport for one of the spec'd model targets."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    d = config.dim
    h1, h2 = config.embed_hidden
    report = CostReport(target=target)
    p = report.params_by_component
    f = report.flops_by_class
    for key in ("matmul", "attention", "knn", "pooling"):
        f[key] = 0.0

    if target == "encoder-only":
        p["encoder"] = config.encoder_depth * _encoder_layer(d, config.ffn_expand)
        _fl_encoder(f, config.n_patches, config)
        return report

    v = config.n_visible if target == "full-pretrain" else config.n_patches
    mm = config.n_masked

    p["semantic_embedding"] = _set_encoder(h1, h2, d)
    p["position_embedding"] = _pos_mlp(config.pos_hidden, d)
    p["encoder"] = config.encoder_depth * _encoder_layer(d, config.ffn_expand)
    _fl_patchify(f, config)
    _fl_embed(f, v, config.patch_size, config)
    _fl_encoder(f, v, config)

    if target == "full-pretrain":
        p["decoder_position_embedding"] = _pos_mlp(config.pos_hidden, d)
        p["mask_queries"] = config.n_masked * d
        p["decoder"] = config.decoder_depth * _decoder_layer(d, config.ffn_expand)
        p["reconstruction_heads"] = _recon_heads(d, config.head_hidden, config.patch_size)
        _fl_decoder(f, v, mm, config)
        f["matmul"] += _fl_linear(mm, d, config.head_hidden) * 2
        f["matmul"] += _fl_linear(mm, config.head_hidden, config.patch_size * 3)
        f["matmul"] += _fl_linear(mm, config.head_hidden, 3)
    else:  # classifier
        p["classifier_head"] = _cls_head(d, config.cls_hidden, classes)
        f["pooling"] += 2.0 * config.n_patches * d
        f["matmul"] += _fl_linear(1, 2 * d, config.cls_hidden)
        f["matmul"] += _fl_linear(1, config.cls_hidden, classes)
    return report


def count_params_enumerated(params: list[Parameter]) -> int:
    """Ground-truth parameter count: sum of buffer sizes over the model."""
    return int(sum(p.size for p in params))


# -- Transformer-encoder baseline (for the compactness comparison) ---------------------


def transformer_baseline_report(dim: int = 384, depth: int = 12, heads: int = 6,
                                ffn_expand: int = 4, embed_hidden=(64, 128),
                                pos_hidden: int = 128, cls_hidden: int = 256,
                                classes: int = 4, n_patches: int = 64,
                                patch_size: int = 32, n_points: int = 1024) -> CostReport:
    """Analytic cost of a conventional full-attention encoder classifier."""
    h1, h2 = embed_hidden
    report = CostReport(target="transformer-baseline-classifier")
    p = report.params_by_component
    p["semantic_embedding"] = _set_encoder(h1, h2, dim)
    p["position_embedding"] = _pos_mlp(pos_hidden, dim)
    p["encoder"] = depth * _transformer_layer(dim, ffn_expand)
    p["classifier_head"] = _cls_head(dim, cls_hidden, classes)

    f = report.flops_by_class
    for key in ("matmul", "attention", "knn", "pooling"):
        f[key] = 0.0
    f["knn"] += 8.0 * n_points * n_patches * 2
    f["matmul"] += _fl_linear(n_patches * patch_size, 3, h1)
    f["matmul"] += _fl_linear(n_patches * patch_size, h1, h2)
    f["pooling"] += float(n_patches * patch_size * h2)
    f["matmul"] += _fl_linear(n_patches, h2, dim)
    f["matmul"] += _fl_linear(n_patches, 3, pos_hidden) + _fl_linear(n_patches, pos_hidden, dim)
    per_ffn = _fl_linear(n_patches, dim, dim * ffn_expand) + _fl_linear(n_patches, dim * ffn_expand, dim)
    f["attention"] += depth * _fl_attention(n_patches, n_patches, dim)
    f["matmul"] += depth * per_ffn
    f["pooling"] += 2.0 * n_patches * dim
    f["matmul"] += _fl_linear(1, 2 * dim, cls_hidden) + _fl_linear(1, cls_hidden, classes)
    return report


def build_transformer_baseline_params(dim: int = 384, depth: int = 12, heads: int = 6,
                                      ffn_expand: int = 4, embed_hidden=(64, 128),
                                      pos_hidden: int = 128, cls_hidden: int = 256,
                                      classes: int = 4, seed: int = 0) -> list[Parameter]:
    """Instantiate the baseline's weights so the counter can be checked by
    enumeration."""
    rng = np.random.default_rng(seed)
    h1, h2 = embed_hidden
    params: list[Parameter] = []
    for lp in (mlp_init(rng, (3, h1, h2), "embed.point")
               + mlp_init(rng, (h2, dim), "embed.post")
               + mlp_init(rng, (3, pos_hidden, dim), "embed.pos_enc")
               + mlp_init(rng, (2 * dim, cls_hidden, classes), "head")):
        params.extend(lp.parameters())
    stack = init_vanilla_decoder(
        rng, DecoderConfig(depth=depth, dim=dim, heads=heads, ffn_expand=ffn_expand),
        name="encoder")
    params.extend(stack.parameters())
    return params
