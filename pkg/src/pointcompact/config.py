"""Model/run configuration: one versioned record, serialized as `key = value`
text with `#` comments and dotted keys for the optimizer block."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class OptimizerConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 10
    total_steps: int = 1000
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ModelConfig:
    """All architecture hyperparameters in one record.

    Defaults are the reference scale: 1024-point clouds split into 64 patches
    of 32 points, 0.6 of patches masked, width 192.
    """

    n_points: int = 1024
    n_patches: int = 64
    patch_size: int = 32
    mask_ratio: float = 0.6
    dim: int = 192
    encoder_depth: int = 6
    decoder_depth: int = 4
    lam_k: int = 8
    heads: int = 6
    ffn_expand: int = 4
    embed_hidden: tuple = (64, 128)
    pos_hidden: int = 128
    head_hidden: int = 256
    cls_hidden: int = 256
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    init_seed: int = 0
    mask_seed: int = 0
    data_seed: int = 0
    format_version: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ["n_points", "n_patches", "patch_size", "dim", "encoder_depth",
                    "decoder_depth", "lam_k", "heads", "ffn_expand", "pos_hidden",
                    "head_hidden", "cls_hidden", "format_version"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_patches > self.n_points:
            raise ConfigError(f"n_patches {self.n_patches} exceeds n_points {self.n_points}")
        if self.patch_size > self.n_points:
            raise ConfigError(f"patch_size {self.patch_size} exceeds n_points {self.n_points}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if len(self.embed_hidden) != 2 or any(h < 1 for h in self.embed_hidden):
            raise ConfigError(f"embed_hidden must be two positive widths, got {self.embed_hidden}")

    @property
    def n_masked(self) -> int:
        return round(self.mask_ratio * self.n_patches)

    @property
    def n_visible(self) -> int:
        return self.n_patches - self.n_masked


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return repr(v)


def _parse_typed(raw: str, ftype, key: str):
    raw = raw.strip()
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            return tuple(int(x.strip()) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None
    raise ConfigError(f"unsupported config field type for {key}")


def config_to_text(cfg: ModelConfig) -> str:
    lines = ["# model configuration"]
    for f in fields(ModelConfig):
        v = getattr(cfg, f.name)
        if f.name == "optimizer":
            for of in fields(OptimizerConfig):
                lines.append(f"optimizer.{of.name} = {_format_value(getattr(v, of.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, overrides: list[str] | None = None) -> ModelConfig:
    """Parse `key = value` lines (`#` comments allowed) into a ModelConfig.

    `overrides` are extra `key=value` strings applied on top.
    """
    model_fields = {f.name: f for f in fields(ModelConfig)}
    opt_fields = {f.name: f for f in fields(OptimizerConfig)}
    values: dict = {}
    opt_values: dict = {}

    opt_defaults = OptimizerConfig()

    def apply(key: str, raw: str, where: str):
        key = key.strip()
        if key.startswith("optimizer."):
            sub = key[len("optimizer."):]
            if sub not in opt_fields:
                raise ConfigError(f"unknown config key {key!r} ({where})")
            opt_values[sub] = _parse_typed(raw, type(getattr(opt_defaults, sub)), key)
        elif key in model_fields and key != "optimizer":
            f = model_fields[key]
            ftype = (type(f.default) if f.default is not dataclasses.MISSING
                     else type(f.default_factory()))  # type: ignore[misc]
            values[key] = _parse_typed(raw, ftype, key)
        else:
            raise ConfigError(f"unknown config key {key!r} ({where})")

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        apply(key, raw, f"line {lineno}")

    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, raw = ov.split("=", 1)
        apply(key, raw, "override")

    cfg = ModelConfig(**values)
    if opt_values:
        cfg.optimizer = dataclasses.replace(cfg.optimizer, **opt_values)
    return cfg


def load_config(path, overrides: list[str] | None = None) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read(), overrides)


def save_config(cfg: ModelConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def reference_config() -> ModelConfig:
    """Reference compact model: the scale the parameter budget is quoted at."""
    return ModelConfig()


def tiny_config() -> ModelConfig:
    """Smallest exercisable model, used by gradient-integrity checks."""
    return ModelConfig(
        n_points=32, n_patches=8, patch_size=4, mask_ratio=0.5, dim=16,
        encoder_depth=2, decoder_depth=1, lam_k=2, heads=2, ffn_expand=2,
        embed_hidden=(8, 16), pos_hidden=8, head_hidden=16, cls_hidden=16,
    )


def toy_config() -> ModelConfig:
    """Desk-scale training model: small enough for minutes-long runs."""
    return ModelConfig(
        n_points=256, n_patches=16, patch_size=16, mask_ratio=0.6, dim=64,
        encoder_depth=3, decoder_depth=2, lam_k=4, heads=4, ffn_expand=2,
        embed_hidden=(16, 32), pos_hidden=32, head_hidden=64, cls_hidden=64,
    )
