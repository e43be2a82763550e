"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   8 bytes  b"PCMPTCK1"
    version u32
    meta    u32 length + utf-8 `key = value` lines (model kind, classes, ...)
    config  u32 length + utf-8 config text
    params  u32 count, then per parameter:
              u16 name length + utf-8 name
              u8 ndim, ndim * u64 extents
              float64 little-endian buffer
    opt     u8 flag; if 1: u64 step, then per parameter (same order) the
            float64 m and v moment buffers
    sha256  32 bytes over everything above

Round trips are bit-exact; the checksum is enforced on load.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, config_from_text, config_to_text
from .pretrain import AdamWState, PretrainModel, TrainState, init_pretrain_model
from .downstream import ClassifierModel, init_classifier_model
from .tensor import Parameter

MAGIC = b"PCMPTCK1"
VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class LoadedCheckpoint:
    config: ModelConfig
    meta: dict
    params: dict          # name -> float64 array
    opt_step: int | None = None
    opt_m: dict | None = None
    opt_v: dict | None = None

    @property
    def model_kind(self) -> str:
        return self.meta.get("model_kind", "pretrain")


def _pack_meta(meta: dict) -> bytes:
    text = "".join(f"{k} = {v}\n" for k, v in sorted(meta.items()))
    return text.encode("utf-8")


def _parse_meta(blob: bytes) -> dict:
    out = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _write_block(chunks: list, blob: bytes):
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)


def _serialize(config: ModelConfig, meta: dict, params: list[Parameter],
               opt: AdamWState | None) -> bytes:
    chunks: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    _write_block(chunks, _pack_meta(meta))
    _write_block(chunks, config_to_text(config).encode("utf-8"))
    chunks.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", p.tensor.ndim))
        chunks.append(struct.pack(f"<{p.tensor.ndim}Q", *p.shape))
        chunks.append(p.data.astype("<f8", copy=False).tobytes())
    if opt is not None:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", opt.step))
        for p in params:
            m = opt.m.get(p.name, np.zeros_like(p.data))
            v = opt.v.get(p.name, np.zeros_like(p.data))
            chunks.append(m.astype("<f8", copy=False).tobytes())
            chunks.append(v.astype("<f8", copy=False).tobytes())
    else:
        chunks.append(struct.pack("<B", 0))
    payload = b"".join(chunks)
    return payload + hashlib.sha256(payload).digest()


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint while reading {what}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def save_checkpoint(path, target: TrainState | PretrainModel | ClassifierModel,
                    include_optimizer: bool = True):
    """Write a model (or full training state) to `path`."""
    if isinstance(target, TrainState):
        model = target.model
        opt = target.opt if include_optimizer else None
    else:
        model, opt = target, None
    if isinstance(model, PretrainModel):
        meta = {"model_kind": "pretrain", "decoder_kind": model.decoder_kind}
    elif isinstance(model, ClassifierModel):
        meta = {"model_kind": "classifier", "classes": ",".join(model.class_names)}
    else:
        raise TypeError(f"cannot checkpoint object of type {type(target).__name__}")
    blob = _serialize(model.config, meta, model.parameters(), opt)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> LoadedCheckpoint:
    """Read and verify a checkpoint; raises CheckpointError on any corruption."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    r = _Reader(payload, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint file)")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                              f"(expected {VERSION})")
    meta = _parse_meta(r.take(r.u("<I", "meta length"), "meta"))
    config_text = r.take(r.u("<I", "config length"), "config").decode("utf-8")
    config = config_from_text(config_text)
    n_params = r.u("<I", "parameter count")
    params: dict = {}
    order: list[str] = []
    for _ in range(n_params):
        name = r.take(r.u("<H", "name length"), "name").decode("utf-8")
        ndim = r.u("<B", "ndim")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, "shape"))
        count = int(np.prod(shape)) if ndim else 1
        buf = r.take(8 * count, f"data for {name}")
        params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        order.append(name)
    opt_flag = r.u("<B", "optimizer flag")
    opt_step = opt_m = opt_v = None
    if opt_flag == 1:
        opt_step = r.u("<Q", "optimizer step")
        opt_m, opt_v = {}, {}
        for name in order:
            shape = params[name].shape
            count = params[name].size
            opt_m[name] = np.frombuffer(r.take(8 * count, f"m for {name}"),
                                        dtype="<f8").reshape(shape).astype(np.float64)
            opt_v[name] = np.frombuffer(r.take(8 * count, f"v for {name}"),
                                        dtype="<f8").reshape(shape).astype(np.float64)
    return LoadedCheckpoint(config=config, meta=meta, params=params,
                            opt_step=opt_step, opt_m=opt_m, opt_v=opt_v)


def _fill_parameters(params: list[Parameter], stored: dict, path):
    names = {p.name for p in params}
    missing = names - set(stored)
    extra = set(stored) - names
    if missing or extra:
        raise CheckpointError(f"{path}: parameter set mismatch "
                              f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    for p in params:
        arr = stored[p.name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: shape mismatch for {p.name}: "
                                  f"stored {arr.shape}, model {p.shape}")
        p.tensor.data = arr.copy()


def restore_pretrain(path) -> TrainState:
    """Rebuild a pretraining TrainState from a checkpoint.

    Loads weights-only (with a warning) when the optimizer state is absent.
    """
    loaded = load_checkpoint(path)
    if loaded.model_kind != "pretrain":
        raise CheckpointError(f"{path}: expected a pretrain checkpoint, "
                              f"got {loaded.model_kind!r}")
    model = init_pretrain_model(loaded.config, loaded.meta.get("decoder_kind", "partial"))
    _fill_parameters(model.parameters(), loaded.params, path)
    state = TrainState(model=model)
    if loaded.opt_step is None:
        warnings.warn(f"{path}: no optimizer state stored; loading weights only")
    else:
        state.opt = AdamWState(m=dict(loaded.opt_m), v=dict(loaded.opt_v),
                               step=loaded.opt_step)
        state.step = loaded.opt_step
    return state


def restore_classifier(path) -> ClassifierModel:
    loaded = load_checkpoint(path)
    if loaded.model_kind != "classifier":
        raise CheckpointError(f"{path}: expected a classifier checkpoint, "
                              f"got {loaded.model_kind!r}")
    classes = loaded.meta.get("classes", "")
    model = init_classifier_model(loaded.config, classes.split(","))
    _fill_parameters(model.parameters(), loaded.params, path)
    return model
