"""VRTM model checkpoints.

Layout: ``b"VRTM"``, u32 version, u32 length + UTF-8 JSON config block, u32
tensor count, then per tensor u32 ndim, ndim x u32 dims and little-endian f64
data. Tensors follow each model's ``parameters()`` order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig
from .lstm import LstmModel
from .transformer import ReTModel
from .vision import ViTModel, ViTReTModel

MODEL_MAGIC = b"VRTM"
MODEL_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _describe(model) -> dict:
    if isinstance(model, ViTReTModel):
        return {"family": "vit_ret", "image_shape": list(model.vit.image_shape),
                "num_classes": model.num_classes, "sequence_length": model.ret.sequence_length}
    if isinstance(model, ViTModel):
        return {"family": "vit", "image_shape": list(model.image_shape), "num_classes": model.num_classes}
    if isinstance(model, ReTModel):
        return {"family": "ret", "input_dim": model.input_dim, "num_classes": model.num_classes,
                "sequence_length": model.sequence_length}
    if isinstance(model, LstmModel):
        return {"family": "lstm", "input_dim": model.input_dim, "num_classes": model.num_classes}
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _all_parameters(model) -> list:
    # the pair checkpoints the ViT head too, so a reload is exact
    if isinstance(model, ViTReTModel):
        return model.vit.parameters() + model.ret.parameters()
    return model.parameters()


def _skeleton(meta: dict, config: ModelConfig):
    family = meta["family"]
    if family == "ret":
        return ReTModel.create(meta["input_dim"], meta["num_classes"],
                               config.with_updates(sequence_length=meta["sequence_length"]))
    if family == "lstm":
        return LstmModel.create(meta["input_dim"], meta["num_classes"], config)
    if family == "vit":
        return ViTModel.create(tuple(meta["image_shape"]), meta["num_classes"], config)
    if family == "vit_ret":
        return ViTReTModel.create(tuple(meta["image_shape"]), meta["num_classes"],
                                  config.with_updates(sequence_length=meta["sequence_length"]))
    raise CheckpointFormatError(f"unknown model family {family!r}")


def save_model(path, model, config: ModelConfig) -> None:
    block = json.dumps({"model": _describe(model), "config": config.to_dict()}, sort_keys=True).encode()
    params = _all_parameters(model)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(block)))
        fh.write(block)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            fh.write(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_model(path):
    """Return ``(model, config, family)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MODEL_MAGIC:
        raise CheckpointFormatError(f"{path}: not a VRTM checkpoint")
    version, block_len = struct.unpack("<II", take(8))
    if version != MODEL_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(take(block_len).decode())
    config = ModelConfig.from_dict(header["config"])
    model = _skeleton(header["model"], config)
    params = _all_parameters(model)
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise CheckpointFormatError(f"{path}: {count} tensors, model declares {len(params)}")
    for p in params:
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if tuple(shape) != p.shape:
            raise CheckpointFormatError(f"{path}: tensor shape {shape} where {p.shape} expected")
        p.data = np.frombuffer(take(8 * p.size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise CheckpointFormatError(f"{path}: trailing bytes after last tensor")
    return model, config, header["model"]["family"]
