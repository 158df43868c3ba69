"""Uniform create/train/predict interface over the four model families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .config import ModelConfig
from .lstm import LstmModel, lstm_forward, lstm_train
from .training import flatten_frames, identity
from .transformer import ReTModel, ret_forward, ret_train
from .vision import (
    ViTModel,
    ViTReTModel,
    middle_frame,
    vit_forward,
    vit_ret_forward,
    vit_ret_train,
    vit_train,
)

_COMMON = {"batch_size", "epochs", "learning_rate"}
_TRANSFORMER = {"projection_dim", "dense_dim", "num_heads", "transformer_layers", "activation"}


@dataclass(frozen=True)
class Family:
    name: str
    model_type: type
    create: Callable  # (frame_shape, num_classes, config, seed) -> model
    train: Callable  # (train, valid, config, seed, model=None) -> (model, history)
    forward: Callable  # (inputs, model) -> probs
    prepare: Callable  # frames batch -> model inputs
    attributes: frozenset

    def predict(self, model, frames):
        return self.forward(self.prepare(frames), model)


def _create_ret(shape, num_classes, config, seed):
    t, h, w, c = shape
    return ReTModel.create(h * w * c, num_classes, config.with_updates(sequence_length=t), seed)


def _create_lstm(shape, num_classes, config, seed):
    _, h, w, c = shape
    return LstmModel.create(h * w * c, num_classes, config, seed)


def _create_vit(shape, num_classes, config, seed):
    _, h, w, c = shape
    return ViTModel.create((h, w, c), num_classes, config, seed)


def _create_vit_ret(shape, num_classes, config, seed):
    t, h, w, c = shape
    return ViTReTModel.create((h, w, c), num_classes, config.with_updates(sequence_length=t), seed)


FAMILIES = {
    "lstm": Family("lstm", LstmModel, _create_lstm, lstm_train, lstm_forward, flatten_frames,
                   frozenset({"lstm_layers", "lstm_units"} | _COMMON)),
    "ret": Family("ret", ReTModel, _create_ret, ret_train, ret_forward, flatten_frames,
                  frozenset(_TRANSFORMER | _COMMON)),
    "vit": Family("vit", ViTModel, _create_vit, vit_train, vit_forward, middle_frame,
                  frozenset(_TRANSFORMER | {"patch_size"} | _COMMON)),
    "vit_ret": Family("vit_ret", ViTReTModel, _create_vit_ret, vit_ret_train, vit_ret_forward, identity,
                      frozenset(_TRANSFORMER | {"patch_size"} | _COMMON)),
}

# names used in the published sweep lists
ALIASES = {
    "lstm": {"layers": "lstm_layers", "units": "lstm_units"},
    "transformer": {
        "layers": "transformer_layers",
        "embedding": "projection_dim",
        "dense": "dense_dim",
        "internal_dense_neurons": "dense_dim",
        "attention": "num_heads",
        "heads": "num_heads",
    },
}


def canonical_attribute(family: str, attribute: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; expected one of {sorted(FAMILIES)}")
    key = attribute.strip().lower().replace(" ", "_")
    table = ALIASES["lstm"] if family == "lstm" else ALIASES["transformer"]
    name = table.get(key, key)
    if name not in FAMILIES[family].attributes:
        raise ValueError(f"{attribute!r} is not a sweepable hyperparameter of {family!r}")
    return name


def family_of(model) -> Family:
    for fam in FAMILIES.values():
        if type(model) is fam.model_type:
            return fam
    raise TypeError(f"no model family for {type(model).__name__}")


def parameter_count(model) -> int:
    return sum(p.size for p in model.parameters())


def create_model(family: str, shape, num_classes: int, config: ModelConfig, seed: int = 0):
    return FAMILIES[family].create(shape, num_classes, config, seed)
