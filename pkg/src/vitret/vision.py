"""Patch extraction, the ViT image classifier and the ViT-ReT video pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import init
from .config import ModelConfig
from .tensor import ShapeError, Tensor, dense
from .transformer import (
    EncoderParams,
    PositionalEncodingTable,
    ReTModel,
    encode,
    positional_encoding,
    ret_forward,
)


@dataclass
class PatchSequence:
    patches: np.ndarray  # (num_patches, p*p*C)
    patch_size: int
    height: int
    width: int
    channels: int

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


def _check_divisible(h: int, w: int, p: int) -> None:
    if p < 1 or h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible into {p}x{p} patches")


def patchify(images: np.ndarray, p: int) -> np.ndarray:
    """``(..., H, W, C)`` to ``(..., (H/p)*(W/p), p*p*C)`` in raster order."""
    *lead, h, w, c = images.shape
    _check_divisible(h, w, p)
    x = images.reshape(*lead, h // p, p, w // p, p, c)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, (h // p) * (w // p), p * p * c)


def extract_patches(image, p: int) -> PatchSequence:
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    if img.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got {img.shape}")
    h, w, c = img.shape
    return PatchSequence(patchify(img, p), p, h, w, c)


def reassemble(seq: PatchSequence) -> np.ndarray:
    """Exact inverse of :func:`extract_patches`."""
    p, h, w, c = seq.patch_size, seq.height, seq.width, seq.channels
    _check_divisible(h, w, p)
    expected = ((h // p) * (w // p), p * p * c)
    if seq.patches.shape != expected:
        raise ValueError(f"patch array {seq.patches.shape} inconsistent with {h}x{w}x{c} image, p={p}")
    x = seq.patches.reshape(h // p, w // p, p, p, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, c)


@dataclass
class ViTModel:
    patch_size: int
    image_shape: tuple[int, int, int]
    input_w: Tensor
    input_b: Tensor
    pe: PositionalEncodingTable
    encoders: list[EncoderParams]
    classifier_w: Tensor
    classifier_b: Tensor
    num_classes: int = field(init=False)

    def __post_init__(self):
        h, w, c = self.image_shape
        _check_divisible(h, w, self.patch_size)
        self.num_classes = self.classifier_w.shape[1]

    @property
    def num_patches(self) -> int:
        h, w, _ = self.image_shape
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def feature_dim(self) -> int:
        return self.input_w.shape[1]

    @classmethod
    def create(cls, image_shape: tuple[int, int, int], num_classes: int, config: ModelConfig,
               seed: int = 0) -> "ViTModel":
        rng = np.random.default_rng(seed)
        h, w, c = image_shape
        p = config.patch_size
        _check_divisible(h, w, p)
        n = (h // p) * (w // p)
        d = config.projection_dim
        return cls(
            patch_size=p,
            image_shape=tuple(image_shape),
            input_w=init.glorot(rng, p * p * c, d),
            input_b=init.zeros(d),
            pe=positional_encoding(n, d),
            encoders=[
                EncoderParams.create(d, config.num_heads, config.dense_dim, rng, config.activation)
                for _ in range(config.transformer_layers)
            ],
            classifier_w=init.small_head(rng, n * d, num_classes),
            classifier_b=init.zeros(num_classes),
        )

    def feature_parameters(self) -> list[Tensor]:
        params = [self.input_w, self.input_b]
        for enc in self.encoders:
            params += enc.parameters()
        return params

    def parameters(self) -> list[Tensor]:
        return self.feature_parameters() + [self.classifier_w, self.classifier_b]


def _encode_images(images, model: ViTModel) -> Tensor:
    img = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    if img.ndim < 3 or tuple(img.shape[-3:]) != tuple(model.image_shape):
        raise ShapeError(f"image shape {img.shape} does not match model's {model.image_shape}")
    return encode(Tensor(patchify(img, model.patch_size)), model)


def vit_forward(image, model: ViTModel) -> Tensor:
    """Class probabilities for one ``(H, W, C)`` image or a batch of them."""
    h = _encode_images(image, model)
    flat = h.reshape(-1) if h.ndim == 2 else h.reshape(*h.shape[:-2], -1)
    return dense(flat, model.classifier_w, model.classifier_b, "softmax")


def vit_features(image, model: ViTModel) -> Tensor:
    """Final encoder output averaged over patch positions; the head is not used."""
    return _encode_images(image, model).mean(axis=-2)


@dataclass
class ViTReTModel:
    vit: ViTModel
    ret: ReTModel

    def __post_init__(self):
        if self.ret.input_dim != self.vit.feature_dim:
            raise ValueError(f"ReT input {self.ret.input_dim} != ViT feature dim {self.vit.feature_dim}")

    @property
    def num_classes(self) -> int:
        return self.ret.num_classes

    @classmethod
    def create(cls, image_shape, num_classes: int, config: ModelConfig, seed: int = 0) -> "ViTReTModel":
        vit = ViTModel.create(image_shape, num_classes, config, seed)
        ret = ReTModel.create(vit.feature_dim, num_classes, config, seed + 1)
        return cls(vit, ret)

    def parameters(self) -> list[Tensor]:
        # the ViT head is bypassed by the feature path
        return self.vit.feature_parameters() + self.ret.parameters()


def vit_ret_forward(seq, model: ViTReTModel, ret: ReTModel | None = None) -> Tensor:
    """Per-frame ViT features in temporal order, classified by the ReT.

    Accepts a :class:`FrameSequence`, ``(T, H, W, C)`` frames or a
    ``(batch, T, H, W, C)`` batch. Pass ``(seq, vit, ret)`` to combine separately
    held models.
    """
    if ret is not None:
        vit = model
    else:
        vit, ret = model.vit, model.ret
    frames = getattr(seq, "frames", seq)
    frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if frames.ndim not in (4, 5):
        raise ShapeError(f"expected (T, H, W, C) or (batch, T, H, W, C) frames, got {frames.shape}")
    if frames.shape[-4] != ret.sequence_length:
        raise ShapeError(f"{frames.shape[-4]} frames but ReT expects {ret.sequence_length}")
    if ret.input_dim != vit.feature_dim:
        raise ShapeError(f"ReT input {ret.input_dim} != ViT feature dim {vit.feature_dim}")
    lead = frames.shape[:-3]
    feats = vit_features(frames.reshape(-1, *frames.shape[-3:]), vit)
    return ret_forward(feats.reshape(*lead, vit.feature_dim), ret)


def vit_train(train, valid, config: ModelConfig, seed: int = 0, model: ViTModel | None = None):
    """Train a ViT on the middle frame of each sequence."""
    from .training import fit

    if model is None:
        _, h, w, c = train.frame_shape
        model = ViTModel.create((h, w, c), len(train.class_names), config, seed)
    history = fit(model, vit_forward, train, valid, config, seed, prepare=middle_frame)
    return model, history


def vit_ret_train(train, valid, config: ModelConfig, seed: int = 0, model: ViTReTModel | None = None):
    """Train the ViT feature extractor and the ReT jointly."""
    from .training import fit

    if model is None:
        t, h, w, c = train.frame_shape
        model = ViTReTModel.create((h, w, c), len(train.class_names), config.with_updates(sequence_length=t), seed)
    history = fit(model, vit_ret_forward, train, valid, config, seed)
    return model, history


def middle_frame(frames: np.ndarray) -> np.ndarray:
    return frames[..., frames.shape[-4] // 2, :, :, :]
