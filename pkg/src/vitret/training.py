"""Shared minibatch training loop for every model family."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ModelConfig
from .data import DatasetContainer, batch_generator
from .tensor import Adam, GradTape, cross_entropy

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    val_loss: float | None
    val_accuracy: float | None


def flatten_frames(frames: np.ndarray) -> np.ndarray:
    """``(..., T, H, W, C)`` frames to ``(..., T, H*W*C)`` feature rows."""
    return frames.reshape(*frames.shape[:-3], -1)


def identity(frames: np.ndarray) -> np.ndarray:
    return frames


def evaluate(model, forward: Callable, ds: DatasetContainer, prepare: Callable = identity,
             batch_size: int = 32) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``model`` over ``ds`` (no tape)."""
    total_loss, correct = 0.0, 0
    for frames, labels in batch_generator(ds, batch_size, shuffle=False):
        probs = forward(prepare(frames), model)
        total_loss += cross_entropy(probs, labels).item() * len(labels)
        correct += int((probs.data.argmax(axis=-1) == labels).sum())
    return total_loss / len(ds), correct / len(ds)


def fit(model, forward: Callable, train: DatasetContainer, valid: DatasetContainer | None,
        config: ModelConfig, seed: int = 0, prepare: Callable = identity,
        parameters: list | None = None) -> list[EpochStats]:
    """Shuffle, batch, forward, cross-entropy, backward and Adam for ``config.epochs`` epochs.

    Each epoch draws a fresh permutation from ``(seed, epoch)``.
    """
    if len(train) == 0:
        raise ValueError("training dataset is empty")
    if valid is not None and len(valid) == 0:
        valid = None
    num_classes = model.num_classes
    for ds in (train, valid):
        if ds is not None and ds.labels.max(initial=0) >= num_classes:
            raise ValueError(f"dataset label out of range for {num_classes} classes")
    params = parameters if parameters is not None else model.parameters()
    opt = Adam(params, lr=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        total_loss, correct, seen = 0.0, 0, 0
        epoch_seed = int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])
        for frames, labels in batch_generator(train, config.batch_size, epoch_seed, shuffle=True):
            with GradTape() as tape:
                probs = forward(prepare(frames), model)
                loss = cross_entropy(probs, labels)
            opt.step(tape.backward(loss))
            total_loss += loss.item() * len(labels)
            correct += int((probs.data.argmax(axis=-1) == labels).sum())
            seen += len(labels)
        val_loss = val_acc = None
        if valid is not None:
            val_loss, val_acc = evaluate(model, forward, valid, prepare)
        stats = EpochStats(epoch + 1, total_loss / seen, correct / seen, val_loss, val_acc)
        log.debug("epoch %d loss %.4f acc %.3f val_loss %s val_acc %s", stats.epoch, stats.loss,
                  stats.accuracy, val_loss, val_acc)
        history.append(stats)
    return history
