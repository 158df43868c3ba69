"""Frame-sequence datasets: preprocessing, the VRTD container, batching and a synthetic task."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

DATASET_MAGIC = b"VRTD"
DATASET_VERSION = 1
FRAME_SUFFIXES = (".pgm", ".ppm")

MOTIONS = (
    "right",
    "left",
    "up",
    "down",
    "diag_down_right",
    "diag_up_right",
    "circle_cw",
    "blink",
)


class DatasetFormatError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    label: int
    source_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (T, H, W, C), got {self.frames.shape}")
        if self.frames.size and not (self.frames.min() >= 0.0 and self.frames.max() <= 1.0):
            raise ValueError(f"{self.source_id or 'sample'}: pixel values must lie in [0, 1]")


@dataclass
class DatasetContainer:
    samples: list[FrameSequence]
    class_names: list[str]
    frame_shape: tuple[int, int, int, int] = field(default=None)

    def __post_init__(self):
        if self.frame_shape is None:
            if not self.samples:
                raise ValueError("frame_shape is required for an empty dataset")
            self.frame_shape = tuple(self.samples[0].frames.shape)
        self.frame_shape = tuple(int(n) for n in self.frame_shape)
        for s in self.samples:
            if tuple(s.frames.shape) != self.frame_shape:
                raise ValueError(f"sample {s.source_id!r} has shape {s.frames.shape}, expected {self.frame_shape}")
            if not 0 <= s.label < len(self.class_names):
                raise ValueError(f"sample {s.source_id!r} label {s.label} outside {len(self.class_names)} classes")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices) -> "DatasetContainer":
        return DatasetContainer([self.samples[i] for i in indices], list(self.class_names), self.frame_shape)

    def split(self, fraction: float = 0.8, seed: int = 0) -> tuple["DatasetContainer", "DatasetContainer"]:
        """Seeded shuffle, then the first ``fraction`` for training and the rest held out."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        return self.subset(order[:cut]), self.subset(order[cut:])


# preprocessing


def subsample_indices(n: int, target_len: int) -> np.ndarray:
    if n < 1:
        raise ValueError("cannot subsample an empty frame sequence")
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    if n < target_len:
        return np.minimum(np.arange(target_len), n - 1)
    return (np.arange(target_len) * n) // target_len


def subsample_frames(raw: np.ndarray, target_len: int) -> np.ndarray:
    """Keep ``target_len`` evenly spaced frames; short clips repeat their last frame."""
    return raw[subsample_indices(len(raw), target_len)]


def resize_frame(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    in_h, in_w = frame.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return frame.copy()

    def coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, wy = coords(in_h, out_h)
    x0, x1, wx = coords(in_w, out_w)
    f = frame.astype(np.float64)
    wy = wy[:, None, None] if frame.ndim == 3 else wy[:, None]
    wx = wx[None, :, None] if frame.ndim == 3 else wx[None, :]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bottom = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(out, f.min(), f.max()).astype(frame.dtype)


# binary container


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_dataset(ds: DatasetContainer, path) -> None:
    t, h, w, c = ds.frame_shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<7I", DATASET_VERSION, len(ds.samples), len(ds.class_names), t, h, w, c))
        for name in ds.class_names:
            fh.write(_pack_str(name))
        for s in ds.samples:
            fh.write(_pack_str(s.source_id))
            fh.write(struct.pack("<I", s.label))
            fh.write(np.ascontiguousarray(s.frames, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise DatasetFormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        return self.take(self.u32(what), what).decode("utf-8")


def load_dataset(path) -> DatasetContainer:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4, "magic") != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a VRTD dataset file")
    version = r.u32("version")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    n, k, t, h, w, c = (r.u32("header") for _ in range(6))
    names = [r.string("class name") for _ in range(k)]
    frame_bytes = 4 * t * h * w * c
    samples = []
    for i in range(n):
        sid = r.string(f"sample {i} id")
        label = r.u32(f"sample {i} label")
        data = r.take(frame_bytes, f"sample {i} frames")
        frames = np.frombuffer(data, dtype="<f4").reshape(t, h, w, c).astype(np.float32)
        samples.append(FrameSequence(frames, label, sid))
    if r.pos != len(r.buf):
        raise DatasetFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last sample")
    try:
        return DatasetContainer(samples, names, (t, h, w, c))
    except ValueError as e:
        raise DatasetFormatError(f"{path}: {e}") from e


# batching


def batch_generator(ds: DatasetContainer, batch_size: int, seed: int = 0,
                    shuffle: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(frames, labels)`` batches covering every sample once.

    Frames are stacked as float64 one batch at a time, so only the current
    batch is materialized. Callers wanting a fresh order each epoch pass a
    different seed per epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(ds)) if shuffle else np.arange(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        frames = np.stack([ds.samples[i].frames for i in idx]).astype(np.float64)
        labels = np.array([ds.samples[i].label for i in idx], dtype=np.int64)
        yield frames, labels


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


# synthetic motion task


def motion_trajectory(motion: int, start: tuple[float, float], length: int, displacement: float) -> np.ndarray:
    """Top-left ``(x, y)`` of the object for each frame of one motion archetype."""
    s = np.linspace(0.0, 1.0, length) if length > 1 else np.zeros(1)
    x0, y0 = start
    d = displacement
    name = MOTIONS[motion]
    if name == "right":
        xy = (x0 + d * s, np.full(length, y0))
    elif name == "left":
        xy = (x0 - d * s, np.full(length, y0))
    elif name == "up":
        xy = (np.full(length, x0), y0 - d * s)
    elif name == "down":
        xy = (np.full(length, x0), y0 + d * s)
    elif name == "diag_down_right":
        xy = (x0 + d * s, y0 + d * s)
    elif name == "diag_up_right":
        xy = (x0 + d * s, y0 - d * s)
    elif name == "circle_cw":
        r = d / 2
        theta = 2 * np.pi * s * (length - 1) / length if length > 1 else s
        # starts at the top of a circle centred r below the start and turns clockwise on screen
        xy = (x0 + r * np.sin(theta), y0 + r - r * np.cos(theta))
    else:
        xy = (np.full(length, x0), np.full(length, y0))
    return np.stack(xy, axis=1)


def _coverage(pos: float, size: int, n: int) -> np.ndarray:
    # fraction of each pixel [i, i+1) covered by the interval [pos, pos+size)
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1, pos + size) - np.maximum(edges, pos), 0.0, 1.0)


def render_square(h: int, w: int, x: float, y: float, size: int) -> np.ndarray:
    """Area-coverage rendering of a ``size``-pixel square at sub-pixel position."""
    return np.outer(_coverage(y, size, h), _coverage(x, size, w))


def synthetic_dataset(num_classes: int = 4, samples_per_class: int = 60, T: int = 20, H: int = 32,
                      W: int = 32, seed: int = 0, channels: int = 1, noise: float = 0.2,
                      object_size: int | None = None, travel: float = 1 / 3) -> DatasetContainer:
    """Bright squares moving on a noisy background, one motion archetype per class.

    Sample ``j`` of every class starts from the same pose, and poses span the
    frame, so a single frame rarely identifies the class.
    """
    if not 2 <= num_classes <= len(MOTIONS):
        raise ValueError(f"num_classes must be in [2, {len(MOTIONS)}], got {num_classes}")
    if samples_per_class < 1 or T < 1:
        raise ValueError("samples_per_class and T must be >= 1")
    if object_size is None:
        object_size = max(2, min(H, W) // 4)
    free = min(H, W) - object_size
    if free < 4:
        raise ValueError(f"{H}x{W} frames too small for a {object_size}px object")
    if not 0 < travel < 0.5:
        raise ValueError("travel must be in (0, 0.5)")
    # each object travels this far; starting poses fill the remaining span
    disp = free * travel
    samples = []
    for label in range(num_classes):
        for j in range(samples_per_class):
            pose_rng = np.random.default_rng([seed, j])
            start = (
                pose_rng.uniform(disp, W - object_size - disp),
                pose_rng.uniform(disp, H - object_size - disp),
            )
            noise_rng = np.random.default_rng([seed, j, label + 1])
            path = motion_trajectory(label, start, T, disp)
            frames = np.empty((T, H, W, channels), dtype=np.float32)
            for t, (x, y) in enumerate(path):
                cover = render_square(H, W, x, y, object_size)
                if MOTIONS[label] == "blink" and t % 2:
                    cover = np.zeros_like(cover)
                bg = noise_rng.uniform(0.0, noise, size=(H, W, channels)) if noise > 0 else np.zeros((H, W, channels))
                frames[t] = np.clip(bg * (1 - cover[..., None]) + cover[..., None], 0.0, 1.0)
            samples.append(FrameSequence(frames, label, f"synthetic/{MOTIONS[label]}/{j:04d}"))
    return DatasetContainer(samples, list(MOTIONS[:num_classes]), (T, H, W, channels))


# image-directory ingestion


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file as ``(H, W, C)`` floats in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
        magic, pos = _read_token(buf, 0)
        if magic not in (b"P5", b"P6"):
            raise ImageFormatError(f"unsupported magic {magic!r}")
        channels = 1 if magic == b"P5" else 3
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        max_tok, pos = _read_token(buf, pos)
        w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
        if w < 1 or h < 1 or not 0 < maxval < 65536:
            raise ImageFormatError(f"bad dimensions {w}x{h} or maxval {maxval}")
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        count = h * w * channels
        if len(buf) - pos < count * dtype.itemsize:
            raise ImageFormatError("raster data truncated")
        raster = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    except ImageFormatError as e:
        raise ImageFormatError(f"{path}: {e}") from None
    except (OSError, ValueError) as e:
        raise ImageFormatError(f"{path}: {e}") from e
    return (raster.reshape(h, w, channels).astype(np.float32) / np.float32(maxval))


def write_pnm(path, image: np.ndarray) -> None:
    """Write ``(H, W, 1|3)`` floats in [0, 1] as 8-bit P5/P6."""
    h, w, c = image.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    raster = np.clip(np.rint(image * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(raster.tobytes())


def ingest_image_directory(root, config) -> DatasetContainer:
    """Build a dataset from ``root/<class>/<sample>/<frame>.pgm|ppm``.

    Frames are read in lexicographic order, subsampled to
    ``config.sequence_length`` and resized to the configured frame size.
    Labels follow sorted class-directory names.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetFormatError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetFormatError(f"{root}: no class directories")
    t, out_h, out_w = config.sequence_length, config.image_height, config.image_width
    samples = []
    channels = None
    for label, cdir in enumerate(class_dirs):
        sample_dirs = sorted(p for p in cdir.iterdir() if p.is_dir())
        if not sample_dirs:
            raise DatasetFormatError(f"{cdir}: class directory has no samples")
        for sdir in sample_dirs:
            frame_paths = sorted(p for p in sdir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
            if not frame_paths:
                raise DatasetFormatError(f"{sdir}: no .pgm/.ppm frames found")
            picked = [frame_paths[i] for i in subsample_indices(len(frame_paths), t)]
            frames = []
            for fp in picked:
                img = read_pnm(fp)
                if channels is None:
                    channels = img.shape[2]
                elif img.shape[2] != channels:
                    raise DatasetFormatError(f"{fp}: {img.shape[2]} channels, dataset has {channels}")
                frames.append(resize_frame(img, out_h, out_w))
            samples.append(FrameSequence(np.stack(frames).astype(np.float32), label,
                                         os.path.relpath(sdir, root)))
    return DatasetContainer(samples, [p.name for p in class_dirs], (t, out_h, out_w, channels))
