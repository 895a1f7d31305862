"""Image datasets: a built-in synthetic shapes generator and IDX file I/O.

Images are float32 (N, C, H, W) in [0, 1]. IDX files store them as unsigned
bytes, so a write/read round trip quantizes to 1/255 steps.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError

SHAPE_NAMES = (
    "disk", "ring", "square", "frame", "triangle",
    "plus", "cross", "hbar", "vbar", "diamond",
)


def _render(kind: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 - 0.5 + rng.uniform(-3, 3)
    cx = size / 2 - 0.5 + rng.uniform(-3, 3)
    r = rng.uniform(6.0, 10.0)
    t = rng.uniform(1.6, 2.6)  # stroke width
    dy, dx = yy - cy, xx - cx
    dist = np.hypot(dy, dx)
    cheb = np.maximum(np.abs(dy), np.abs(dx))
    name = SHAPE_NAMES[kind]
    if name == "disk":
        m = dist <= r
    elif name == "ring":
        m = np.abs(dist - r) <= t / 2 + 0.3
    elif name == "square":
        m = cheb <= r * 0.8
    elif name == "frame":
        m = np.abs(cheb - r * 0.8) <= t / 2 + 0.3
    elif name == "triangle":
        m = (dy <= r * 0.7) & (dy >= -r * 0.9 + 1.6 * np.abs(dx))
    elif name == "plus":
        m = ((np.abs(dy) <= t) & (np.abs(dx) <= r)) | ((np.abs(dx) <= t) & (np.abs(dy) <= r))
    elif name == "cross":
        a, b = (dy + dx) / np.sqrt(2), (dy - dx) / np.sqrt(2)
        m = ((np.abs(a) <= t) & (np.abs(b) <= r)) | ((np.abs(b) <= t) & (np.abs(a) <= r))
    elif name == "hbar":
        m = (np.abs(dy) <= t + 0.5) & (np.abs(dx) <= r)
    elif name == "vbar":
        m = (np.abs(dx) <= t + 0.5) & (np.abs(dy) <= r)
    else:  # diamond
        m = np.abs(dy) + np.abs(dx) <= r
    return m.astype(np.float64)


def synthetic_shapes(
    n: int,
    seed: int = 0,
    size: int = 28,
    channels: int = 1,
    noise: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate ``n`` labelled images of 10 jittered geometric shapes.

    Each image has a random foreground intensity, a dim random background
    level and additive Gaussian pixel noise. RGB images (``channels=3``) get a
    random per-channel tint.

    Returns:
        (images, labels) with images of shape (n, channels, size, size).
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(SHAPE_NAMES), size=n)
    images = np.empty((n, channels, size, size), dtype=np.float32)
    for i, kind in enumerate(labels):
        mask = _render(int(kind), size, rng)
        fg = rng.uniform(0.6, 1.0)
        bg = rng.uniform(0.0, 0.25)
        tint = rng.uniform(0.6, 1.0, size=channels) if channels > 1 else np.ones(1)
        img = bg + (fg - bg) * mask
        img = img[None] * tint[:, None, None] + rng.normal(0.0, noise, (channels, size, size))
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)


# ----------------------------------------------------------------------------
# IDX files (the format of the classic digit datasets)
# ----------------------------------------------------------------------------

_IDX_UBYTE = 0x08


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ConfigurationError("only unsigned-byte IDX files are written")
    header = struct.pack(">HBB", 0, _IDX_UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(Path(path), "wb") as fh:
        fh.write(header + array.tobytes())


def read_idx(path: str | Path) -> np.ndarray:
    with _open(Path(path), "rb") as fh:
        data = fh.read()
    zero, dtype, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype != _IDX_UBYTE:
        raise ConfigurationError(f"{path}: not an unsigned-byte IDX file")
    shape = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    payload = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    if payload.size != int(np.prod(shape)):
        raise ConfigurationError(f"{path}: payload size does not match header shape {shape}")
    return payload.reshape(shape)


def images_to_bytes(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_dataset(prefix: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write ``<prefix>-images.idx`` (N, C, H, W) and ``<prefix>-labels.idx``."""
    prefix = str(prefix)
    write_idx(prefix + "-images.idx", images_to_bytes(images))
    write_idx(prefix + "-labels.idx", np.asarray(labels, dtype=np.uint8))


def load_dataset(prefix: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset pair; 3-D image files (N, H, W) get a channel axis."""
    prefix = str(prefix)
    images = read_idx(prefix + "-images.idx").astype(np.float32) / np.float32(255.0)
    if images.ndim == 3:
        images = images[:, None]
    labels = read_idx(prefix + "-labels.idx").astype(np.int64)
    return images, labels
