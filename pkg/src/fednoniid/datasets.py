"""Dataset containers, binary parsers and the download helper.

Supported on-disk formats:
  * MNIST IDX image/label files (big-endian headers, magics 2051/2049)
  * CIFAR-10 binary batches (3073-byte records: label byte + 3 colour planes)

``fetch_dataset`` downloads (or copies, for ``file://`` URLs) a source file,
transparently gunzips ``.gz`` payloads and verifies a SHA-256 digest of the
decompressed artifact.  Source URLs are configuration, never constants.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import PCG32, SYNTH_SAMPLE, derive_seed

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073

_SHAPE_BY_NAME = {"MNIST": (28, 28, 1), "CIFAR10": (32, 32, 3)}


class DataError(Exception):
    """Malformed or inconsistent data (bad headers, digests, counts)."""


@dataclass(frozen=True)
class Dataset:
    """In-memory labelled image collection.

    images are uint8 with shape (N, H, W, C); labels are integer class ids.
    """

    name: str
    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise DataError("images must be uint8 with shape (N, H, W, C)")
        if len(self.images) != len(self.labels):
            raise DataError(
                f"image count {len(self.images)} != label count {len(self.labels)}"
            )
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise DataError("label id out of range for num_classes")
        if len(self.labels) and int(self.labels.min()) < 0:
            raise DataError("negative label id")
        expected = _SHAPE_BY_NAME.get(self.name)
        if expected is not None and self.image_shape != expected:
            raise DataError(f"{self.name} images must have shape {expected}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(
            name or self.name,
            self.images[indices],
            self.labels[indices],
            self.num_classes,
        )


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def load_mnist(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset.

    The result is named MNIST for 28x28 content; other dimensions (test
    fixtures, derived corpora in IDX containers) load as generic IDX data.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "IDX image header"))
        if magic != MNIST_IMAGE_MAGIC:
            raise DataError(f"wrong magic {magic} in image file (expected {MNIST_IMAGE_MAGIC})")
        pixels = _read_exact(f, count * rows * cols, "IDX image payload")
        if f.read(1):
            raise DataError("trailing bytes after IDX image payload")
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "IDX label header"))
        if magic != MNIST_LABEL_MAGIC:
            raise DataError(f"wrong magic {magic} in label file (expected {MNIST_LABEL_MAGIC})")
        raw_labels = _read_exact(f, label_count, "IDX label payload")
        if f.read(1):
            raise DataError("trailing bytes after IDX label payload")
    if count != label_count:
        raise DataError(f"image count {count} != label count {label_count}")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows, cols, 1)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    name = "MNIST" if (rows, cols) == (28, 28) else "IDX"
    return Dataset(name, images, labels, 10)


def load_cifar10(batch_paths) -> Dataset:
    """Parse CIFAR-10 binary batches, concatenated in file order."""
    all_images, all_labels = [], []
    for path in batch_paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataError(
                f"{path}: length {len(raw)} not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if len(labels) and int(labels.max()) >= 10:
            raise DataError(f"{path}: label byte {int(labels.max())} >= 10")
        # pixel block is three 1024-byte colour planes, row-major within a plane
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        all_images.append(planes.transpose(0, 2, 3, 1).copy())
        all_labels.append(labels)
    images = np.concatenate(all_images) if all_images else np.empty((0, 32, 32, 3), np.uint8)
    labels = np.concatenate(all_labels) if all_labels else np.empty(0, np.int64)
    return Dataset("CIFAR10", images, labels, 10)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (N, H, W) or (N, H, W, 1) as an IDX file."""
    if images.ndim == 4:
        if images.shape[3] != 1:
            raise ValueError("IDX images must be single channel")
        images = images[..., 0]
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", MNIST_IMAGE_MAGIC, n, rows, cols))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", MNIST_LABEL_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def write_cifar_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 (N, 32, 32, 3) images and labels as one CIFAR-10 batch."""
    n = len(labels)
    records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = np.asarray(labels, dtype=np.uint8)
    records[:, 1:] = images.transpose(0, 3, 1, 2).reshape(n, 3072)
    Path(path).write_bytes(records.tobytes())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(source_url: str, dest, expected_digest: str | None = None) -> Path:
    """Fetch a source file to ``dest``, gunzipping ``.gz`` payloads.

    The digest (SHA-256 hex) is checked on the decompressed artifact.  A
    second call with a matching file already present is a no-op.  On digest
    mismatch no partial file is left behind.
    """
    dest = Path(dest)
    if dest.exists():
        if expected_digest is None or sha256_file(dest) == expected_digest:
            return dest
        dest.unlink()
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_name(dest.name + ".part")
    try:
        with urllib.request.urlopen(source_url) as resp, open(tmp, "wb") as out:
            data = resp.read()
            if source_url.endswith(".gz"):
                data = gzip.decompress(data)
            out.write(data)
        if expected_digest is not None:
            got = sha256_file(tmp)
            if got != expected_digest:
                raise DataError(
                    f"digest mismatch for {source_url}: expected {expected_digest}, got {got}"
                )
        os.replace(tmp, dest)
    finally:
        if tmp.exists():
            tmp.unlink()
    return dest


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

# Fixed seed defining the class templates; part of the corpus definition,
# deliberately independent of the caller's seed.
TEMPLATE_SEED = 0x5EED0F5EED
_BLOBS_PER_CLASS = 3
_GHOST_AMPLITUDE = 0.30
_PIXEL_NOISE = 0.10


def _class_template(label: int, height: int, width: int) -> np.ndarray:
    rng = PCG32(TEMPLATE_SEED, stream=label)
    yy, xx = np.mgrid[0:height, 0:width]
    canvas = np.zeros((height, width), dtype=np.float64)
    margin_y, margin_x = height // 4, width // 4
    for _ in range(_BLOBS_PER_CLASS):
        cy = margin_y + rng.below(height - 2 * margin_y)
        cx = margin_x + rng.below(width - 2 * margin_x)
        sigma = 1.8 + 2.0 * rng.uniforms(1)[0]
        amp = 0.55 + 0.40 * rng.uniforms(1)[0]
        canvas += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return np.clip(canvas, 0.0, 1.0)


def _shift2d(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[ys, xs] = img[yd, xd]
    return out


def make_synthetic(
    n: int,
    seed: int,
    num_classes: int = 10,
    image_shape: tuple[int, int, int] = (28, 28, 1),
) -> Dataset:
    """Deterministic labelled image corpus for desk-scale experiments.

    Each class is a fixed arrangement of soft blobs; samples add position
    jitter, intensity scaling, a faint "ghost" of another class and pixel
    noise, so classifiers can learn the task without saturating it.
    Labels cycle 0..num_classes-1, giving balanced classes.
    """
    height, width, channels = image_shape
    if channels != 1 and channels != 3:
        raise ValueError("synthetic images support 1 or 3 channels")
    templates = [_class_template(c, height, width) for c in range(num_classes)]
    images = np.empty((n, height, width, channels), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    sample_seed = derive_seed(seed, SYNTH_SAMPLE)
    for i in range(n):
        rng = PCG32(sample_seed, stream=i)
        label = i % num_classes
        dy = rng.below(7) - 3
        dx = rng.below(7) - 3
        scale = 0.70 + 0.45 * rng.uniforms(1)[0]
        ghost = rng.below(num_classes)
        ghost_amp = _GHOST_AMPLITUDE * rng.uniforms(1)[0]
        canvas = scale * _shift2d(templates[label], dy, dx)
        canvas = canvas + ghost_amp * templates[ghost]
        canvas = canvas + _PIXEL_NOISE * rng.normals(height * width).reshape(height, width)
        plane = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
        images[i] = plane[:, :, None] if channels == 1 else np.stack([plane] * 3, axis=-1)
        labels[i] = label
    return Dataset("SYNTHETIC", images, labels, num_classes)
