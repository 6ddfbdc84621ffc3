"""MNIST-style IDX file handling and labeled data sets.

The IDX format is the classic big-endian binary layout used by the MNIST
distribution: a 4-byte magic number, big-endian int32 dimension sizes,
then raw unsigned bytes.  Files ending in ``.gz`` are transparently
(de)compressed.  Pixels are mapped to floats in [0, 1] by dividing by 255.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

IMAGE_MAGIC = 0x00000803  # unsigned bytes, 3 dimensions (n, rows, cols)
LABEL_MAGIC = 0x00000801  # unsigned bytes, 1 dimension (n,)
N_CLASSES = 10

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    """A file does not conform to the IDX layout."""


class MagicNumberError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class LabelRangeError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, payload):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def _take(buf, offset, n, path):
    if offset + n > len(buf):
        raise TruncatedFileError(
            f"{path}: needed {n} bytes at offset {offset}, file has {len(buf)}"
        )
    return buf[offset : offset + n], offset + n


def _read_header(buf, path, expected_magic, n_dims):
    chunk, offset = _take(buf, 0, 4 * (1 + n_dims), path)
    fields = struct.unpack(f">{1 + n_dims}l", chunk)
    if fields[0] != expected_magic:
        raise MagicNumberError(
            f"{path}: magic number 0x{fields[0] & 0xFFFFFFFF:08x}, "
            f"expected 0x{expected_magic:08x}"
        )
    dims = fields[1:]
    if any(d < 0 for d in dims):
        raise IdxFormatError(f"{path}: negative dimension in header {dims}")
    return dims, offset


def load_idx_images(path):
    """Read an IDX image file into an (n, rows*cols) float64 array in [0, 1]."""
    buf = _read_bytes(path)
    (n, rows, cols), offset = _read_header(buf, path, IMAGE_MAGIC, 3)
    payload, offset = _take(buf, offset, n * rows * cols, path)
    if offset != len(buf):
        raise IdxFormatError(f"{path}: {len(buf) - offset} trailing bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(n, rows * cols)


def load_idx_labels(path):
    """Read an IDX label file into an (n,) int64 array; labels must be 0..9."""
    buf = _read_bytes(path)
    (n,), offset = _read_header(buf, path, LABEL_MAGIC, 1)
    payload, offset = _take(buf, offset, n, path)
    if offset != len(buf):
        raise IdxFormatError(f"{path}: {len(buf) - offset} trailing bytes")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= N_CLASSES:
        bad = int(labels.max())
        raise LabelRangeError(f"{path}: label {bad} outside 0..{N_CLASSES - 1}")
    return labels


def save_idx_images(path, images, rows=28, cols=28):
    """Write float images in [0, 1] back to IDX bytes (inverse of the loader)."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 2 or imgs.shape[1] != rows * cols:
        raise ValueError(f"images must be (n, {rows * cols}), got {imgs.shape}")
    if imgs.size and (imgs.min() < 0.0 or imgs.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    header = struct.pack(">4l", IMAGE_MAGIC, imgs.shape[0], rows, cols)
    payload = np.rint(imgs * 255.0).astype(np.uint8).tobytes()
    _write_bytes(path, header + payload)


def save_idx_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
    header = struct.pack(">2l", LABEL_MAGIC, labels.shape[0])
    _write_bytes(path, header + labels.astype(np.uint8).tobytes())


@dataclass
class LabeledSet:
    """Images (n, d) in [0, 1] paired with integer labels (n,)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise ValueError(f"images must be 2-D, got shape {self.images.shape}")
        if self.labels.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {self.labels.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.shape[0] == 0:
            raise ValueError("labeled set must contain at least one example")
        if not np.isfinite(self.images).all():
            raise ValueError("images contain NaN or Inf")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= N_CLASSES:
            raise LabelRangeError(
                f"label {int(self.labels.max())} outside 0..{N_CLASSES - 1}"
            )

    @property
    def n(self):
        return self.images.shape[0]

    def subset(self, index):
        return LabeledSet(self.images[index], self.labels[index])


def load_labeled(images_path, labels_path):
    """Load a matching image/label file pair into a LabeledSet."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    return LabeledSet(images, labels)


def _find(data_dir, stem):
    for name in (stem, stem + ".gz"):
        candidate = f"{data_dir}/{name}"
        try:
            with (gzip.open if name.endswith(".gz") else open)(candidate, "rb"):
                return candidate
        except OSError:
            continue
    raise FileNotFoundError(f"{data_dir}: no {stem} or {stem}.gz")


def load_mnist(data_dir, kind="train"):
    """Load the train or test split from a directory of MNIST-named IDX files."""
    if kind == "train":
        stems = (TRAIN_IMAGES, TRAIN_LABELS)
    elif kind == "test":
        stems = (TEST_IMAGES, TEST_LABELS)
    else:
        raise ValueError(f"kind must be 'train' or 'test', got {kind!r}")
    return load_labeled(_find(data_dir, stems[0]), _find(data_dir, stems[1]))


def batches(dataset, batch_size, rng):
    """Shuffle and split into batches; a short remainder batch is kept.

    The shuffle consumes exactly one permutation from ``rng``, so the
    batch composition for (seed, epoch) is reproducible.
    """
    if not isinstance(rng, RngStream):
        raise TypeError("rng must be an RngStream")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if dataset.n == 0:
        raise ValueError("cannot batch an empty data set")
    order = rng.permutation(dataset.n)
    out = []
    for start in range(0, dataset.n, batch_size):
        take = order[start : start + batch_size]
        out.append((dataset.images[take], dataset.labels[take]))
    return out
