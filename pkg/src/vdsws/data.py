"""MNIST IDX reader."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


@dataclass
class DatasetSplit:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("image and label counts differ")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= 10):
            raise ValueError("labels must lie in [0, 10)")

    def __len__(self):
        return len(self.labels)

    def as_tuple(self):
        return self.images, self.labels

    def head(self, n):
        """First ``n`` examples (all of them if n is None)."""
        if n is None or n >= len(self):
            return self
        prov = dict(self.provenance, limit=int(n))
        return DatasetSplit(self.images[:n], self.labels[:n], prov)


def _read(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse(raw, expected_magic, path):
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxFormatError(f"{path}: truncated payload ({len(raw) - header} of "
                             f"{size} bytes)")
    if len(raw) - header > size:
        raise IdxFormatError(f"{path}: {len(raw) - header - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, limit=None):
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by 1/255."""
    images = _parse(_read(images_path), IMAGE_MAGIC, images_path)
    labels = _parse(_read(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= 10:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} out of range")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    split = DatasetSplit(x, labels.astype(np.int64),
                         {"images": str(images_path), "labels": str(labels_path)})
    return split.head(limit)


def write_idx(path, array, magic):
    """Write a uint8 array as an IDX file (used for fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    if magic & 0xFF != array.ndim:
        raise ValueError("magic dimension byte does not match array rank")
    header = struct.pack(">i", magic) + struct.pack(f">{array.ndim}i", *array.shape)
    Path(path).write_bytes(header + array.tobytes())
