"""MNIST (IDX) and CIFAR-10 (binary batch) loading, augmentation and batching."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InvalidParameterError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.247, 0.243, 0.261])
CIFAR_RECORD = 1 + 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, ...) float
    labels: np.ndarray  # (n,) int64
    split: str = "train"
    n_classes: int = 10
    digest: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split, self.n_classes, self.digest)

    def reshaped(self, shape):
        """Same samples with per-sample shape ``shape`` (e.g. (784,) or (1, 28, 28))."""
        return Dataset(
            self.images.reshape((len(self),) + tuple(shape)), self.labels, self.split, self.n_classes, self.digest
        )


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def parse_idx(raw, expected_magic):
    if len(raw) < 8:
        raise DataFormatError("IDX file shorter than its header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise DataFormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError("IDX file shorter than its header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header != n:
        raise DataFormatError(f"IDX payload has {len(raw) - header} bytes, header promises {n}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, split="train", flatten=True):
    """Pixels scaled to [0, 1]; ``flatten`` gives (n, 784), otherwise (n, 1, 28, 28)."""
    raw_x = _read(images_path)
    raw_y = _read(labels_path)
    x = parse_idx(raw_x, IDX_IMAGES)
    y = parse_idx(raw_y, IDX_LABELS)
    if x.shape[0] != y.shape[0]:
        raise DataFormatError(f"{x.shape[0]} images but {y.shape[0]} labels")
    if y.size and y.max() > 9:
        raise DataFormatError(f"MNIST label {int(y.max())} out of range")
    images = x.astype(np.float64) / 255.0
    images = images.reshape(len(images), -1) if flatten else images.reshape(len(images), 1, *x.shape[1:])
    digest = hashlib.sha256(raw_x + raw_y).hexdigest()
    return Dataset(images, y.astype(np.int64), split, 10, digest)


def load_mnist_dir(root, split="train", flatten=True):
    img, lab = MNIST_FILES[split]
    return load_mnist_idx(os.path.join(root, img), os.path.join(root, lab), split, flatten)


def normalize_cifar(images):
    """``(x - mean_c) / std_c`` per channel for (n, 3, 32, 32) images in [0, 1]."""
    return (images - CIFAR_MEAN[None, :, None, None]) / CIFAR_STD[None, :, None, None]


def load_cifar10_bin(paths, split="train"):
    """Concatenate CIFAR-10 binary batch files (label byte + 3072 channel-major pixels)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    chunks = []
    h = hashlib.sha256()
    for p in paths:
        raw = _read(p)
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        h.update(raw)
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD), np.uint8)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"CIFAR-10 label {int(labels.max())} out of range")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(normalize_cifar(images), labels, split, 10, h.hexdigest())


def augment_cifar(image, rng, pad=4):
    """Random horizontal flip (p = 0.5) then a random crop from the zero-padded image."""
    img = np.asarray(image)
    if rng.random() < 0.5:
        img = img[..., ::-1]
    c, hgt, wid = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    i, j = rng.integers(0, 2 * pad + 1, size=2)
    return np.ascontiguousarray(padded[:, i : i + hgt, j : j + wid])


def augment_batch(x, rng, pad=4):
    return np.stack([augment_cifar(img, rng, pad) for img in x])


def subset(ds, n, seed):
    """First ``n`` samples after a seeded shuffle (the full set when ``n`` is None)."""
    if n is None or n >= len(ds):
        return ds, np.arange(len(ds))
    if n < 1:
        raise InvalidParameterError(f"subset size must be >= 1, got {n}")
    idx = np.random.default_rng(seed).permutation(len(ds))[:n]
    return ds.take(idx), idx


def batches(ds, batch_size, shuffle=None):
    """Yield ``(x, labels)``, last partial batch kept.

    ``shuffle`` is a seed or a Generator; None keeps the stored order.
    """
    if batch_size < 1:
        raise InvalidParameterError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle is None:
        order = np.arange(len(ds))
    else:
        order = np.random.default_rng(shuffle).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]
