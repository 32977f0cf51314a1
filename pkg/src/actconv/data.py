"""Datasets: CIFAR-10 binary records, a synthetic long-range task, preprocessing and augmentation."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

RECORD_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
GCN_EPS = 1e-8
ZCA_EPS = 0.1


class DataError(IOError):
    """Missing, truncated or malformed dataset files."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    class_count: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split, self.class_count)


# ---------------------------------------------------------------- record I/O

def read_records(path, shape=RECORD_SHAPE, limit=None):
    """Read ``label byte + C*H*W pixel bytes`` records; returns ``(uint8 images, labels)``."""
    size = 1 + int(np.prod(shape))
    try:
        with open(path, "rb") as f:
            raw = f.read() if limit is None else f.read(size * limit)
            if limit is not None:
                rest = os.fstat(f.fileno()).st_size
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    total = len(raw) if limit is None else rest
    if total % size:
        raise DataError(f"{path}: {total} bytes is not a multiple of the {size}-byte record size")
    if len(raw) % size:
        raise DataError(f"{path}: truncated record")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, size)
    return arr[:, 1:].reshape(-1, *shape).copy(), arr[:, 0].astype(np.int64)


def write_records(path, images, labels):
    """Write images (uint8-convertible, N x C x H x W) in the CIFAR record layout."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8:
        if images.min() < 0 or images.max() > 255:
            raise ValueError("pixel values must lie in [0, 255]")
        images = images.astype(np.uint8)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("labels must fit in one byte")
    rec = np.concatenate([labels.astype(np.uint8)[:, None], images.reshape(len(images), -1)], axis=1)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def _cifar_dir(root):
    sub = os.path.join(root, "cifar-10-batches-bin")
    return sub if os.path.isdir(sub) else root


def load_cifar10(root, split="train", limit=None):
    """Load the binary CIFAR-10 batches under ``root``; the first ``limit`` records when given.

    Pixels are returned as float64 in ``[0, 255]`` (preprocess separately).
    """
    root = _cifar_dir(root)
    files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    images, labels = [], []
    remaining = limit
    for name in files:
        if remaining is not None and remaining <= 0:
            break
        path = os.path.join(root, name)
        if not os.path.exists(path):
            raise DataError(f"missing CIFAR-10 file {path}")
        im, lb = read_records(path, limit=remaining)
        images.append(im)
        labels.append(lb)
        if remaining is not None:
            remaining -= len(lb)
    images = np.concatenate(images).astype(np.float64)
    labels = np.concatenate(labels)
    if labels.max(initial=0) >= 10:
        raise DataError("CIFAR-10 label byte out of range")
    return Dataset(images, labels, split, 10)


# ---------------------------------------------------------------- preprocessing

def global_contrast_normalize(d, eps=GCN_EPS):
    """Per image: subtract the mean, divide by ``max(std, eps)``."""
    x = d.images.reshape(len(d), -1)
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered ** 2).mean(axis=1, keepdims=True))
    out = centered / np.maximum(std, eps)
    return Dataset(out.reshape(d.images.shape), d.labels, d.split, d.class_count)


def fit_zca(images, eps=ZCA_EPS):
    """Return ``(mean, W)`` so that ``(x - mean) @ W`` whitens flattened images."""
    x = images.reshape(len(images), -1)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / len(x)
    evals, evecs = np.linalg.eigh(cov)
    W = (evecs * (1.0 / np.sqrt(evals + eps))) @ evecs.T
    return mean, W


def apply_zca(d, zca):
    mean, W = zca
    x = (d.images.reshape(len(d), -1) - mean) @ W
    return Dataset(x.reshape(d.images.shape), d.labels, d.split, d.class_count)


# ---------------------------------------------------------------- augmentation

def crop_flip(images, offsets, flips, pad=4):
    """Zero-pad by ``pad``, crop back to the original size at ``offsets`` and mirror where ``flips``."""
    N, C, H, W = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(images)
    for i, ((r, c), f) in enumerate(zip(offsets, flips)):
        crop = padded[i, :, r:r + H, c:c + W]
        out[i] = crop[:, :, ::-1] if f else crop
    return out


def augment_batch(images, rng, pad=4):
    """Random ``pad``-pixel shift crop plus horizontal flip with probability 1/2."""
    N = len(images)
    offsets = rng.integers(0, 2 * pad + 1, size=(N, 2))
    flips = rng.random(N) < 0.5
    return crop_flip(images, offsets, flips, pad)


# ---------------------------------------------------------------- synthetic task

SYNTH_LAG = 6


def pair_statistic(images, lag=SYNTH_LAG):
    """Mean product of pixels ``lag`` columns apart (channel 0) for each image."""
    x = images[:, 0]
    return np.mean(x[:, :, :-lag] * x[:, :, lag:], axis=(1, 2))


def lag_profile(lag=SYNTH_LAG, width=1.0, strength=0.6):
    """Mixing weight of the copy shifted by ``t`` columns, for ``t = 0 .. 2 * lag``."""
    t = np.arange(2 * lag + 1, dtype=np.float64)
    a = strength * np.exp(-((t - lag) ** 2) / (2.0 * width ** 2))
    a[0] = 0.0
    return a


def synthetic_dilation_task(n, size=16, rng=None, lag=SYNTH_LAG, width=1.0, strength=0.6, split="train"):
    """Two-class images whose label is the sign of the correlation between pixels ``lag`` columns apart.

    Each row is white noise ``u`` plus shifted copies of itself,
    ``x = u + s * sum_t a_t * shift(u, t)``, with ``s = +1`` for class 1 and
    ``-1`` for class 0 and ``a_t`` a bump centred on ``lag`` (see
    :func:`lag_profile`).  Columns closer than ``lag`` carry only the bump's
    tail, so a receptive field narrower than ``lag + 1`` columns sees a weak
    version of the signal; the strong one sits ``lag`` columns apart.
    Images whose :func:`pair_statistic` disagrees with the planted sign are
    redrawn, so the label is a deterministic function of the image.
    """
    if size < 9:
        raise ValueError("size must be >= 9")
    rng = np.random.default_rng() if rng is None else rng
    a = lag_profile(lag, width, strength)
    L = len(a) - 1
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    images = np.empty((n, 1, size, size))
    norm = np.sqrt(1.0 + np.sum(a ** 2))
    pending = np.arange(n)
    while len(pending):
        u = rng.standard_normal((len(pending), size, size + L))
        sign = np.where(labels[pending] == 1, 1.0, -1.0)[:, None, None]
        x = u[:, :, L:].copy()
        for t in range(1, L + 1):
            x += sign * a[t] * u[:, :, L - t:L - t + size]
        images[pending, 0] = x / norm
        stat = pair_statistic(images[pending], lag)
        pending = pending[(stat > 0) != (labels[pending] == 1)]
    return Dataset(images, labels, split, 2)


def to_uint8(images, scale=32.0):
    """Quantise zero-centred float images into bytes for :func:`write_records`."""
    return np.clip(np.round(images * scale + 128.0), 0, 255).astype(np.uint8)
