"""Datasets: IDX ingestion, synthetic generators, normalization and splits."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or len(x) == 0:
            raise ValueError(f"features must be a non-empty n x d matrix, got shape {x.shape}")
        if y.shape != (len(x),):
            raise ValueError(f"labels shape {y.shape} does not match {len(x)} examples")
        if np.any(y < 0) or np.any(y >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, provenance: str | None = None) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, provenance or self.provenance)


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class IdxBadMagic(IdxFormatError):
    pass


class IdxTruncated(IdxFormatError):
    pass


class IdxCountMismatch(IdxFormatError):
    pass


def _read_idx(path, expected_magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxTruncated(path, len(raw), "file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise IdxBadMagic(path, 0, f"magic number {magic}, expected {expected_magic}")
    if len(raw) < header:
        raise IdxTruncated(path, len(raw), f"header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxTruncated(path, len(raw), f"payload needs {size} bytes after the header, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims)


def read_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatch(
            labels_path, 4, f"{labels.shape[0]} labels but {images.shape[0]} images in {images_path}"
        )
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    feats = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), k, f"idx:{os.path.basename(str(images_path))}")


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX layout."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise TypeError("IDX payloads must be uint8")
    if images.ndim != 3:
        raise ValueError(f"images must be (n, rows, cols), got {images.shape}")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes(order="C"))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def synth_two_moons(n: int, noise_sd: float = 0.0, seed: int = 0) -> Dataset:
    """Two interleaved half circles of radius 1.

    Class 0 is centred at (0, 0) (upper arc), class 1 at (1, 0.5) (lower arc).
    """
    if n < 4:
        raise ValueError(f"need n >= 4 for two classes, got {n}")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    if noise_sd > 0:
        x = x + rng.normal(0.0, noise_sd, x.shape)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], 2, f"two_moons(n={n},noise_sd={noise_sd},seed={seed})")


def synth_blobs(n: int, k: int = 3, spread: float = 1.0, seed: int = 0, dim: int = 2, center_box: float = 5.0) -> Dataset:
    """Isotropic Gaussian clusters with centres uniform in [-center_box, center_box]^dim."""
    if k < 2:
        raise ValueError(f"need at least 2 classes, got {k}")
    if n < 2 * k:
        raise ValueError(f"need n >= 2k ({2 * k}), got {n}")
    if spread < 0 or dim < 1 or center_box <= 0:
        raise ValueError("spread must be >= 0, dim >= 1 and center_box > 0")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_box, center_box, (k, dim))
    y = np.arange(n) % k
    rng.shuffle(y)
    x = centers[y] + spread * rng.standard_normal((n, dim))
    return Dataset(x, y, k, f"blobs(n={n},k={k},spread={spread},seed={seed})")


def normalize_per_feature_mean(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Subtract the training-set per-feature mean from every dataset given."""
    mu = train.features.mean(axis=0)
    return tuple(replace(d, features=d.features - mu) for d in (train, *others))


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")


def split_sizes(n: int, fraction: float) -> tuple[int, int]:
    # guard against 0.9 * 100 = 90.00000000000001 style rounding up
    n_train = math.ceil(round(n * (1.0 - fraction), 9))
    return n_train, n - n_train


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    n_train, n_val = split_sizes(len(dataset), spec.validation_fraction)
    if n_train == 0 or n_val == 0:
        raise ValueError(
            f"validation_fraction {spec.validation_fraction} on {len(dataset)} examples leaves an empty part"
        )
    perm = np.random.default_rng(spec.seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))
