"""Dataset container, CIFAR-style binary ingestion, and synthetic data.

The synthetic generator makes class-conditional Gaussian-blob images:
each class owns a fixed +/- pattern around mid-gray, noise is added per
image, and pixels are clipped to [0, 1] and quantized to the 1/255 grid
(so the CIFAR binary writer round-trips bit-exactly).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "load_cifar_binary",
    "write_cifar_binary",
    "synthetic_dataset",
]

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixels
CIFAR_SHAPE = (3, 32, 32)


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, C*H*W) float64 in [0, 1], row-major planes
    labels: np.ndarray  # (n,) int64
    num_classes: int
    image_shape: tuple[int, int, int]
    split: str = "train"

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or images.shape[1] != int(np.prod(self.image_shape)):
            raise DataError(
                f"images must be (n, {int(np.prod(self.image_shape))}), "
                f"got {images.shape}"
            )
        if labels.shape != (images.shape[0],):
            raise DataError("labels must be one per image")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(
                f"label out of range: classes={self.num_classes}, "
                f"max label={labels.max()}"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def images_nchw(self) -> np.ndarray:
        return self.images.reshape((len(self),) + self.image_shape)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            images=self.images[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            image_shape=self.image_shape,
            split=self.split,
        )

    def restrict_to_classes(self, classes) -> "Dataset":
        mask = np.isin(self.labels, np.asarray(list(classes)))
        return self.subset(np.flatnonzero(mask))


def load_cifar_binary(
    path: str | Path, num_classes: int = 10, split: str = "train"
) -> Dataset:
    """Read CIFAR-10 binary records: 1 label byte + 3072 pixel bytes.

    Pixels are scaled to [0, 1] by /255; no other preprocessing.
    """
    raw = np.fromfile(str(path), dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        full = raw.size - raw.size % CIFAR_RECORD_BYTES
        raise DataError(
            f"{path}: truncated record at byte offset {full} "
            f"({raw.size - full} trailing bytes, expected {CIFAR_RECORD_BYTES})"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(
        images=images,
        labels=labels,
        num_classes=num_classes,
        image_shape=CIFAR_SHAPE,
        split=split,
    )


def write_cifar_binary(dataset: Dataset, path: str | Path) -> None:
    """Inverse of the loader; pixels are rounded to the nearest 1/255 step."""
    if tuple(dataset.image_shape) != CIFAR_SHAPE:
        raise DataError(
            f"CIFAR binary files store {CIFAR_SHAPE} images, "
            f"dataset has {dataset.image_shape}"
        )
    if dataset.labels.size and dataset.labels.max() > 255:
        raise DataError("labels above 255 cannot be stored in one byte")
    records = np.empty((len(dataset), CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.labels
    records[:, 1:] = np.rint(dataset.images * 255.0).astype(np.uint8)
    records.tofile(str(path))


def synthetic_dataset(
    classes: int,
    per_class: int,
    image_shape: tuple[int, int, int] = (1, 8, 8),
    seed: int = 0,
    noise: float = 0.25,
    split: str = "train",
    amplitude: float = 0.25,
) -> Dataset:
    """Class-conditional Gaussian-blob images, linearly separable at low noise.

    Class patterns depend only on (classes, image_shape, seed, amplitude),
    so train and test splits of the same seed share means but draw
    disjoint noise.
    """
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("per_class must be positive")
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    dim = int(np.prod(image_shape))
    pattern_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    means = 0.5 + amplitude * pattern_rng.choice([-1.0, 1.0], size=(classes, dim))
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([seed, 1 if split == "train" else 2])
    )
    labels = np.repeat(np.arange(classes), per_class)
    images = means[labels] + noise * noise_rng.standard_normal((labels.size, dim))
    np.clip(images, 0.0, 1.0, out=images)
    # Quantize to the 1/255 grid so binary persistence is lossless.
    images = np.rint(images * 255.0) / 255.0
    return Dataset(
        images=images,
        labels=labels,
        num_classes=classes,
        image_shape=tuple(image_shape),
        split=split,
    )
