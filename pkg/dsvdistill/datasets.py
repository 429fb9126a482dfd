"""Dataset ingestion: CIFAR-10 binary batches, MNIST IDX files and toy problems."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .logging import get_logger
from .util import DsvDistillError, atomic_write_bytes

logger = get_logger("datasets")

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
TOY_KINDS = ("blobs", "moons", "separable2d")
BLOB_SIGMA = 0.5

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{k}.bin" for k in range(1, 6)),
    "test": ("test_batch.bin",),
}


class DataError(DsvDistillError):
    """Raised for malformed dataset files or impossible sampling requests."""


@dataclass(frozen=True)
class LabeledSet:
    images: torch.Tensor
    labels: torch.Tensor
    num_classes: int
    mean: torch.Tensor | None = None
    std: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.images.dim() != 4 or self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"dataset needs (n, C, H, W) images and n labels, got {tuple(self.images.shape)} / {tuple(self.labels.shape)}"
            )
        if self.labels.numel() and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def class_indices(self, label: int) -> torch.Tensor:
        return torch.nonzero(self.labels == label, as_tuple=False).view(-1)

    def by_class(self) -> dict[int, torch.Tensor]:
        return {c: self.images[self.class_indices(c)] for c in range(self.num_classes) if len(self.class_indices(c))}

    def subset(self, indices: torch.Tensor) -> "LabeledSet":
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def standardize(images: torch.Tensor, mean: torch.Tensor, std: torch.Tensor) -> torch.Tensor:
    return (images - mean.view(1, -1, 1, 1)) / std.view(1, -1, 1, 1)


def channel_stats(images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    mean = images.mean(dim=(0, 2, 3))
    std = images.std(dim=(0, 2, 3), unbiased=False).clamp_min(1e-12)
    return mean, std


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# CIFAR-10 ------------------------------------------------------------------------


def decode_cifar10(payload: bytes, source: str = "<bytes>") -> tuple[torch.Tensor, torch.Tensor]:
    """Decode raw 3073-byte records into [0, 1] images and labels."""
    if len(payload) % CIFAR_RECORD != 0:
        raise DataError(f"corrupt CIFAR-10 file {source}: size {len(payload)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(payload, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataError(f"corrupt CIFAR-10 file {source}: label {int(labels.max())} outside 0-9")
    pixels = records[:, 1:].astype(np.float64).reshape(-1, *CIFAR_SHAPE) / 255.0
    return torch.from_numpy(pixels), torch.from_numpy(labels)


def parse_cifar10(
    paths: Sequence[Path],
    normalization: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> LabeledSet:
    """
    Read CIFAR-10 binary batches.

    Pixels are scaled to [0, 1] and standardised per channel, with statistics
    computed from these files unless ``normalization`` (mean, std) is given.
    """
    images_parts, label_parts = [], []
    for path in paths:
        images, labels = decode_cifar10(_read(path), str(path))
        images_parts.append(images)
        label_parts.append(labels)
    if not images_parts:
        raise DataError("no CIFAR-10 files given")
    images = torch.cat(images_parts)
    labels = torch.cat(label_parts)
    mean, std = normalization if normalization is not None else channel_stats(images)
    logger.info("Loaded %d CIFAR-10 images from %d file(s)", images.shape[0], len(images_parts))
    return LabeledSet(standardize(images, mean, std), labels, num_classes=10, mean=mean, std=std)


# IDX -----------------------------------------------------------------------------


def parse_idx(images_path: Path, labels_path: Path, num_classes: int = 10) -> LabeledSet:
    """Read an IDX image/label file pair; images land in [0, 1] as (n, 1, rows, cols)."""
    image_bytes = _read(images_path)
    label_bytes = _read(labels_path)
    if len(image_bytes) < 16 or len(label_bytes) < 8:
        raise DataError(f"corrupt IDX pair {images_path} / {labels_path}: header truncated")
    magic, count, rows, cols = struct.unpack(">IIII", image_bytes[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataError(f"bad IDX image magic in {images_path}: expected 0x{IDX_IMAGE_MAGIC:08x}, got 0x{magic:08x}")
    label_magic, label_count = struct.unpack(">II", label_bytes[:8])
    if label_magic != IDX_LABEL_MAGIC:
        raise DataError(
            f"bad IDX label magic in {labels_path}: expected 0x{IDX_LABEL_MAGIC:08x}, got 0x{label_magic:08x}"
        )
    if label_count != count:
        raise DataError(f"IDX count mismatch: {count} images vs {label_count} labels")
    if len(image_bytes) != 16 + count * rows * cols or len(label_bytes) != 8 + count:
        raise DataError(f"corrupt IDX pair {images_path} / {labels_path}: payload size does not match header")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8).astype(np.int64)
    images = torch.from_numpy(pixels.reshape(count, 1, rows, cols))
    return LabeledSet(images, torch.from_numpy(labels), num_classes=num_classes)


def write_idx(images: torch.Tensor, labels: torch.Tensor, images_path: Path, labels_path: Path) -> None:
    """Write uint8 IDX files from [0, 1] images of shape (n, 1, rows, cols)."""
    n, _, rows, cols = images.shape
    pixels = np.clip(np.rint(images.detach().numpy() * 255.0), 0, 255).astype(np.uint8)
    atomic_write_bytes(Path(images_path), struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + pixels.tobytes())
    atomic_write_bytes(
        Path(labels_path), struct.pack(">II", IDX_LABEL_MAGIC, n) + labels.numpy().astype(np.uint8).tobytes()
    )


# Toy problems --------------------------------------------------------------------


def _toy_set(points: np.ndarray, labels: np.ndarray, num_classes: int) -> LabeledSet:
    images = torch.from_numpy(points.astype(np.float64)).reshape(len(points), 1, 1, points.shape[1])
    return LabeledSet(images, torch.from_numpy(labels.astype(np.int64)), num_classes=num_classes)


def _separable2d(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    normal = np.array([math.cos(angle), math.sin(angle)])
    offset = rng.uniform(-0.5, 0.5)
    kept: dict[int, list[np.ndarray]] = {0: [], 1: []}
    while min(len(v) for v in kept.values()) < n:
        point = rng.uniform(-3.0, 3.0, size=2)
        distance = float(point @ normal) + offset
        # half-gap 0.25 on each side keeps the classes 0.5 apart
        if abs(distance) < 0.25:
            continue
        label = int(distance > 0)
        if len(kept[label]) < n:
            kept[label].append(point)
    points = np.array(kept[0] + kept[1])
    labels = np.array([0] * n + [1] * n)
    return points, labels


def gen_toy(
    kind: str,
    n_per_class: int,
    seed: int,
    *,
    symmetric: bool = False,
    num_classes: int = 2,
) -> LabeledSet:
    """
    Generate a small 2-D problem as (n, 1, 1, 2) images.

    ``separable2d`` keeps a gap of at least 0.5 between the classes and with
    ``symmetric`` emits exactly (-2, 0), (-1, 0) (class 0) and (1, 0), (2, 0) (class 1).
    ``blobs`` places class means on a circle, 5 sigma apart.
    """
    if kind not in TOY_KINDS:
        raise DataError(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")
    if n_per_class < 1:
        raise DataError(f"n per class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    if kind == "separable2d":
        if symmetric:
            points = np.array([[-2.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
            return _toy_set(points, np.array([0, 0, 1, 1]), 2)
        points, labels = _separable2d(n_per_class, rng)
        return _toy_set(points, labels, 2)
    if kind == "moons":
        t = rng.uniform(0.0, math.pi, size=(2, n_per_class))
        upper = np.stack([np.cos(t[0]), np.sin(t[0])], axis=1)
        lower = np.stack([1.0 - np.cos(t[1]), 0.5 - np.sin(t[1])], axis=1)
        points = np.concatenate([upper, lower]) + rng.normal(0.0, 0.1, size=(2 * n_per_class, 2))
        return _toy_set(points, np.repeat([0, 1], n_per_class), 2)
    radius = 5.0 * BLOB_SIGMA / (2.0 * math.sin(math.pi / num_classes))
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = np.concatenate([m + BLOB_SIGMA * rng.standard_normal((n_per_class, 2)) for m in means])
    return _toy_set(points, np.repeat(np.arange(num_classes), n_per_class), num_classes)


def save_toy(dataset: LabeledSet, path: Path) -> None:
    """Write one ``x1 x2 ... label`` row per point."""
    rows = dataset.images.reshape(dataset.n, -1).numpy()
    lines = [" ".join(repr(float(v)) for v in row) + f" {int(label)}" for row, label in zip(rows, dataset.labels)]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def load_toy(path: Path, num_classes: int | None = None) -> LabeledSet:
    rows: list[list[float]] = []
    labels: list[int] = []
    for lineno, line in enumerate(_read(path).decode("utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        try:
            rows.append([float(v) for v in fields[:-1]])
            labels.append(int(fields[-1]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: expected 'x1 x2 ... label'") from exc
        if len(rows[-1]) != len(rows[0]) or not rows[-1]:
            raise DataError(f"{path}:{lineno}: inconsistent feature count")
    if not rows:
        raise DataError(f"{path}: no points")
    classes = num_classes or max(2, max(labels) + 1)
    return _toy_set(np.array(rows), np.array(labels), classes)


def load_dataset(kind: str, location: Path, split: str = "train", normalization=None) -> LabeledSet:
    """Load ``mnist`` / ``cifar10`` from a directory of standard file names, or a ``toy`` text file."""
    location = Path(location)
    if kind == "mnist":
        images_name, labels_name = MNIST_FILES[split]
        return parse_idx(location / images_name, location / labels_name)
    if kind == "cifar10":
        return parse_cifar10([location / name for name in CIFAR_FILES[split]], normalization)
    if kind == "toy":
        return load_toy(location)
    raise DataError(f"unknown dataset kind {kind!r}")
