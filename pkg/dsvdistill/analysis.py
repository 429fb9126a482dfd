"""Pixel-space averaging, frequency analysis and montage export of synthetic sets."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .kkt import SyntheticSet
from .logging import get_logger
from .util import DsvDistillError, atomic_write_bytes

logger = get_logger("analysis")

DEFAULT_RADIUS = 0.25
CONSTANT_GRAY = 128
LAYOUTS = ("class-grid", "strip")


class AnalysisError(DsvDistillError):
    """Raised for mismatched sets, invalid radii or failed exports."""


def average_sets(a: SyntheticSet, b: SyntheticSet) -> SyntheticSet:
    """Pixelwise mean of two sets with identical labels; multipliers of the result are 0."""
    if a.images.shape != b.images.shape:
        raise AnalysisError(f"cannot average sets of shape {tuple(a.images.shape)} and {tuple(b.images.shape)}")
    if a.num_classes != b.num_classes or not torch.equal(a.labels, b.labels):
        raise AnalysisError("cannot average sets with different label sequences")
    images = (a.images.detach() + b.images.detach()) / 2.0
    return SyntheticSet(
        images=images,
        labels=a.labels.clone(),
        lambdas=torch.zeros_like(a.lambdas),
        num_classes=a.num_classes,
    )


# FFT -----------------------------------------------------------------------------


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    indices = np.arange(n)
    reversed_ = np.zeros(n, dtype=np.int64)
    for bit in range(bits):
        reversed_ = (reversed_ << 1) | ((indices >> bit) & 1)
    return reversed_


def fft_radix2(values: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (length a power of two)."""
    data = np.asarray(values, dtype=np.complex128)
    n = data.shape[-1]
    if n < 1 or n & (n - 1):
        raise AnalysisError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = data.shape[:-1]
    out = data[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(data.shape)
        size *= 2
    return out


def fft2(channel: np.ndarray) -> np.ndarray:
    """2-D transform of the last two axes: rows first, then columns."""
    rows = fft_radix2(channel)
    return fft_radix2(np.swapaxes(rows, -1, -2)).swapaxes(-1, -2)


def _next_power_of_two(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def to_power_of_two(channel: np.ndarray) -> np.ndarray:
    """Bilinearly resample an H x W array up to power-of-two sides (no-op when already so)."""
    height, width = channel.shape[-2:]
    target = (_next_power_of_two(height), _next_power_of_two(width))
    if target == (height, width):
        return np.asarray(channel, dtype=np.float64)
    tensor = torch.as_tensor(np.asarray(channel, dtype=np.float64)).reshape(1, 1, height, width)
    resized = F.interpolate(tensor, size=target, mode="bilinear", align_corners=False)
    return resized.reshape(target).numpy()


def fft2_magnitude(channel: np.ndarray) -> np.ndarray:
    """Centre-shifted magnitude spectrum of one H x W channel."""
    values = np.asarray(channel, dtype=np.float64)
    if values.ndim != 2:
        raise AnalysisError(f"expected an H x W channel, got shape {values.shape}")
    return np.fft.fftshift(np.abs(fft2(to_power_of_two(values))))


def low_freq_energy_ratio(image: np.ndarray, radius: float = DEFAULT_RADIUS) -> float:
    """
    Share of spectral energy inside a centred disc, DC included.

    ``radius`` is a fraction of the distance from the centre bin to the farthest
    corner, so 1.0 covers every bin. Multi-channel images pool their energy over
    channels. An image with no energy at all counts as fully low-frequency.
    """
    if not 0.0 < radius <= 1.0:
        raise AnalysisError(f"radius fraction must lie in (0, 1], got {radius}")
    values = np.asarray(image, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    if values.ndim != 3:
        raise AnalysisError(f"expected (C, H, W) or (H, W), got shape {values.shape}")
    energy = sum(fft2_magnitude(channel) ** 2 for channel in values)
    total = float(energy.sum())
    if total == 0.0:
        return 1.0
    height, width = energy.shape
    rows = np.arange(height)[:, None] - height // 2
    cols = np.arange(width)[None, :] - width // 2
    distance = np.sqrt(rows**2 + cols**2)
    inside = distance / distance.max() <= radius if distance.max() > 0 else np.ones_like(distance, dtype=bool)
    return float(energy[inside].sum()) / total


def frequency_report(sets: Mapping[str, SyntheticSet], radius: float = DEFAULT_RADIUS) -> list[dict[str, Any]]:
    """Mean low-frequency ratio per (set, class) plus one ``all`` row per set."""
    key = f"low_freq_ratio@{radius:g}"
    rows: list[dict[str, Any]] = []
    for name, synthetic in sets.items():
        ratios = np.array([low_freq_energy_ratio(img.numpy(), radius) for img in synthetic.images.detach()])
        labels = synthetic.labels.numpy()
        for label in synthetic.classes():
            rows.append({"kind": "frequency", "set": name, "class": label, key: float(ratios[labels == label].mean())})
        rows.append({"kind": "frequency", "set": name, "class": "all", key: float(ratios.mean())})
        logger.info("%s: mean %s = %.4f", name, key, float(ratios.mean()))
    return rows


# Export --------------------------------------------------------------------------


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Min-max scale one (C, H, W) image to uint8 RGB (H, W, 3); constant images are mid-gray."""
    values = np.asarray(image, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        scaled = np.full(values.shape, CONSTANT_GRAY, dtype=np.uint8)
    else:
        scaled = np.rint((values - low) / (high - low) * 255.0).astype(np.uint8)
    if scaled.shape[0] == 1:
        scaled = np.repeat(scaled, 3, axis=0)
    elif scaled.shape[0] != 3:
        raise AnalysisError(f"cannot export {scaled.shape[0]}-channel images")
    return np.transpose(scaled, (1, 2, 0))


def montage_layout(synthetic: SyntheticSet, layout: str = "class-grid") -> tuple[int, int]:
    """(rows, cols) of the montage grid."""
    if layout == "strip":
        return 1, synthetic.n
    if layout != "class-grid":
        raise AnalysisError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    counts = torch.bincount(synthetic.labels, minlength=synthetic.num_classes)
    present = int((counts > 0).sum())
    return int(counts.max()) if synthetic.n else 0, present


def export_images(synthetic: SyntheticSet, path: Path, layout: str = "class-grid") -> tuple[int, int]:
    """
    Write a binary PPM montage of ``synthetic`` and return its (rows, cols).

    ``class-grid`` puts one class per column and stacks its images downwards;
    ``strip`` lays every image side by side in set order.
    """
    if synthetic.n == 0:
        raise AnalysisError("nothing to export")
    rows, cols = montage_layout(synthetic, layout)
    _, height, width = synthetic.image_shape
    canvas = np.zeros((rows * height, cols * width, 3), dtype=np.uint8)
    images = synthetic.images.detach().numpy()
    labels = synthetic.labels.tolist()

    if layout == "strip":
        cells = [(0, index) for index in range(synthetic.n)]
    else:
        column = {label: col for col, label in enumerate(synthetic.classes())}
        filled: dict[int, int] = {}
        cells = []
        for label in labels:
            cells.append((filled.get(label, 0), column[label]))
            filled[label] = filled.get(label, 0) + 1

    for image, (row, col) in zip(images, cells):
        canvas[row * height : (row + 1) * height, col * width : (col + 1) * width] = normalize_image(image)

    buffer = io.BytesIO()
    Image.fromarray(canvas).save(buffer, format="PPM")
    try:
        atomic_write_bytes(Path(path), buffer.getvalue())
    except OSError as exc:
        raise AnalysisError(f"cannot write montage {path}: {exc}") from exc
    logger.info("Wrote %dx%d montage to %s", rows, cols, path)
    return rows, cols
