"""
Differentiable Siamese augmentation.

One :class:`AugSample` holds a single random draw per operation. Applying the same
sample to the real and the synthetic batch of a matching step transforms both in
exactly the same way; every operation is differentiable in the pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from . import autodiff as ad
from .util import DsvDistillError

OPERATIONS = ("flip", "translate", "scale", "rotate", "color", "cutout")

FLIP_PROB = 0.5
TRANSLATE_RATIO = 0.125
SCALE_RANGE = (0.8, 1.2)
ROTATE_DEGREES = 15.0
COLOR_JITTER = 0.25
CUTOUT_RATIO = 0.5


class AugmentError(DsvDistillError):
    """Raised for unknown policy entries."""


@dataclass(frozen=True)
class AugSample:
    flip: bool = False
    translate: tuple[int, int] = (0, 0)
    scale: float = 1.0
    rotate: float = 0.0
    brightness: float = 0.0
    saturation: float = 0.0
    contrast: float = 0.0
    cutout: tuple[int, int] | None = None


def parse_policy(policy: str) -> tuple[str, ...]:
    """Split a comma separated op list, rejecting unknown names."""
    names = tuple(part.strip() for part in policy.split(",") if part.strip())
    for name in names:
        if name not in OPERATIONS:
            raise AugmentError(f"unknown augmentation {name!r}; expected a subset of {', '.join(OPERATIONS)}")
    return names


def _uniform(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand((), generator=generator, dtype=ad.DTYPE))


def _randint(generator: torch.Generator, low: int, high: int) -> int:
    return int(torch.randint(low, high, (), generator=generator))


def sample_augmentation(policy: str, image_size: tuple[int, int], generator: torch.Generator) -> AugSample:
    """Draw one shared augmentation for images of ``image_size`` (H, W)."""
    height, width = image_size
    draws: dict[str, object] = {}
    for name in parse_policy(policy):
        if name == "flip":
            draws["flip"] = _uniform(generator, 0.0, 1.0) < FLIP_PROB
        elif name == "translate":
            max_dy = int(height * TRANSLATE_RATIO + 0.5)
            max_dx = int(width * TRANSLATE_RATIO + 0.5)
            draws["translate"] = (_randint(generator, -max_dy, max_dy + 1), _randint(generator, -max_dx, max_dx + 1))
        elif name == "scale":
            draws["scale"] = _uniform(generator, *SCALE_RANGE)
        elif name == "rotate":
            draws["rotate"] = _uniform(generator, -ROTATE_DEGREES, ROTATE_DEGREES)
        elif name == "color":
            draws["brightness"] = _uniform(generator, -COLOR_JITTER, COLOR_JITTER)
            draws["saturation"] = _uniform(generator, -COLOR_JITTER, COLOR_JITTER)
            draws["contrast"] = _uniform(generator, -COLOR_JITTER, COLOR_JITTER)
        elif name == "cutout":
            draws["cutout"] = (_randint(generator, 0, height), _randint(generator, 0, width))
    return AugSample(**draws)  # type: ignore[arg-type]


def _flip(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    return torch.flip(batch, dims=[3]) if omega.flip else batch


def _translate(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    dy, dx = omega.translate
    if dy == 0 and dx == 0:
        return batch
    height, width = batch.shape[2], batch.shape[3]
    padded = F.pad(batch, (max(dx, 0), max(-dx, 0), max(dy, 0), max(-dy, 0)))
    rows = ad.slice_(padded, dim=2, start=max(-dy, 0), stop=max(-dy, 0) + height)
    return ad.slice_(rows, dim=3, start=max(-dx, 0), stop=max(-dx, 0) + width)


def _affine(batch: torch.Tensor, scale: float, degrees: float) -> torch.Tensor:
    """Resample about the image centre: zoom by ``scale`` and rotate by ``degrees``."""
    n, _, height, width = batch.shape
    centre_r = (height - 1) / 2.0
    centre_c = (width - 1) / 2.0
    rows = torch.arange(height, dtype=ad.DTYPE).view(height, 1).expand(height, width) - centre_r
    cols = torch.arange(width, dtype=ad.DTYPE).view(1, width).expand(height, width) - centre_c
    angle = math.radians(degrees)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    src_r = (cos_a * rows - sin_a * cols) / scale + centre_r
    src_c = (sin_a * rows + cos_a * cols) / scale + centre_c
    grid = torch.stack([src_r, src_c], dim=-1).unsqueeze(0).expand(n, height, width, 2)
    return ad.bilinear_resample(batch, grid)


def _scale(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    return batch if omega.scale == 1.0 else _affine(batch, omega.scale, 0.0)


def _rotate(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    return batch if omega.rotate == 0.0 else _affine(batch, 1.0, omega.rotate)


def _color(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    out = batch + omega.brightness
    channel_mean = out.mean(dim=1, keepdim=True)
    out = (out - channel_mean) * (1.0 + omega.saturation) + channel_mean
    image_mean = out.mean(dim=(1, 2, 3), keepdim=True)
    return (out - image_mean) * (1.0 + omega.contrast) + image_mean


def _cutout(batch: torch.Tensor, omega: AugSample) -> torch.Tensor:
    if omega.cutout is None:
        return batch
    height, width = batch.shape[2], batch.shape[3]
    box_h = int(height * CUTOUT_RATIO + 0.5)
    box_w = int(width * CUTOUT_RATIO + 0.5)
    top = max(omega.cutout[0] - box_h // 2, 0)
    left = max(omega.cutout[1] - box_w // 2, 0)
    mask = torch.ones((1, 1, height, width), dtype=batch.dtype)
    mask[..., top : min(top + box_h, height), left : min(left + box_w, width)] = 0.0
    return ad.mul(batch, mask)


_APPLY = {
    "flip": _flip,
    "translate": _translate,
    "scale": _scale,
    "rotate": _rotate,
    "color": _color,
    "cutout": _cutout,
}


def augment(batch: torch.Tensor, omega: AugSample, policy: str) -> torch.Tensor:
    """Apply the ops named in ``policy``, in order, using the draws in ``omega``."""
    out = batch
    for name in parse_policy(policy):
        out = _APPLY[name](out, omega)
    return out
