"""
Convolutional trunk used both as classifier and as DM embedding.

Each of the ``depth`` blocks is conv 3x3 (padding 1) -> instance norm with a
channel affine map -> relu -> 2x2 average pooling. The trunk output is flattened
into the feature vector.
"""

from __future__ import annotations

import torch

from .. import autodiff as ad
from . import ModelError, ModelSpec, Parameters


def _spatial(spec: ModelSpec) -> tuple[int, int]:
    _, height, width = spec.input_shape
    for block in range(spec.depth):
        if height < 2 or width < 2:
            raise ModelError(
                f"input {spec.input_shape} too small for {spec.depth} pooling blocks (fails at block {block})"
            )
        height, width = height // 2, width // 2
    return height, width


def feature_size(spec: ModelSpec) -> int:
    height, width = _spatial(spec)
    return spec.width * height * width


def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    _spatial(spec)
    shapes: list[tuple[str, tuple[int, ...]]] = []
    channels = spec.input_shape[0]
    for block in range(spec.depth):
        shapes.append((f"block{block}.conv.weight", (spec.width, channels, 3, 3)))
        shapes.append((f"block{block}.conv.bias", (spec.width,)))
        shapes.append((f"block{block}.norm.weight", (spec.width,)))
        shapes.append((f"block{block}.norm.bias", (spec.width,)))
        channels = spec.width
    return shapes


def features(spec: ModelSpec, params: Parameters, batch: torch.Tensor) -> torch.Tensor:
    hidden = batch
    for block in range(spec.depth):
        prefix = f"block{block}"
        hidden = ad.conv2d(hidden, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"], padding=1)
        hidden = ad.instance_norm(hidden, params[f"{prefix}.norm.weight"], params[f"{prefix}.norm.bias"])
        hidden = ad.avg_pool2(ad.relu(hidden))
    return ad.reshape(hidden, (hidden.shape[0], -1))
