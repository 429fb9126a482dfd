"""Fully connected classifier: ``depth`` linear layers, relu between them."""

from __future__ import annotations

import math

import torch

from .. import autodiff as ad
from . import ModelSpec, Parameters


def _hidden_layers(spec: ModelSpec) -> int:
    return spec.depth - 1


def feature_size(spec: ModelSpec) -> int:
    if _hidden_layers(spec) == 0:
        return math.prod(spec.input_shape)
    return spec.width


def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    shapes: list[tuple[str, tuple[int, ...]]] = []
    fan_in = math.prod(spec.input_shape)
    for layer in range(_hidden_layers(spec)):
        shapes.append((f"fc{layer}.weight", (spec.width, fan_in)))
        shapes.append((f"fc{layer}.bias", (spec.width,)))
        fan_in = spec.width
    return shapes


def features(spec: ModelSpec, params: Parameters, batch: torch.Tensor) -> torch.Tensor:
    hidden = ad.reshape(batch, (batch.shape[0], -1))
    for layer in range(_hidden_layers(spec)):
        hidden = ad.relu(ad.linear(hidden, params[f"fc{layer}.weight"], params[f"fc{layer}.bias"]))
    return hidden
