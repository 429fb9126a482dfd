"""Factory helpers tying model specs to their architecture modules."""

from __future__ import annotations

import math

import torch

from .. import autodiff as ad
from . import Architecture, ModelError, ModelSpec, Parameters
from . import convnet, mlp

_ARCHITECTURES: dict[str, Architecture] = {
    "mlp": mlp,
    "convnet": convnet,
}


def get_architecture(spec: ModelSpec) -> Architecture:
    """Return the module implementing ``spec.arch``."""
    try:
        return _ARCHITECTURES[spec.arch]
    except KeyError as exc:  # pragma: no cover - ModelSpec validates arch
        raise ModelError(f"Unsupported architecture: {spec.arch}") from exc


def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every parameter, trunk first, classifier head last."""
    arch = get_architecture(spec)
    head_in = arch.feature_size(spec)
    return [
        *arch.param_shapes(spec),
        ("head.weight", (spec.num_classes, head_in)),
        ("head.bias", (spec.num_classes,)),
    ]


def param_count(spec: ModelSpec) -> int:
    return sum(math.prod(shape) for _, shape in param_shapes(spec))


def init_params(spec: ModelSpec, seed: int) -> Parameters:
    """
    Fan-in scaled uniform initialisation, deterministic per seed.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero
    and instance-norm scales at one.
    """
    generator = torch.Generator().manual_seed(int(seed))
    tensors: dict[str, torch.Tensor] = {}
    for name, shape in param_shapes(spec):
        if name.endswith(".bias"):
            tensors[name] = torch.zeros(shape, dtype=ad.DTYPE)
        elif ".norm." in name:
            tensors[name] = torch.ones(shape, dtype=ad.DTYPE)
        else:
            bound = 1.0 / math.sqrt(math.prod(shape[1:]))
            draw = torch.rand(shape, generator=generator, dtype=ad.DTYPE)
            tensors[name] = (draw * 2.0 - 1.0) * bound
    return Parameters(tensors)


def zero_params(spec: ModelSpec) -> Parameters:
    return Parameters({name: torch.zeros(shape, dtype=ad.DTYPE) for name, shape in param_shapes(spec)})


def check_params(spec: ModelSpec, params: Parameters) -> None:
    """Raise if ``params`` does not have exactly the names and shapes ``spec`` implies."""
    expected = param_shapes(spec)
    actual = params.shapes
    if actual == expected:
        return
    expected_map = dict(expected)
    actual_map = dict(actual)
    for name, shape in expected:
        if name not in actual_map:
            raise ModelError(f"parameter structure mismatch: missing {name!r}")
        if actual_map[name] != shape:
            raise ModelError(f"parameter structure mismatch: {name!r} has shape {actual_map[name]}, expected {shape}")
    extra = [name for name in actual_map if name not in expected_map]
    if extra:
        raise ModelError(f"parameter structure mismatch: unexpected {extra[0]!r}")
    raise ModelError("parameter structure mismatch: entries are out of order")


def _check_batch(spec: ModelSpec, batch: torch.Tensor) -> None:
    if batch.dim() != 4 or tuple(batch.shape[1:]) != spec.input_shape:
        raise ModelError(
            f"batch shape {tuple(batch.shape)} does not match model input (N, {', '.join(map(str, spec.input_shape))})"
        )


def features(spec: ModelSpec, params: Parameters, batch: torch.Tensor) -> torch.Tensor:
    """Trunk output (the input to the classifier head) for each sample."""
    _check_batch(spec, batch)
    return get_architecture(spec).features(spec, params, batch)


def forward(spec: ModelSpec, params: Parameters, batch: torch.Tensor) -> torch.Tensor:
    """Logits of shape (n, num_classes)."""
    return ad.linear(features(spec, params, batch), params["head.weight"], params["head.bias"])


def flatten_params(params: Parameters) -> torch.Tensor:
    return ad.concat(*(ad.reshape(t, (-1,)) for t in params.values()), dim=0)


def unflatten_params(spec: ModelSpec, vector: torch.Tensor) -> Parameters:
    total = param_count(spec)
    if vector.dim() != 1 or vector.numel() != total:
        raise ModelError(f"flat parameter vector has shape {tuple(vector.shape)}, expected ({total},)")
    tensors: dict[str, torch.Tensor] = {}
    offset = 0
    for name, shape in param_shapes(spec):
        size = math.prod(shape)
        tensors[name] = vector[offset : offset + size].reshape(shape)
        offset += size
    return Parameters(tensors)
