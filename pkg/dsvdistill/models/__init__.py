"""Model specifications and parameter containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Protocol

import torch

from ..util import DsvDistillError

ARCHITECTURES = ("mlp", "convnet")


class ModelError(DsvDistillError):
    """Raised for invalid model specifications or mismatched parameters."""


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple[int, int, int]
    num_classes: int
    width: int = 128
    depth: int = 3

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ModelError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if len(self.input_shape) != 3 or any(int(s) < 1 for s in self.input_shape):
            raise ModelError(f"input shape must be (channels, height, width), got {self.input_shape}")
        if self.num_classes < 2:
            raise ModelError(f"class count must be >= 2, got {self.num_classes}")
        if self.width < 1:
            raise ModelError(f"width must be >= 1, got {self.width}")
        if self.depth < 1:
            raise ModelError(f"depth must be >= 1, got {self.depth}")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))


class Parameters(Mapping[str, torch.Tensor]):
    """
    Ordered, read-only collection of named parameter tensors.

    Updates never happen in place: optimisers build a new instance with
    :meth:`map` or :meth:`zip_map`.
    """

    def __init__(self, tensors: Mapping[str, torch.Tensor]) -> None:
        self._tensors: dict[str, torch.Tensor] = dict(tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"Parameters({', '.join(f'{k}{tuple(v.shape)}' for k, v in self._tensors.items())})"

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(t.shape)) for name, t in self._tensors.items()]

    def num_elements(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "Parameters":
        return Parameters({name: fn(t) for name, t in self._tensors.items()})

    def zip_map(
        self, other: Mapping[str, torch.Tensor], fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    ) -> "Parameters":
        return Parameters({name: fn(t, other[name]) for name, t in self._tensors.items()})

    def detached(self) -> "Parameters":
        return self.map(lambda t: t.detach())

    def requiring_grad(self) -> "Parameters":
        """Return fresh leaf copies that record gradients."""
        return self.map(lambda t: t.detach().clone().requires_grad_(True))

    def bit_equal(self, other: "Parameters") -> bool:
        return self.shapes == other.shapes and all(
            torch.equal(t, other[name]) for name, t in self._tensors.items()
        )


class Architecture(Protocol):
    """Common protocol implemented by the mlp and convnet modules."""

    def param_shapes(self, spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
        ...

    def feature_size(self, spec: ModelSpec) -> int:
        ...

    def features(self, spec: ModelSpec, params: Parameters, batch: torch.Tensor) -> torch.Tensor:
        ...
