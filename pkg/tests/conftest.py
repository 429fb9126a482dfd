"""Shared fixtures for the dsvdistill test suite."""

from __future__ import annotations

import pytest
import torch

from dsvdistill.config import DistillConfig, LossWeights
from dsvdistill.datasets import LabeledSet
from dsvdistill.kkt import SyntheticSet
from dsvdistill.models import ModelSpec
from dsvdistill.models.factory import init_params


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def mlp_spec() -> ModelSpec:
    """Two-layer MLP on 4x4 single-channel inputs."""
    return ModelSpec(arch="mlp", input_shape=(1, 4, 4), num_classes=3, width=6, depth=2)


@pytest.fixture
def conv_spec() -> ModelSpec:
    return ModelSpec(arch="convnet", input_shape=(3, 8, 8), num_classes=4, width=4, depth=2)


@pytest.fixture
def mlp_params(mlp_spec):
    return init_params(mlp_spec, seed=7)


@pytest.fixture
def synthetic(mlp_spec, generator) -> SyntheticSet:
    images = torch.randn((6, *mlp_spec.input_shape), generator=generator, dtype=torch.float64)
    return SyntheticSet(
        images=images,
        labels=torch.tensor([0, 0, 1, 1, 2, 2]),
        lambdas=torch.rand(6, generator=generator, dtype=torch.float64) + 0.1,
        num_classes=3,
    )


@pytest.fixture
def accessible(mlp_spec, generator) -> LabeledSet:
    """Ten real-looking images per class, class-dependent means."""
    labels = torch.arange(3).repeat_interleave(10)
    noise = torch.randn((30, *mlp_spec.input_shape), generator=generator, dtype=torch.float64)
    images = noise * 0.3 + labels.view(-1, 1, 1, 1).to(torch.float64)
    return LabeledSet(images=images, labels=labels, num_classes=3)


@pytest.fixture
def quick_config() -> DistillConfig:
    return DistillConfig(
        ipc=1,
        pipc=5,
        weights=LossWeights(alpha=0.1, beta=0.0, gamma=0.01),
        steps=4,
        pixel_lr=0.05,
        lambda_lr=0.005,
        augment="color,translate,flip",
        embed_width=4,
        embed_depth=1,
        log_every=2,
    )
