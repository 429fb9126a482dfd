"""Classwise distribution matching in the feature space of random ConvNets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

import torch

from . import autodiff as ad
from .augment import AugSample, augment
from .models import ModelSpec, Parameters
from .models.factory import features, init_params
from .util import DsvDistillError


class MatchingError(DsvDistillError):
    """Raised when a synthetic class has nothing to be matched against."""


class Embedding(Protocol):
    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        ...


@dataclass(frozen=True)
class EmbeddingNet:
    """ConvNet trunk with random, frozen parameters and no classifier head."""

    spec: ModelSpec
    params: Parameters

    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        return features(self.spec, self.params, batch)


class IdentityEmbedding:
    """Flattened pixels; used where the embedding must not hide anything."""

    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        return ad.reshape(batch, (batch.shape[0], -1))


def sample_embedding(
    seed: int,
    input_shape: tuple[int, int, int],
    width: int = 128,
    depth: int = 3,
) -> EmbeddingNet:
    """Draw a fresh random embedding network; deterministic per seed."""
    spec = ModelSpec(arch="convnet", input_shape=input_shape, num_classes=2, width=width, depth=depth)
    params = init_params(spec, seed)
    trunk = Parameters({name: t for name, t in params.items() if not name.startswith("head.")})
    return EmbeddingNet(spec=spec, params=trunk)


def dm_loss(
    real_by_class: Mapping[int, torch.Tensor],
    synth_by_class: Mapping[int, torch.Tensor],
    embedding: Embedding,
    omega: AugSample | None = None,
    policy: str = "",
) -> torch.Tensor:
    """
    Mean over synthetic classes of the squared distance between embedded means.

    Real images are constants; only the synthetic side carries gradients. With
    ``omega`` the same augmentation draw is applied to both sides.

    Raises:
        MatchingError: If a synthetic class has no real samples
    """
    if not synth_by_class:
        raise MatchingError("no synthetic classes to match")
    terms = []
    for label in sorted(synth_by_class):
        real = real_by_class.get(label)
        if real is None or real.shape[0] == 0:
            raise MatchingError(f"class {label} has no real samples to match against")
        synth = synth_by_class[label]
        if omega is not None and policy:
            real = augment(real.detach(), omega, policy)
            synth = augment(synth, omega, policy)
        with torch.no_grad():
            real_mean = ad.mean(embedding(real.detach()), dim=0)
        synth_mean = ad.mean(embedding(synth), dim=0)
        diff = synth_mean - real_mean
        terms.append(ad.sum_(ad.mul(diff, diff)))
    return ad.mean(torch.stack(terms))
