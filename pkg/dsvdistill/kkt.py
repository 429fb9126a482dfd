"""
Deep KKT losses.

A synthetic set carries candidate images, their labels and one Lagrange
multiplier per image. The primal loss asks the pretrained model to classify the
candidates correctly; the stationarity loss asks the multiplier-weighted sum of
per-sample parameter gradients to point along the pretrained parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from . import autodiff as ad
from .autodiff import GradientRequest
from .config import LossWeights
from .models import ModelSpec, Parameters
from .models.factory import flatten_params, forward
from .util import DsvDistillError


class KKTError(DsvDistillError):
    """Raised for invalid synthetic sets or degenerate stationarity inputs."""


@dataclass(frozen=True)
class SyntheticSet:
    images: torch.Tensor
    labels: torch.Tensor
    lambdas: torch.Tensor
    num_classes: int

    def __post_init__(self) -> None:
        n = self.images.shape[0] if self.images.dim() > 0 else 0
        if self.images.dim() != 4:
            raise KKTError(f"images must be (n, C, H, W), got {tuple(self.images.shape)}")
        if tuple(self.labels.shape) != (n,) or tuple(self.lambdas.shape) != (n,):
            raise KKTError(
                f"labels {tuple(self.labels.shape)} and lambdas {tuple(self.lambdas.shape)} must both have length {n}"
            )
        if self.num_classes < 2:
            raise KKTError(f"class count must be >= 2, got {self.num_classes}")
        if n and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes):
            raise KKTError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in torch.unique(self.labels))

    def by_class(self) -> dict[int, torch.Tensor]:
        """Images grouped per label; selection keeps the autograd history."""
        return {c: self.images[self.labels == c] for c in self.classes()}

    def with_images(self, images: torch.Tensor) -> "SyntheticSet":
        return replace(self, images=images)

    def detached(self) -> "SyntheticSet":
        return replace(
            self,
            images=self.images.detach().clone(),
            labels=self.labels.detach().clone(),
            lambdas=self.lambdas.detach().clone(),
        )


def per_sample_ce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy per row: logsumexp(logits) - logits[y]."""
    picked = logits.gather(1, labels.long().view(-1, 1)).view(-1)
    return ad.add(ad.logsumexp(logits, dim=1), -picked)


def ce_margin(logits_row: torch.Tensor, y: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (loss, margin) for one logit row, with margin = -loss."""
    if not 0 <= y < logits_row.shape[-1]:
        raise KKTError(f"label {y} outside [0, {logits_row.shape[-1]})")
    loss = per_sample_ce(logits_row.reshape(1, -1), torch.tensor([y]))[0]
    return loss, -loss


def primal_loss(spec: ModelSpec, params: Parameters, synthetic: SyntheticSet, gated: bool = False) -> torch.Tensor:
    """
    Mean cross-entropy of the candidates under the pretrained model.

    In gated mode a sample the model already classifies correctly contributes 0;
    the gate is a constant mask, gradients flow through the remaining terms.
    """
    logits = forward(spec, params, synthetic.images)
    losses = per_sample_ce(logits, synthetic.labels)
    if gated:
        wrong = (logits.detach().argmax(dim=1) != synthetic.labels).to(losses.dtype)
        losses = ad.mul(losses, wrong)
    return ad.mean(losses)


def aggregated_gradient(
    spec: ModelSpec,
    params: Parameters,
    synthetic: SyntheticSet,
    create_graph: bool = True,
) -> torch.Tensor:
    """
    Flattened ``-sum_i lambda_i * grad_theta L(x_i)``.

    With ``create_graph`` (the default) the result stays differentiable with
    respect to both the images and the multipliers; without it the result is a
    plain value for traces.
    """
    theta = params.requiring_grad()
    losses = per_sample_ce(forward(spec, theta, synthetic.images), synthetic.labels)
    weighted = ad.sum_(ad.mul(synthetic.lambdas, losses))
    grads = ad.grad(GradientRequest(weighted, list(theta.values()), create_graph=create_graph))
    flat = ad.concat(*(ad.reshape(g, (-1,)) for g in grads), dim=0)
    return -flat


def stationarity_loss(theta_flat: torch.Tensor, agg: torch.Tensor) -> torch.Tensor:
    """
    Cosine distance ``1 - cos(theta, agg)`` in [0, 2].

    A zero aggregate has no direction and scores exactly 1.

    Raises:
        KKTError: If the vectors differ in length or theta is zero
    """
    theta = theta_flat.detach()
    if theta.shape != agg.shape or theta.dim() != 1:
        raise KKTError(f"stationarity needs equal-length vectors, got {tuple(theta.shape)} and {tuple(agg.shape)}")
    theta_sq = torch.dot(theta, theta)
    if theta_sq.item() == 0.0:
        raise KKTError("stationarity is undefined for an all-zero pretrained parameter vector")
    agg_sq = torch.dot(agg, agg)
    if agg_sq.detach().item() == 0.0:
        return torch.ones((), dtype=agg.dtype) + 0.0 * agg.sum()
    cosine = torch.dot(theta, agg) / torch.sqrt(theta_sq * agg_sq)
    return 1.0 - torch.clamp(cosine, -1.0, 1.0)


@dataclass(frozen=True)
class DkktTerms:
    primal: torch.Tensor
    stationarity: torch.Tensor
    total: torch.Tensor


def dkkt_terms(
    spec: ModelSpec,
    params: Parameters,
    synthetic: SyntheticSet,
    weights: LossWeights,
    gated: bool = False,
) -> DkktTerms:
    """
    Primal and stationarity terms with their weighted sum.

    With ``alpha == 0`` the stationarity value is still measured, without a
    graph, and stays out of ``total``.
    """
    primal = primal_loss(spec, params, synthetic, gated)
    if weights.alpha == 0.0:
        agg = aggregated_gradient(spec, params, synthetic, create_graph=False)
        stationarity = stationarity_loss(flatten_params(params), agg.detach()).detach()
        return DkktTerms(primal=primal, stationarity=stationarity, total=primal)
    agg = aggregated_gradient(spec, params, synthetic)
    stationarity = stationarity_loss(flatten_params(params), agg)
    return DkktTerms(primal=primal, stationarity=stationarity, total=primal + weights.alpha * stationarity)


def dkkt_loss(
    spec: ModelSpec,
    params: Parameters,
    synthetic: SyntheticSet,
    weights: LossWeights,
    gated: bool = False,
) -> torch.Tensor:
    """``L_primal + alpha * L_stat``, differentiable in images and multipliers."""
    primal = primal_loss(spec, params, synthetic, gated)
    if weights.alpha == 0.0:
        return primal
    agg = aggregated_gradient(spec, params, synthetic)
    return primal + weights.alpha * stationarity_loss(flatten_params(params), agg)


def project_lambdas(synthetic: SyntheticSet) -> SyntheticSet:
    """Clamp every multiplier at zero (dual feasibility); nothing else changes."""
    return replace(synthetic, lambdas=ad.clamp_min(synthetic.lambdas, min=0.0))
