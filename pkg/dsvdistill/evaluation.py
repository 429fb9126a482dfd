"""
Evaluation harness.

Fresh models are trained on a (synthetic) training set with sharpness-aware
minimisation and scored on a held-out test set by argmax accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Protocol

import numpy as np
import torch

from . import autodiff as ad
from .autodiff import GradientRequest
from .config import EvalConfig, SamConfig
from .kkt import per_sample_ce
from .logging import format_terms, get_logger
from .models import ModelSpec, Parameters
from .models.factory import forward, init_params
from .records import append_record, metrics_entry
from .util import DsvDistillError, Stopwatch, derive_seed

logger = get_logger("evaluation")

GradFn = Callable[[Parameters], Parameters]


class EvaluationError(DsvDistillError):
    """Raised when training diverges or the inputs cannot be evaluated."""


class Labeled(Protocol):
    images: torch.Tensor
    labels: torch.Tensor


def _global_norm(grads: Parameters) -> torch.Tensor:
    return torch.sqrt(sum(torch.sum(g * g) for g in grads.values()))


def descent_step(params: Parameters, grads: Parameters, lr: float) -> Parameters:
    return params.zip_map(grads, lambda t, g: t - lr * g)


def sam_step(params: Parameters, grad_fn: GradFn, cfg: SamConfig) -> Parameters:
    """
    One sharpness-aware update.

    The gradient is re-evaluated at ``theta + rho * g / ||g||`` and that gradient
    drives a plain descent step from ``theta``. With ``rho = 0`` or a zero gradient
    the perturbation vanishes and the step is ordinary gradient descent.
    """
    grads = grad_fn(params)
    norm = _global_norm(grads)
    if not torch.isfinite(norm):
        raise EvaluationError("non-finite gradient in SAM step")
    if cfg.rho == 0.0 or norm.item() == 0.0:
        return descent_step(params, grads, cfg.lr)
    scale = cfg.rho / norm
    perturbed = params.zip_map(grads, lambda t, g: t + scale * g)
    sharp = grad_fn(perturbed)
    if not torch.isfinite(_global_norm(sharp)):
        raise EvaluationError("non-finite gradient at the perturbed point of a SAM step")
    return descent_step(params, sharp, cfg.lr)


class CrossEntropyGrad:
    """Gradient of the mean cross-entropy on one batch; remembers the loss of the first call."""

    def __init__(self, spec: ModelSpec, images: torch.Tensor, labels: torch.Tensor) -> None:
        self.spec = spec
        self.images = images
        self.labels = labels
        self.loss: float | None = None

    def __call__(self, params: Parameters) -> Parameters:
        theta = params.requiring_grad()
        loss = ad.mean(per_sample_ce(forward(self.spec, theta, self.images), self.labels))
        if self.loss is None:
            self.loss = loss.detach().item()
        grads = ad.grad(GradientRequest(loss, list(theta.values())))
        return Parameters(dict(zip(theta.keys(), grads)))


def train_model(
    spec: ModelSpec,
    data: Labeled,
    cfg: SamConfig,
    init: Parameters | None = None,
) -> Parameters:
    """
    Minimise cross-entropy on ``data`` with :func:`sam_step` for ``cfg.epochs``.

    Sets up to ``cfg.full_batch_limit`` samples train full-batch; larger sets are
    shuffled each epoch into mini-batches of ``cfg.batch_size``.
    """
    images = data.images.detach()
    labels = data.labels.detach().long()
    n = images.shape[0]
    if n == 0:
        raise EvaluationError("cannot train on an empty set")
    params = init if init is not None else init_params(spec, derive_seed(cfg.seed, "eval-init"))
    generator = torch.Generator().manual_seed(derive_seed(cfg.seed, "eval-shuffle"))

    for epoch in range(cfg.epochs):
        if n <= cfg.full_batch_limit:
            batches = [torch.arange(n)]
        else:
            order = torch.randperm(n, generator=generator)
            batches = list(torch.split(order, cfg.batch_size))
        epoch_loss = 0.0
        for indices in batches:
            objective = CrossEntropyGrad(spec, images[indices], labels[indices])
            params = sam_step(params, objective, cfg)
            epoch_loss += (objective.loss or 0.0) * indices.numel()
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise EvaluationError(f"non-finite training loss at epoch {epoch}")
        logger.debug("epoch %d/%d %s", epoch + 1, cfg.epochs, format_terms(loss=epoch_loss))
    return params


def train_on_synthetic(spec: ModelSpec, synthetic: Labeled, cfg: SamConfig) -> Parameters:
    """Train a freshly initialised model (seeded by ``cfg.seed``) on ``synthetic``."""
    return train_model(spec, synthetic, cfg)


def predict(spec: ModelSpec, params: Parameters, images: torch.Tensor, batch_size: int = 1024) -> torch.Tensor:
    """Predicted labels; ties resolve to the lowest class index."""
    outputs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            logits = forward(spec, params.detached(), images[start : start + batch_size])
            outputs.append(torch.argmax(logits, dim=1))
    return torch.cat(outputs) if outputs else torch.zeros(0, dtype=torch.long)


def test_accuracy(spec: ModelSpec, params: Parameters, test: Labeled) -> float:
    """Percentage of argmax-correct predictions."""
    if test.labels.numel() == 0:
        raise EvaluationError("test set is empty")
    correct = predict(spec, params, test.images) == test.labels.long()
    return 100.0 * float(correct.sum()) / correct.numel()


test_accuracy.__test__ = False  # not a pytest test


@dataclass
class SeedSweep:
    method: str
    accuracies: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def summary(self) -> str:
        return f"{self.method}: {self.mean:.2f} ± {self.std:.2f} over {len(self.seeds)} seed(s)"


def evaluate_seeds(
    spec: ModelSpec,
    synthetic: Labeled,
    test: Labeled,
    config: EvalConfig,
    *,
    method: str,
    ipc: int,
    pipc: int | None,
    metrics_path: Path | None = None,
) -> SeedSweep:
    """Train one model per evaluation seed and collect test accuracies."""
    sweep = SeedSweep(method=method)
    for seed in config.seeds:
        cfg = config.for_seed(seed)
        clock = Stopwatch()
        params = train_on_synthetic(spec, synthetic, cfg)
        accuracy = test_accuracy(spec, params, test)
        wall_ms = clock.elapsed_ms()
        sweep.accuracies.append(accuracy)
        sweep.seeds.append(seed)
        logger.info("%s seed %d: accuracy %.2f%% (%d epochs)", method, seed, accuracy, cfg.epochs)
        if metrics_path is not None:
            append_record(
                metrics_entry(
                    ipc=ipc,
                    pipc=pipc,
                    method=method,
                    seed=seed,
                    accuracy=accuracy,
                    epochs=cfg.epochs,
                    wall_ms=wall_ms,
                ),
                metrics_path,
            )
    logger.info(sweep.summary())
    return sweep
