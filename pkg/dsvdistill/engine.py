"""Synthesis loops: DSV extraction, distribution matching and the practical joint loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, List

import torch

from .augment import AugSample, augment, sample_augmentation
from .checks import DistillError, enforce_dual_feasibility
from .config import DistillConfig, LossWeights
from .datasets import DataError, LabeledSet
from .kkt import SyntheticSet, dkkt_loss, dkkt_terms, project_lambdas
from .logging import format_terms, get_logger
from .matching import dm_loss, sample_embedding
from .models import ModelSpec, Parameters
from .models.factory import check_params
from .records import read_records, write_records
from .util import Stopwatch, derive_seed

logger = get_logger("engine")

METHODS = ("dsv", "dm", "practical")

__all__ = [
    "DistillError",
    "METHODS",
    "RunManifest",
    "StepRecord",
    "dm_distill",
    "extract_dsv",
    "init_synthetic",
    "practical_distill",
    "subsample_pipc",
]


@dataclass
class StepRecord:
    step: int
    primal: float | None
    stat: float | None
    aug: float
    dm: float
    total: float
    wall_ms: float

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "step", **asdict(self)}


@dataclass
class RunManifest:
    method: str
    config: dict[str, Any]
    weights: dict[str, float]
    steps: List[StepRecord] = field(default_factory=list)
    final: dict[str, float | None] = field(default_factory=dict)
    wall_ms: float = 0.0
    artifacts: List[str] = field(default_factory=list)

    def records(self) -> list[dict[str, Any]]:
        header = {"kind": "header", "method": self.method, "config": self.config, "weights": self.weights}
        footer = {"kind": "footer", "wall_ms": self.wall_ms, "final": self.final, "artifacts": self.artifacts}
        return [header, *(step.to_dict() for step in self.steps), footer]

    def write(self, path: Path) -> None:
        write_records(self.records(), path)

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        entries = read_records(path)
        if not entries or entries[0].get("kind") != "header" or entries[-1].get("kind") != "footer":
            raise DistillError(f"{path} is not a run manifest")
        header, footer = entries[0], entries[-1]
        steps = [StepRecord(**{k: v for k, v in e.items() if k != "kind"}) for e in entries[1:-1]]
        return cls(
            method=header["method"],
            config=header["config"],
            weights=header["weights"],
            steps=steps,
            final=footer.get("final", {}),
            wall_ms=footer["wall_ms"],
            artifacts=list(footer.get("artifacts", [])),
        )


# Data preparation ----------------------------------------------------------------


def subsample_pipc(dataset: LabeledSet, pipc: int | None, seed: int) -> LabeledSet:
    """
    Keep ``pipc`` samples per class, drawn without replacement.

    ``pipc=None`` means "all" and returns the dataset unchanged.

    Raises:
        DataError: If a class holds fewer than ``pipc`` samples
    """
    if pipc is None:
        return dataset
    chosen = []
    for label in range(dataset.num_classes):
        indices = dataset.class_indices(label)
        if indices.numel() < pipc:
            raise DataError(f"class {label} has {indices.numel()} samples, fewer than pipc={pipc}")
        generator = torch.Generator().manual_seed(derive_seed(seed, "pipc", label))
        picked = indices[torch.randperm(indices.numel(), generator=generator)[:pipc]]
        chosen.append(torch.sort(picked).values)
    subset = dataset.subset(torch.cat(chosen))
    logger.debug("Subsampled %d of %d samples (pipc=%d)", subset.n, dataset.n, pipc)
    return subset


def init_synthetic(
    mode: str,
    accessible: LabeledSet | None,
    ipc: int,
    seed: int,
    *,
    num_classes: int | None = None,
    image_shape: tuple[int, int, int] | None = None,
) -> SyntheticSet:
    """
    Build the starting synthetic set: ``ipc`` images per class with lambda = 1/n.

    ``noise`` draws standard-normal pixels; ``real`` copies ``ipc`` random samples
    per class from ``accessible``.
    """
    if accessible is not None:
        num_classes = num_classes or accessible.num_classes
        image_shape = image_shape or accessible.image_shape
    if num_classes is None or image_shape is None:
        raise DistillError("init needs either an accessible subset or a class count and image shape")
    labels = torch.arange(num_classes).repeat_interleave(ipc)
    n = labels.numel()

    if mode == "noise":
        generator = torch.Generator().manual_seed(derive_seed(seed, "init"))
        images = torch.randn((n, *image_shape), generator=generator, dtype=torch.float64)
    elif mode == "real":
        if accessible is None:
            raise DistillError("real initialisation needs accessible images")
        parts = []
        for label in range(num_classes):
            indices = accessible.class_indices(label)
            if indices.numel() < ipc:
                raise DistillError(
                    f"real initialisation needs {ipc} images of class {label}, only {indices.numel()} accessible"
                )
            generator = torch.Generator().manual_seed(derive_seed(seed, "init", label))
            picked = indices[torch.randperm(indices.numel(), generator=generator)[:ipc]]
            parts.append(accessible.images[picked].clone())
        images = torch.cat(parts)
    else:
        raise DistillError(f"unknown init mode {mode!r}")

    lambdas = torch.full((n,), 1.0 / n, dtype=torch.float64)
    return SyntheticSet(images=images, labels=labels, lambdas=lambdas, num_classes=num_classes)


# Loop ----------------------------------------------------------------------------


def _build_optimizer(config: DistillConfig, images: torch.Tensor, lambdas: torch.Tensor | None):
    groups: list[dict[str, Any]] = [{"params": [images], "lr": config.pixel_lr}]
    if lambdas is not None:
        groups.append({"params": [lambdas], "lr": config.lambda_lr})
    if config.optimizer == "adam":
        return torch.optim.Adam(groups)
    momentum = config.momentum if config.optimizer == "momentum" else 0.0
    return torch.optim.SGD(groups, lr=config.pixel_lr, momentum=momentum)


def _value(term: torch.Tensor | None) -> float | None:
    return None if term is None else term.detach().item()


@dataclass
class _Terms:
    primal: torch.Tensor | None
    stat: torch.Tensor | None
    aug: torch.Tensor
    dm: torch.Tensor
    total: torch.Tensor


class _Objective:
    """Evaluates every active term of one synthesis step."""

    def __init__(
        self,
        method: str,
        config: DistillConfig,
        weights: LossWeights,
        spec: ModelSpec | None,
        params: Parameters | None,
        accessible: LabeledSet | None,
    ) -> None:
        self.method = method
        self.config = config
        self.weights = weights
        self.spec = spec
        self.params = params
        self.real_by_class = accessible.by_class() if accessible is not None and weights.gamma > 0 else {}
        self.dkkt_weights = LossWeights(alpha=weights.alpha, beta=0.0, gamma=0.0)

    def _omega(self, step: int, synthetic: SyntheticSet) -> AugSample | None:
        if not self.config.augment or (self.weights.beta == 0.0 and self.weights.gamma == 0.0):
            return None
        generator = torch.Generator().manual_seed(derive_seed(self.config.seed, "augment", step))
        return sample_augmentation(self.config.augment, synthetic.image_shape[1:], generator)

    def __call__(self, step: int, synthetic: SyntheticSet) -> _Terms:
        zero = torch.zeros((), dtype=torch.float64)
        primal = stat = None
        aug = dm = total = zero
        if self.method != "dm":
            terms = dkkt_terms(self.spec, self.params, synthetic, self.dkkt_weights, self.config.gated)
            primal, stat, total = terms.primal, terms.stationarity, terms.total
        omega = self._omega(step, synthetic)
        if self.weights.beta > 0.0:
            images = augment(synthetic.images, omega, self.config.augment) if omega else synthetic.images
            aug = dkkt_loss(self.spec, self.params, synthetic.with_images(images), self.dkkt_weights, self.config.gated)
            total = total + self.weights.beta * aug
        if self.weights.gamma > 0.0:
            embedding = sample_embedding(
                derive_seed(self.config.seed, "embed", step),
                synthetic.image_shape,
                width=self.config.embed_width,
                depth=self.config.embed_depth,
            )
            dm = dm_loss(self.real_by_class, synthetic.by_class(), embedding, omega, self.config.augment)
            total = total + self.weights.gamma * dm
        return _Terms(primal=primal, stat=stat, aug=aug, dm=dm, total=total)


def _synthesize(
    method: str,
    config: DistillConfig,
    initial: SyntheticSet,
    *,
    weights: LossWeights,
    spec: ModelSpec | None = None,
    params: Parameters | None = None,
    accessible: LabeledSet | None = None,
) -> tuple[SyntheticSet, RunManifest]:
    objective = _Objective(method, config, weights, spec, params, accessible)
    optimise_lambdas = method != "dm"
    images = initial.images.detach().clone().requires_grad_(True)
    lambdas = initial.lambdas.detach().clone().requires_grad_(optimise_lambdas)
    optimizer = _build_optimizer(config, images, lambdas if optimise_lambdas else None)
    manifest = RunManifest(
        method=method,
        config=config.snapshot(),
        weights={"alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma},
    )
    run_clock = Stopwatch()

    def current() -> SyntheticSet:
        return SyntheticSet(images=images, labels=initial.labels, lambdas=lambdas, num_classes=initial.num_classes)

    for step in range(config.steps):
        clock = Stopwatch()
        terms = objective(step, current())
        if not torch.isfinite(terms.total):
            raise DistillError(f"non-finite {method} loss at step {step}")
        optimizer.zero_grad(set_to_none=True)
        terms.total.backward()
        optimizer.step()
        with torch.no_grad():
            projected = project_lambdas(current().detached())
            lambdas.copy_(projected.lambdas)
        enforce_dual_feasibility(projected, step)

        record = StepRecord(
            step=step,
            primal=_value(terms.primal),
            stat=_value(terms.stat),
            aug=_value(terms.aug),
            dm=_value(terms.dm),
            total=_value(terms.total),
            wall_ms=clock.elapsed_ms(),
        )
        manifest.steps.append(record)
        summary = format_terms(
            total=record.total,
            primal=record.primal,
            stat=record.stat,
            aug=record.aug if weights.beta else None,
            dm=record.dm if weights.gamma else None,
        )
        if step % config.log_every == 0 or step == config.steps - 1:
            logger.info("%s step %d/%d %s", method, step + 1, config.steps, summary)
        else:
            logger.debug("%s step %d %s", method, step + 1, summary)

    result = current().detached()
    final = objective(config.steps, result)
    manifest.final = {name: _value(getattr(final, name)) for name in ("primal", "stat", "aug", "dm", "total")}
    manifest.wall_ms = run_clock.elapsed_ms()
    return result, manifest


def _starting_set(
    config: DistillConfig,
    accessible: LabeledSet | None,
    spec: ModelSpec | None,
    synthetic: SyntheticSet | None,
) -> SyntheticSet:
    if synthetic is not None:
        return synthetic
    return init_synthetic(
        config.init,
        accessible,
        config.ipc,
        config.seed,
        num_classes=spec.num_classes if spec else None,
        image_shape=spec.input_shape if spec else None,
    )


def extract_dsv(
    spec: ModelSpec,
    params: Parameters,
    config: DistillConfig,
    accessible: LabeledSet | None = None,
    *,
    synthetic: SyntheticSet | None = None,
) -> tuple[SyntheticSet, RunManifest]:
    """
    Minimise the deep KKT loss over images and multipliers using only the model.

    ``accessible`` is consulted for real initialisation only; ``synthetic``
    overrides the initial set entirely.
    """
    check_params(spec, params)
    initial = _starting_set(config, accessible, spec, synthetic)
    weights = LossWeights(alpha=config.weights.alpha, beta=0.0, gamma=0.0)
    return _synthesize("dsv", config, initial, weights=weights, spec=spec, params=params)


def dm_distill(
    accessible: LabeledSet,
    config: DistillConfig,
    *,
    synthetic: SyntheticSet | None = None,
) -> tuple[SyntheticSet, RunManifest]:
    """Distribution matching only; multipliers are carried along untouched."""
    if not accessible.by_class():
        raise DistillError("distribution matching needs at least one accessible image")
    initial = _starting_set(config, accessible, None, synthetic)
    weights = LossWeights(alpha=0.0, beta=0.0, gamma=1.0)
    return _synthesize("dm", config, initial, weights=weights, accessible=accessible)


def practical_distill(
    spec: ModelSpec,
    params: Parameters,
    accessible: LabeledSet,
    config: DistillConfig,
    *,
    synthetic: SyntheticSet | None = None,
) -> tuple[SyntheticSet, RunManifest]:
    """
    Joint descent on ``L_DKKT + beta * L_DKKT(A(S)) + gamma * L_DM``.

    With beta = gamma = 0 the trajectory is identical to :func:`extract_dsv`.
    """
    check_params(spec, params)
    initial = _starting_set(config, accessible, spec, synthetic)
    return _synthesize(
        "practical",
        config,
        initial,
        weights=config.weights,
        spec=spec,
        params=params,
        accessible=accessible,
    )
