"""
Validation suite backed by exact SVM solutions.

Besides checking the solver on random separable problems, the suite trains a
single-layer two-class model, extracts deep support vectors from it and
compares them with the true support vectors of the same data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, List

import numpy as np
import torch

from .config import DistillConfig, LossWeights, SamConfig
from .checks import DistillError
from .datasets import LabeledSet, gen_toy
from .engine import RunManifest, extract_dsv
from .evaluation import train_model
from .kkt import SyntheticSet
from .logging import get_logger
from .models import ModelSpec, Parameters
from .models.factory import forward, zero_params
from .svm import SvmSolution, enumerate_svm, kkt_residuals, signed_labels, solve_svm
from .util import derive_seed

logger = get_logger("oracle")

MARGIN_BAND = 0.15
STATIONARITY_LIMIT = 0.05
RESIDUAL_LIMIT = 1e-6
PERTURBATION = 0.5
DSV_STARTS = ("noise", "perturbed")

LINEAR_TRAINING = SamConfig(lr=0.5, rho=0.0, epochs=500, full_batch_limit=1_000_000)
DSV_EXTRACTION = DistillConfig(
    ipc=1,
    pipc=None,
    weights=LossWeights(alpha=1.0, beta=0.0, gamma=0.0),
    steps=200,
    pixel_lr=0.01,
    lambda_lr=0.01,
    gated=True,
    augment="",
    log_every=50,
)


@dataclass
class OracleCase:
    """One check; cases with ``gating=False`` are reported but do not decide the verdict."""

    name: str
    passed: bool
    detail: dict[str, Any] = field(default_factory=dict)
    gating: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "oracle", "case": self.name, "passed": self.passed, "gating": self.gating, **self.detail}


@dataclass
class DsvRow:
    start: str
    index: int
    label: int
    nearest_sv: float
    margin: float
    training_margin: float

    @property
    def margin_gap(self) -> float:
        return abs(self.margin - self.training_margin)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "dsv", **asdict(self), "margin_gap": self.margin_gap}


@dataclass
class OracleReport:
    cases: List[OracleCase] = field(default_factory=list)
    rows: List[DsvRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(case.passed for case in self.cases if case.gating)

    def records(self) -> list[dict[str, Any]]:
        return [case.to_dict() for case in self.cases] + [row.to_dict() for row in self.rows]


def _points(data: LabeledSet) -> tuple[np.ndarray, np.ndarray]:
    return data.images.reshape(data.n, -1).numpy(), signed_labels(data.labels.numpy())


def linear_spec(dim: int) -> ModelSpec:
    """Single linear layer on ``dim`` inputs, two classes."""
    return ModelSpec(arch="mlp", input_shape=(1, 1, dim), num_classes=2, depth=1)


def logit_margin(spec: ModelSpec, params: Parameters, images: torch.Tensor) -> torch.Tensor:
    """Signed logit difference ``(W1 - W0).x + (c1 - c0)``."""
    with torch.no_grad():
        logits = forward(spec, params.detached(), images)
    return logits[:, 1] - logits[:, 0]


def train_linear(data: LabeledSet, cfg: SamConfig = LINEAR_TRAINING) -> tuple[ModelSpec, Parameters]:
    """Train the linear model from all-zero parameters with full-batch gradient descent."""
    spec = linear_spec(int(np.prod(data.image_shape)))
    return spec, train_model(spec, data, cfg, init=zero_params(spec))


def least_confident(spec: ModelSpec, params: Parameters, data: LabeledSet) -> SyntheticSet:
    """One starting candidate per class: the accessible point closest to the decision boundary."""
    margins = logit_margin(spec, params, data.images).abs()
    images, labels = [], []
    for label in range(data.num_classes):
        indices = data.class_indices(label)
        pick = indices[torch.argmin(margins[indices])]
        images.append(data.images[pick].clone())
        labels.append(label)
    n = len(labels)
    return SyntheticSet(
        images=torch.stack(images),
        labels=torch.tensor(labels),
        lambdas=torch.full((n,), 1.0 / n, dtype=torch.float64),
        num_classes=data.num_classes,
    )


def perturbed_start(
    spec: ModelSpec, params: Parameters, data: LabeledSet, seed: int, scale: float = PERTURBATION
) -> SyntheticSet:
    """Least-confident points moved by seeded Gaussian noise of std ``scale``."""
    start = least_confident(spec, params, data)
    generator = torch.Generator().manual_seed(derive_seed(seed, "perturb"))
    noise = torch.randn(start.images.shape, generator=generator, dtype=torch.float64)
    return start.with_images(start.images + scale * noise)


def dsv_vs_sv_distance(
    dsvs: SyntheticSet,
    solution: SvmSolution,
    data: LabeledSet,
    spec: ModelSpec,
    params: Parameters,
    start: str = "given",
) -> list[DsvRow]:
    """
    Compare each extracted candidate with the true support vectors.

    Rows carry the Euclidean distance to the nearest support vector, the
    candidate's functional margin under the trained model and the smallest
    functional margin over the training points.
    """
    points, _ = _points(data)
    support = points[solution.support_indices()]
    candidates = dsvs.images.detach().reshape(dsvs.n, -1).numpy()
    margins = logit_margin(spec, params, dsvs.images.detach()).abs().numpy()
    training_margin = float(logit_margin(spec, params, data.images).abs().min())
    rows = []
    for index, (point, label) in enumerate(zip(candidates, dsvs.labels.tolist())):
        distance = float(np.min(np.linalg.norm(support - point, axis=1)))
        rows.append(
            DsvRow(
                start=start,
                index=index,
                label=int(label),
                nearest_sv=distance,
                margin=float(margins[index]),
                training_margin=training_margin,
            )
        )
    return rows


def check_random_instances(count: int = 20, seed: int = 0, n_per_class: int = 10) -> OracleCase:
    """Solve ``count`` random separable problems; every KKT residual must stay tiny."""
    worst = 0.0
    objective_gap = 0.0
    for instance in range(count):
        data = gen_toy("separable2d", n_per_class, derive_seed(seed, "oracle", instance))
        points, labels = _points(data)
        solution = solve_svm(points, labels)
        worst = max(worst, kkt_residuals(solution, points, labels).worst())
        reference = enumerate_svm(points, labels)
        objective_gap = max(objective_gap, abs(solution.objective - reference.objective))
    return OracleCase(
        name="random-instances",
        passed=worst <= RESIDUAL_LIMIT and objective_gap <= 1e-4,
        detail={"instances": count, "worst_residual": worst, "objective_gap": objective_gap},
    )


def check_symmetric_fixture() -> OracleCase:
    data = gen_toy("separable2d", 2, 0, symmetric=True)
    points, labels = _points(data)
    solution = solve_svm(points, labels)
    expected_alpha = np.array([0.0, 0.5, 0.5, 0.0])
    error = max(
        float(np.max(np.abs(solution.w - np.array([1.0, 0.0])))),
        abs(solution.b),
        float(np.max(np.abs(solution.alpha - expected_alpha))),
    )
    return OracleCase(
        name="symmetric-fixture",
        passed=error <= RESIDUAL_LIMIT,
        detail={"w": solution.w.tolist(), "b": solution.b, "alpha": solution.alpha.tolist(), "error": error},
    )


def dsv_pipeline(
    data: LabeledSet,
    config: DistillConfig = DSV_EXTRACTION,
    band: float = MARGIN_BAND,
    start: str = "noise",
) -> tuple[OracleCase, list[DsvRow], RunManifest]:
    """
    Train the linear model, extract candidates from it and compare them with the SVM.

    ``start`` is ``noise`` (standard-normal candidates) or ``perturbed`` (the
    least-confident training points plus seeded noise). The case is a
    measurement: with a cosine stationarity term every correctly ordered pair
    whose difference is aligned with the separator is stationary, whatever its
    margin, so the margin band is reported rather than enforced.
    """
    if start not in DSV_STARTS:
        raise DistillError(f"unknown DSV start {start!r}, expected one of {DSV_STARTS}")
    spec, params = train_linear(data)
    points, labels = _points(data)
    solution = solve_svm(points, labels)
    if start == "noise":
        dsvs, manifest = extract_dsv(spec, params, replace(config, init="noise"))
    else:
        initial = perturbed_start(spec, params, data, config.seed)
        dsvs, manifest = extract_dsv(spec, params, config, synthetic=initial)
    rows = dsv_vs_sv_distance(dsvs, solution, data, spec, params, start=start)
    initial_stat = manifest.steps[0].stat if manifest.steps else manifest.final["stat"]
    stationarity = manifest.final["stat"]
    max_gap = max(row.margin_gap for row in rows)
    case = OracleCase(
        name=f"dsv-vs-sv[{start}]",
        passed=stationarity < STATIONARITY_LIMIT and max_gap <= band,
        detail={
            "initial_stationarity": initial_stat,
            "stationarity": stationarity,
            "band": band,
            "max_margin_gap": max_gap,
        },
        gating=False,
    )
    return case, rows, manifest


def run_oracle_suite(
    seed: int = 0,
    instances: int = 20,
    band: float = MARGIN_BAND,
    steps: int | None = None,
) -> OracleReport:
    """
    Run every oracle check.

    The solver checks decide the verdict. The DSV comparison on the symmetric
    fixture runs once per start in :data:`DSV_STARTS` and is recorded as a
    measurement.
    """
    report = OracleReport()
    report.cases.append(check_random_instances(instances, seed))
    report.cases.append(check_symmetric_fixture())
    config = DSV_EXTRACTION if steps is None else replace(DSV_EXTRACTION, steps=steps)
    data = gen_toy("separable2d", 2, seed, symmetric=True)
    for start in DSV_STARTS:
        case, rows, _ = dsv_pipeline(data, replace(config, seed=seed), band, start=start)
        report.cases.append(case)
        report.rows.extend(rows)
    for item in report.cases:
        verdict = "ok" if item.passed else "FAILED"
        if item.gating:
            logger.info("oracle %s: %s", item.name, verdict)
        else:
            logger.info("oracle %s (measurement): %s %s", item.name, verdict, item.detail)
    return report
