"""
Grid sweeps over images per class, accessible images per class and method.

Every cell synthesises a set with the standard schedule for its (ipc, pipc)
pair, writes it next to its manifest and appends one metrics record per
evaluation seed, so ``dsvdistill report`` renders the whole grid as a table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, List

from .artifacts import save_synthetic
from .checks import DistillError, run_checks
from .config import DistillConfig, EvalConfig, standard_schedule
from .datasets import LabeledSet
from .engine import RunManifest, dm_distill, extract_dsv, practical_distill, subsample_pipc
from .evaluation import SeedSweep, evaluate_seeds
from .kkt import SyntheticSet
from .logging import get_logger
from .models import ModelSpec, Parameters
from .util import deep_merge

logger = get_logger("sweep")

SWEEP_METHODS = ("dm", "dsv-noise", "dsv-real", "practical")
DEFAULT_IPCS = (1, 3, 10, 50)
DEFAULT_PIPCS: tuple[int | None, ...] = (10, 50, None)


@dataclass(frozen=True)
class SweepCell:
    ipc: int
    pipc: int | None
    method: str

    @property
    def pipc_label(self) -> str:
        return "all" if self.pipc is None else str(self.pipc)

    @property
    def stem(self) -> str:
        return f"{self.method}-ipc{self.ipc}-pipc{self.pipc_label}"


@dataclass
class SweepResult:
    cells: List[SweepCell] = field(default_factory=list)
    sweeps: List[SeedSweep] = field(default_factory=list)
    skipped: List[SweepCell] = field(default_factory=list)


def sweep_cells(
    ipcs: Iterable[int] = DEFAULT_IPCS,
    pipcs: Iterable[int | None] = DEFAULT_PIPCS,
    methods: Iterable[str] = SWEEP_METHODS,
) -> list[SweepCell]:
    """Expand the grid in ipc, pipc, method order."""
    methods = tuple(methods)
    unknown = [m for m in methods if m not in SWEEP_METHODS]
    if unknown:
        raise DistillError(f"unknown sweep method(s) {', '.join(unknown)}, expected {SWEEP_METHODS}")
    return [SweepCell(ipc, pipc, method) for ipc in ipcs for pipc in pipcs for method in methods]


def cell_config(base: dict[str, Any], cell: SweepCell) -> DistillConfig:
    """
    Distill settings for one cell: ``base`` overlaid with the standard schedule.

    The DSV rows fix their own initialisation; every other method keeps the
    schedule's choice.
    """
    section = deep_merge(base, standard_schedule(cell.ipc, cell.pipc))
    section = deep_merge(section, {"ipc": cell.ipc, "pipc": cell.pipc_label})
    if cell.method == "dsv-noise":
        section["init"] = "noise"
    elif cell.method == "dsv-real":
        section["init"] = "real"
    return DistillConfig.from_dict(section)


def synthesize_cell(
    cell: SweepCell,
    config: DistillConfig,
    spec: ModelSpec,
    params: Parameters,
    pool: LabeledSet,
) -> tuple[SyntheticSet, RunManifest]:
    accessible = subsample_pipc(pool, config.pipc, config.seed)
    if cell.method == "dm":
        return dm_distill(accessible, config)
    if cell.method == "practical":
        return practical_distill(spec, params, accessible, config)
    return extract_dsv(spec, params, config, accessible)


def run_sweep(
    spec: ModelSpec,
    params: Parameters,
    pool: LabeledSet,
    test: LabeledSet,
    cells: Iterable[SweepCell],
    base: dict[str, Any],
    eval_config: EvalConfig,
    out_dir: Path,
    metrics_path: Path,
) -> SweepResult:
    """
    Synthesise, store and evaluate every cell.

    Cells asking for more synthetic than accessible images per class are
    skipped with a warning.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    result = SweepResult()
    for cell in cells:
        if cell.pipc is not None and cell.ipc > cell.pipc:
            logger.warning("Skipping %s: ipc %d exceeds pipc %d", cell.stem, cell.ipc, cell.pipc)
            result.skipped.append(cell)
            continue
        config = cell_config(base, cell)
        logger.info(
            "Sweep cell %s (alpha=%g gamma=%g init=%s)", cell.stem, config.weights.alpha, config.weights.gamma, config.init
        )
        synthetic, manifest = synthesize_cell(cell, config, spec, params, pool)
        checked = run_checks(synthetic, ipc=cell.ipc)
        if not checked.passed:
            raise DistillError(f"{cell.stem} failed checks: " + "; ".join(checked.errors()))
        target = out_dir / f"{cell.stem}.dfss"
        save_synthetic(synthetic, target)
        manifest.artifacts.append(str(target))
        manifest.write(out_dir / f"{cell.stem}.manifest.jsonl")
        seeds = evaluate_seeds(
            spec,
            synthetic,
            test,
            eval_config,
            method=cell.method,
            ipc=cell.ipc,
            pipc=cell.pipc,
            metrics_path=metrics_path,
        )
        result.cells.append(cell)
        result.sweeps.append(seeds)
    return result
