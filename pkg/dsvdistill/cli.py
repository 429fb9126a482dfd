"""Command-line interface for dsvdistill."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

import click

from .analysis import DEFAULT_RADIUS, average_sets, export_images, frequency_report
from .artifacts import ArtifactError, load_synthetic, read_checkpoint, save_checkpoint, save_synthetic
from .checks import DistillError, run_checks
from .config import (
    AppConfig,
    DistillConfig,
    INIT_MODES,
    LONG_EPOCHS,
    OPTIMIZERS,
    EvalConfig,
    load_config,
    standard_schedule,
)
from .datasets import LabeledSet, load_dataset
from .engine import METHODS, dm_distill, extract_dsv, practical_distill, subsample_pipc
from .evaluation import evaluate_seeds, test_accuracy, train_model
from .logging import get_logger, setup_logging
from .models import ModelSpec, Parameters
from .models.factory import check_params
from .oracle import run_oracle_suite
from .records import DEFAULT_METRICS_FILE, read_records, summarize_metrics, write_records
from .sweep import DEFAULT_IPCS, SWEEP_METHODS, run_sweep, sweep_cells
from .util import DsvDistillError, deep_merge

logger = get_logger("cli")

DATASETS = ("mnist", "cifar10", "toy")


class DistillGroup(click.Group):
    """Click group that reports package errors as ordinary CLI failures."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except DsvDistillError as exc:
            raise click.ClickException(str(exc)) from exc


def _config(ctx: click.Context) -> AppConfig:
    return ctx.obj["config"]


def _load_data(kind: str, location: Path, split: str, normalization=None) -> LabeledSet:
    data = load_dataset(kind, location, split, normalization)
    logger.info("Loaded %d %s samples (%s split)", data.n, kind, split)
    return data


def _load_model(path: Path) -> tuple[ModelSpec, Parameters, Any]:
    checkpoint = read_checkpoint(path)
    spec = checkpoint.spec
    if spec is None:
        raise ArtifactError(f"{path} carries no model spec (meta.spec)")
    check_params(spec, checkpoint.params)
    return spec, checkpoint.params, checkpoint.normalization


def _distill_config(app: AppConfig, overrides: dict[str, Any], use_standard_schedule: bool) -> DistillConfig:
    section = deep_merge(app.raw.get("distill", {}), {k: v for k, v in overrides.items() if v is not None})
    if use_standard_schedule:
        pipc = section.get("pipc")
        schedule = standard_schedule(int(section["ipc"]), None if pipc in (None, "all") else int(pipc))
        explicit = {k: v for k, v in overrides.items() if v is not None}
        section = deep_merge(deep_merge(section, schedule), explicit)
    return DistillConfig.from_dict(section)


def _eval_config(app: AppConfig, seeds: str | None, epochs: int | None, long_protocol: bool) -> EvalConfig:
    overrides: dict[str, Any] = {}
    if seeds:
        overrides["seeds"] = [int(s) for s in seeds.split(",") if s.strip()]
    if epochs is not None:
        overrides["epochs"] = epochs
    if long_protocol:
        overrides["long_protocol"] = True
    return EvalConfig.from_dict(deep_merge(app.raw.get("eval", {}), overrides))


def _write_outputs(synthetic, manifest, out: Path, manifest_path: Path | None, montage: Path | None) -> None:
    result = run_checks(synthetic)
    for item in result.messages:
        logger.warning("[%s] %s", item.severity, item.message)
    if not result.passed:
        raise DistillError("synthetic set failed checks: " + "; ".join(result.errors()))
    save_synthetic(synthetic, out)
    manifest.artifacts.append(str(out))
    if montage is not None:
        export_images(synthetic, montage)
        manifest.artifacts.append(str(montage))
    target = manifest_path or out.with_suffix(".manifest.jsonl")
    manifest.write(target)
    click.echo(f"Wrote {synthetic.n} synthetic image(s) to {out} (manifest {target})")


def _parse_pipc(value: str | None) -> int | str | None:
    if value is None or value == "all":
        return value
    try:
        return int(value)
    except ValueError as exc:
        raise click.BadParameter(f"expected an integer or 'all', got {value!r}") from exc


def _parse_list(value: str, parse) -> list[Any]:
    try:
        return [parse(item.strip()) for item in value.split(",") if item.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"could not parse {value!r}") from exc


@click.group(cls=DistillGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="Increase verbosity (-v for INFO, -vv for DEBUG)")
@click.option("-q", "--quiet", is_flag=True, help="Suppress all output except errors")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="YAML configuration file.")
@click.pass_context
def cli(ctx: click.Context, verbose: int, quiet: bool, config_path: Path | None) -> None:
    """Dataset distillation with deep support vectors and distribution matching."""
    ctx.ensure_object(dict)
    config = load_config(config_path)
    ctx.obj["config"] = config
    setup_logging(level=config.log_level, verbose=verbose, quiet=quiet)


def dataset_options(fn):
    fn = click.option("--data", "data_path", type=click.Path(path_type=Path), help="Dataset directory or toy file.")(fn)
    fn = click.option("--dataset", type=click.Choice(DATASETS), default="mnist", show_default=True)(fn)
    return fn


@cli.command()
@dataset_options
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Checkpoint to write.")
@click.option("--arch", type=click.Choice(["mlp", "convnet"]), default=None)
@click.option("--width", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def pretrain(
    ctx: click.Context,
    dataset: str,
    data_path: Path | None,
    out: Path,
    arch: str | None,
    width: int | None,
    depth: int | None,
    epochs: int | None,
    seed: int,
) -> None:
    """Train the pretrained model on the full training split."""
    app = _config(ctx)
    if data_path is None:
        raise click.UsageError("--data is required")
    data = _load_data(dataset, data_path, "train")
    spec = ModelSpec(
        arch=arch or app.model.arch,
        input_shape=data.image_shape,
        num_classes=data.num_classes,
        width=width or app.model.width,
        depth=depth or app.model.depth,
    )
    cfg = app.eval.for_seed(seed)
    if epochs is not None:
        cfg = EvalConfig.from_dict({**app.raw.get("eval", {}), "epochs": epochs}).for_seed(seed)
    params = train_model(spec, data, cfg)
    extras = {}
    if data.mean is not None and data.std is not None:
        extras = {"mean": data.mean, "std": data.std}
    save_checkpoint(params, out, spec=spec, extras=extras)
    accuracy = test_accuracy(spec, params, data)
    click.echo(f"Wrote checkpoint to {out} (train accuracy {accuracy:.2f}%)")


def distill_options(fn):
    options = [
        click.option("--ipc", type=int, default=None, help="Synthetic images per class."),
        click.option("--alpha", type=float, default=None, help="Stationarity weight."),
        click.option("--steps", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--init", type=click.Choice(INIT_MODES), default=None),
        click.option("--gated/--no-gated", default=None, help="Skip correctly classified candidates in the primal loss."),
        click.option("--optimizer", type=click.Choice(OPTIMIZERS), default=None),
        click.option("--pixel-lr", type=float, default=None),
        click.option("--out", type=click.Path(path_type=Path), required=True, help="Synthetic set to write."),
        click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), default=None),
        click.option("--montage", type=click.Path(path_type=Path), default=None, help="Also write a PPM montage."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@cli.command("extract-dsv")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", type=click.Choice(DATASETS), default=None, help="Accessible data for real init.")
@click.option("--data", "data_path", type=click.Path(path_type=Path), default=None)
@click.option("--pipc", default=None)
@distill_options
@click.pass_context
def extract_dsv_command(ctx: click.Context, checkpoint: Path, dataset, data_path, pipc, **flags: Any) -> None:
    """Extract deep support vectors from a checkpoint alone."""
    app = _config(ctx)
    out, manifest_path, montage = flags.pop("out"), flags.pop("manifest_path"), flags.pop("montage")
    config = _distill_config(app, {**flags, "pipc": _parse_pipc(pipc)}, False)
    spec, params, normalization = _load_model(checkpoint)
    accessible = None
    if dataset and data_path:
        accessible = subsample_pipc(_load_data(dataset, data_path, "train", normalization), config.pipc, config.seed)
    synthetic, manifest = extract_dsv(spec, params, config, accessible)
    _write_outputs(synthetic, manifest, out, manifest_path, montage)


@cli.command()
@click.option("--method", type=click.Choice(METHODS), default="practical", show_default=True)
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@dataset_options
@click.option("--pipc", default=None, help="Accessible images per class, or 'all'.")
@click.option("--beta", type=float, default=None, help="Augmented DKKT weight.")
@click.option("--gamma", type=float, default=None, help="Distribution matching weight.")
@click.option("--standard-schedule", "use_schedule", is_flag=True, help="Use the standard alpha/gamma/init for this ipc and pipc.")
@distill_options
@click.pass_context
def distill(
    ctx: click.Context,
    method: str,
    checkpoint: Path | None,
    dataset: str,
    data_path: Path | None,
    pipc: str | None,
    use_schedule: bool,
    **flags: Any,
) -> None:
    """Synthesise a distilled set with DM, DSV extraction or the practical joint loss."""
    app = _config(ctx)
    out, manifest_path, montage = flags.pop("out"), flags.pop("manifest_path"), flags.pop("montage")
    config = _distill_config(app, {**flags, "pipc": _parse_pipc(pipc)}, use_schedule)
    if method != "dm" and checkpoint is None:
        raise click.UsageError(f"--checkpoint is required for --method {method}")
    if data_path is None:
        raise click.UsageError("--data is required")

    spec = params = normalization = None
    if checkpoint is not None:
        spec, params, normalization = _load_model(checkpoint)
    accessible = subsample_pipc(_load_data(dataset, data_path, "train", normalization), config.pipc, config.seed)

    if method == "dm":
        synthetic, manifest = dm_distill(accessible, config)
    elif method == "dsv":
        synthetic, manifest = extract_dsv(spec, params, config, accessible)
    else:
        synthetic, manifest = practical_distill(spec, params, accessible, config)
    _write_outputs(synthetic, manifest, out, manifest_path, montage)


@cli.command("eval")
@click.argument("synthetic_path", type=click.Path(exists=True, path_type=Path))
@dataset_options
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None, help="Source of model spec and normalisation.")
@click.option("--arch", type=click.Choice(["mlp", "convnet"]), default=None)
@click.option("--seeds", default=None, help="Comma separated evaluation seeds.")
@click.option("--epochs", type=int, default=None)
@click.option("--paper-protocol", "--long-protocol", "long_protocol", is_flag=True, help=f"Train for {LONG_EPOCHS} epochs.")
@click.option("--method", "method_label", default="synthetic", show_default=True, help="Label for metrics records.")
@click.option("--ipc", type=int, default=None, help="ipc label for metrics records.")
@click.option("--pipc", default=None, help="pipc label for metrics records.")
@click.option("--metrics", "metrics_path", type=click.Path(path_type=Path), default=DEFAULT_METRICS_FILE, show_default=True)
@click.pass_context
def eval_command(
    ctx: click.Context,
    synthetic_path: Path,
    dataset: str,
    data_path: Path | None,
    checkpoint: Path | None,
    arch: str | None,
    seeds: str | None,
    epochs: int | None,
    long_protocol: bool,
    method_label: str,
    ipc: int | None,
    pipc: str | None,
    metrics_path: Path,
) -> None:
    """Train fresh models on a synthetic set and append test accuracy records."""
    app = _config(ctx)
    if data_path is None:
        raise click.UsageError("--data is required")
    synthetic = load_synthetic(synthetic_path)
    normalization = None
    if checkpoint is not None:
        spec, _, normalization = _load_model(checkpoint)
    else:
        spec = ModelSpec(
            arch=arch or app.model.arch,
            input_shape=synthetic.image_shape,
            num_classes=synthetic.num_classes,
            width=app.model.width,
            depth=app.model.depth,
        )
    if normalization is None and dataset == "cifar10":
        train = _load_data(dataset, data_path, "train")
        normalization = (train.mean, train.std)
    test = _load_data(dataset, data_path, "test", normalization)

    eval_config = _eval_config(app, seeds, epochs, long_protocol)
    pipc_label = _parse_pipc(pipc)
    if pipc_label is None:
        pipc_label = app.distill.pipc
    outcome = evaluate_seeds(
        spec,
        synthetic,
        test,
        eval_config,
        method=method_label,
        ipc=ipc if ipc is not None else max(1, synthetic.n // synthetic.num_classes),
        pipc=pipc_label,
        metrics_path=metrics_path,
    )
    click.echo(outcome.summary())


@cli.command()
@click.argument("first", type=click.Path(exists=True, path_type=Path))
@click.argument("second", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--montage", type=click.Path(path_type=Path), default=None)
def average(first: Path, second: Path, out: Path, montage: Path | None) -> None:
    """Blend two synthetic sets pixelwise (multipliers reset to zero)."""
    blended = average_sets(load_synthetic(first), load_synthetic(second))
    save_synthetic(blended, out)
    if montage is not None:
        export_images(blended, montage)
    click.echo(f"Wrote averaged set to {out}")


@cli.command()
@click.argument("sets", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--radius", type=float, default=DEFAULT_RADIUS, show_default=True, help="Low-frequency disc radius fraction.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write frequency records here.")
def fft(sets: tuple[Path, ...], radius: float, out: Path | None) -> None:
    """Report the low-frequency energy share of synthetic sets."""
    loaded = {path.stem: load_synthetic(path) for path in sets}
    rows = frequency_report(loaded, radius)
    key = f"low_freq_ratio@{radius:g}"
    for row in rows:
        click.echo(f"{row['set']:<24} class {str(row['class']):<4} {row[key]:.4f}")
    overall = {row["set"]: row[key] for row in rows if row["class"] == "all"}
    if len(overall) >= 2:
        ranked = sorted(overall, key=overall.get, reverse=True)
        click.echo("Most low-frequency first: " + " > ".join(ranked))
    if out is not None:
        write_records(rows, out)


@cli.command()
@click.argument("metrics", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def report(metrics: tuple[Path, ...], output_format: str) -> None:
    """Aggregate metrics records into mean ± std per method, ipc and pipc."""
    paths = metrics or (DEFAULT_METRICS_FILE,)
    entries = [entry for path in paths for entry in read_records(path, kind="metrics")]
    rows = summarize_metrics(entries)
    if output_format == "json":
        click.echo(json.dumps(rows, indent=2))
        return
    if not rows:
        click.echo("No metrics recorded.")
        return
    click.echo(f"{'method':<14}{'ipc':>5}{'pipc':>6}  accuracy")
    for row in rows:
        click.echo(
            f"{row['method']:<14}{row['ipc']:>5}{str(row['pipc']):>6}  "
            f"{row['mean']:.2f} ± {row['std']:.2f} ({row['seeds']} seeds)"
        )


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@dataset_options
@click.option("--ipcs", default=",".join(map(str, DEFAULT_IPCS)), show_default=True)
@click.option("--pipcs", default="10,50,all", show_default=True)
@click.option("--methods", default=",".join(SWEEP_METHODS), show_default=True)
@click.option("--steps", type=int, default=None, help="Synthesis steps per cell.")
@click.option("--seeds", default=None, help="Comma separated evaluation seeds.")
@click.option("--epochs", type=int, default=None)
@click.option("--paper-protocol", "--long-protocol", "long_protocol", is_flag=True, help=f"Train for {LONG_EPOCHS} epochs.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("sweep"), show_default=True)
@click.option("--metrics", "metrics_path", type=click.Path(path_type=Path), default=DEFAULT_METRICS_FILE, show_default=True)
@click.pass_context
def sweep(
    ctx: click.Context,
    checkpoint: Path,
    dataset: str,
    data_path: Path | None,
    ipcs: str,
    pipcs: str,
    methods: str,
    steps: int | None,
    seeds: str | None,
    epochs: int | None,
    long_protocol: bool,
    out_dir: Path,
    metrics_path: Path,
) -> None:
    """Synthesise and evaluate every ipc x pipc x method cell with the standard schedule."""
    app = _config(ctx)
    if data_path is None:
        raise click.UsageError("--data is required")
    cells = sweep_cells(
        _parse_list(ipcs, int),
        _parse_list(pipcs, lambda item: None if item == "all" else int(item)),
        _parse_list(methods, str),
    )
    spec, params, normalization = _load_model(checkpoint)
    pool = _load_data(dataset, data_path, "train", normalization)
    test = _load_data(dataset, data_path, "test", normalization)
    base = dict(app.raw.get("distill", {}))
    if steps is not None:
        base["steps"] = steps
    eval_config = _eval_config(app, seeds, epochs, long_protocol)
    result = run_sweep(spec, params, pool, test, cells, base, eval_config, out_dir, metrics_path)
    for cell, seeds_run in zip(result.cells, result.sweeps):
        click.echo(f"{cell.stem:<32} {seeds_run.mean:.2f} ± {seeds_run.std:.2f}")
    for cell in result.skipped:
        click.echo(f"{cell.stem:<32} skipped (ipc > pipc)")
    click.echo(f"Wrote {len(result.cells)} set(s) to {out_dir}; run `dsvdistill report {metrics_path}` for the table")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--instances", type=int, default=20, show_default=True)
@click.option("--band", type=float, default=0.15, show_default=True, help="Allowed DSV margin deviation.")
@click.option("--steps", type=int, default=None, help="DSV extraction steps.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write oracle records here.")
def oracle(seed: int, instances: int, band: float, steps: int | None, out: Path | None) -> None:
    """Validate the SVM solver and DSV extraction against exact solutions."""
    result = run_oracle_suite(seed=seed, instances=instances, band=band, steps=steps)
    for case in result.cases:
        suffix = "" if case.gating else " (measurement)"
        click.echo(f"[{'ok' if case.passed else 'FAIL'}] {case.name}{suffix}")
    for row in result.rows:
        click.echo(
            f"  dsv {row.index} (class {row.label}, {row.start} start): nearest SV {row.nearest_sv:.4f}, "
            f"margin {row.margin:.4f} vs training {row.training_margin:.4f}"
        )
    if out is not None:
        write_records(result.records(), out)
    if not result.passed:
        sys.exit(1)


@cli.command()
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@click.pass_context
def config(ctx: click.Context, output_format: str) -> None:
    """Show the effective configuration."""
    cfg = _config(ctx)
    if output_format == "json":
        click.echo(json.dumps(cfg.raw, indent=2))
        return
    d = cfg.distill
    click.echo("dsvdistill configuration:")
    click.echo(f"  Log Level:   {cfg.log_level}")
    click.echo(f"  Model:       {cfg.model.arch} (width {cfg.model.width}, depth {cfg.model.depth})")
    click.echo("\nDistill:")
    click.echo(f"  ipc / pipc:  {d.ipc} / {'all' if d.pipc is None else d.pipc}")
    click.echo(f"  Weights:     alpha={d.weights.alpha} beta={d.weights.beta} gamma={d.weights.gamma}")
    click.echo(f"  Steps:       {d.steps} ({d.optimizer}, pixel lr {d.pixel_lr}, lambda lr {d.lambda_lr})")
    click.echo(f"  Init:        {d.init}{' (gated)' if d.gated else ''}")
    click.echo(f"  Augment:     {d.augment or 'none'}")
    click.echo("\nEval:")
    click.echo(f"  SAM:         lr={cfg.eval.sam.lr} rho={cfg.eval.sam.rho} epochs={cfg.eval.sam.epochs}")
    click.echo(f"  Seeds:       {', '.join(map(str, cfg.eval.seeds))}")


def main() -> None:
    """Console script entry point."""
    try:
        cli(obj={})
    except KeyboardInterrupt:
        sys.exit(1)


if __name__ == "__main__":
    main()
