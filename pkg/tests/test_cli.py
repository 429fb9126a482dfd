from __future__ import annotations

import json
import logging

import pytest
import torch
from click.testing import CliRunner

from dsvdistill.artifacts import load_synthetic, save_checkpoint
from dsvdistill.cli import cli, eval_command
from dsvdistill.config import LONG_EPOCHS
from dsvdistill.datasets import MNIST_FILES, write_idx
from dsvdistill.engine import RunManifest
from dsvdistill.logging import ROOT_LOGGER
from dsvdistill.models import ModelSpec
from dsvdistill.models.factory import init_params
from dsvdistill.records import read_records

CONFIG = """\
distill:
  augment: flip,translate
  embed_width: 4
  embed_depth: 1
  steps: 2
"""


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    logging.getLogger(ROOT_LOGGER).handlers.clear()


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Tiny 8x8 IDX dataset (4 images per class) plus a config file."""
    monkeypatch.chdir(tmp_path)
    generator = torch.Generator().manual_seed(0)
    labels = torch.arange(10).repeat(4)
    images = torch.randint(0, 256, (40, 1, 8, 8), generator=generator).to(torch.float64) / 255.0
    data = tmp_path / "data"
    for split in ("train", "test"):
        image_name, label_name = MNIST_FILES[split]
        write_idx(images, labels, data / image_name, data / label_name)
    (tmp_path / "cfg.yml").write_text(CONFIG, encoding="utf-8")
    return tmp_path


def _run(*args: str):
    return CliRunner().invoke(cli, list(args), obj={}, catch_exceptions=False)


def _pretrain(workspace):
    result = _run(
        "-q", "pretrain", "--dataset", "mnist", "--data", "data", "--out", "model.dfck",
        "--arch", "mlp", "--width", "8", "--depth", "2", "--epochs", "3",
    )
    assert result.exit_code == 0, result.output
    return workspace / "model.dfck"


def test_config_command_shows_effective_values(workspace):
    result = _run("--config", "cfg.yml", "config")
    assert result.exit_code == 0
    assert "dsvdistill configuration:" in result.output
    assert "Augment:     flip,translate" in result.output
    as_json = json.loads(_run("--config", "cfg.yml", "config", "--format", "json").output)
    assert as_json["distill"]["embed_width"] == 4


def test_pretrain_extract_and_eval(workspace):
    _pretrain(workspace)
    result = _run("-q", "extract-dsv", "--checkpoint", "model.dfck", "--out", "dsv.dfss", "--steps", "2", "--alpha", "0.1")
    assert result.exit_code == 0, result.output
    synthetic = load_synthetic(workspace / "dsv.dfss")
    assert synthetic.n == 10
    manifest = RunManifest.read(workspace / "dsv.manifest.jsonl")
    assert manifest.method == "dsv"
    assert len(manifest.steps) == 2

    result = _run(
        "-q", "eval", "dsv.dfss", "--dataset", "mnist", "--data", "data", "--checkpoint", "model.dfck",
        "--seeds", "0,1", "--epochs", "2", "--method", "dsv", "--pipc", "all", "--metrics", "metrics.jsonl",
    )
    assert result.exit_code == 0, result.output
    assert "dsv:" in result.output
    records = read_records(workspace / "metrics.jsonl", kind="metrics")
    assert [r["seed"] for r in records] == [0, 1]
    assert records[0]["ipc"] == 1 and records[0]["pipc"] == "all"

    report = _run("report", "metrics.jsonl", "--format", "json")
    rows = json.loads(report.output)
    assert rows[0]["method"] == "dsv" and rows[0]["seeds"] == 2


def test_distill_methods_average_and_fft(workspace):
    _pretrain(workspace)
    common = ["--dataset", "mnist", "--data", "data", "--pipc", "2"]
    practical = _run(
        "-q", "--config", "cfg.yml", "distill", "--method", "practical", "--checkpoint", "model.dfck",
        *common, "--gamma", "0.01", "--out", "practical.dfss", "--montage", "practical.ppm",
    )
    assert practical.exit_code == 0, practical.output
    assert (workspace / "practical.ppm").exists()
    header = read_records(workspace / "practical.manifest.jsonl")[0]
    assert header["weights"]["gamma"] == 0.01
    assert header["config"]["pipc"] == 2

    dm = _run("-q", "--config", "cfg.yml", "distill", "--method", "dm", *common, "--out", "dm.dfss", "--manifest", "dm.jsonl")
    assert dm.exit_code == 0, dm.output
    assert RunManifest.read(workspace / "dm.jsonl").weights["gamma"] == 1.0

    blended = _run("average", "practical.dfss", "dm.dfss", "--out", "avg.dfss")
    assert blended.exit_code == 0, blended.output
    assert torch.count_nonzero(load_synthetic(workspace / "avg.dfss").lambdas) == 0

    spectrum = _run("fft", "practical.dfss", "dm.dfss", "--radius", "0.5", "--out", "freq.jsonl")
    assert spectrum.exit_code == 0, spectrum.output
    assert "Most low-frequency first:" in spectrum.output
    assert len(read_records(workspace / "freq.jsonl", kind="frequency")) == 2 * 11


def test_oracle_command_reports_measurements(workspace):
    result = _run("-q", "oracle", "--instances", "3", "--steps", "20", "--out", "oracle.jsonl")
    assert result.exit_code == 0, result.output
    assert "[ok] symmetric-fixture" in result.output
    assert "dsv-vs-sv[noise] (measurement)" in result.output
    assert "perturbed start" in result.output
    cases = read_records(workspace / "oracle.jsonl", kind="oracle")
    assert [case["gating"] for case in cases] == [True, True, False, False]
    assert len(read_records(workspace / "oracle.jsonl", kind="dsv")) == 4


def test_package_errors_exit_with_one(workspace):
    _pretrain(workspace)
    result = CliRunner().invoke(
        cli,
        ["-q", "distill", "--method", "dsv", "--checkpoint", "model.dfck", "--dataset", "mnist",
         "--data", "data", "--pipc", "10", "--out", "x.dfss"],
        obj={},
    )
    assert result.exit_code == 1
    assert "Error: class 0 has 4 samples, fewer than pipc=10" in result.output

    spec = ModelSpec(arch="mlp", input_shape=(1, 8, 8), num_classes=10, depth=1)
    save_checkpoint(init_params(spec, 0), workspace / "bare.dfck")
    bare = CliRunner().invoke(cli, ["-q", "extract-dsv", "--checkpoint", "bare.dfck", "--out", "y.dfss"], obj={})
    assert bare.exit_code == 1
    assert "carries no model spec" in bare.output


def test_usage_errors_exit_with_two(workspace):
    unknown = CliRunner().invoke(cli, ["summon"], obj={})
    assert unknown.exit_code == 2
    missing = CliRunner().invoke(cli, ["distill", "--method", "practical", "--data", "data", "--out", "z.dfss"], obj={})
    assert missing.exit_code == 2
    assert "--checkpoint is required" in missing.output


def test_eval_paper_protocol_trains_the_long_schedule(workspace):
    _pretrain(workspace)
    assert _run("-q", "extract-dsv", "--checkpoint", "model.dfck", "--out", "dsv.dfss", "--steps", "2").exit_code == 0
    result = _run(
        "-q", "eval", "dsv.dfss", "--dataset", "mnist", "--data", "data", "--checkpoint", "model.dfck",
        "--seeds", "0", "--epochs", "2", "--paper-protocol", "--metrics", "long.jsonl",
    )
    assert result.exit_code == 0, result.output
    assert read_records(workspace / "long.jsonl", kind="metrics")[0]["epochs"] == LONG_EPOCHS
    option = next(param for param in eval_command.params if param.name == "long_protocol")
    assert option.opts == ["--paper-protocol", "--long-protocol"]


def _distill_bytes(workspace, name: str, *flags: str) -> bytes:
    result = _run(
        "-q", "--config", "cfg.yml", "distill", "--checkpoint", "model.dfck", "--dataset", "mnist",
        "--data", "data", "--pipc", "2", "--steps", "3", "--alpha", "0.1", "--seed", "5",
        *flags, "--out", f"{name}.dfss",
    )
    assert result.exit_code == 0, result.output
    return (workspace / f"{name}.dfss").read_bytes()


def test_practical_without_extras_writes_the_dsv_bytes(workspace):
    _pretrain(workspace)
    practical = _distill_bytes(workspace, "practical", "--method", "practical", "--beta", "0", "--gamma", "0")
    dsv = _distill_bytes(workspace, "dsv", "--method", "dsv")
    assert practical == dsv


def test_distill_is_bit_reproducible(workspace):
    _pretrain(workspace)
    first = _distill_bytes(workspace, "first", "--method", "practical", "--beta", "0.5", "--gamma", "0.01")
    second = _distill_bytes(workspace, "second", "--method", "practical", "--beta", "0.5", "--gamma", "0.01")
    assert first == second
    assert _distill_bytes(workspace, "dm1", "--method", "dm") == _distill_bytes(workspace, "dm2", "--method", "dm")


def test_sweep_fills_the_report_grid(workspace):
    _pretrain(workspace)
    result = _run(
        "-q", "--config", "cfg.yml", "sweep", "--checkpoint", "model.dfck", "--dataset", "mnist", "--data", "data",
        "--ipcs", "1,3", "--pipcs", "2,all", "--steps", "2", "--seeds", "0", "--epochs", "2",
        "--out-dir", "grid", "--metrics", "grid.jsonl",
    )
    assert result.exit_code == 0, result.output
    assert "dsv-real-ipc3-pipc2" in result.output and "skipped" in result.output

    records = read_records(workspace / "grid.jsonl", kind="metrics")
    assert len(records) == 12
    rows = json.loads(_run("report", "grid.jsonl", "--format", "json").output)
    assert len(rows) == 12
    assert {row["method"] for row in rows} == {"dm", "dsv-noise", "dsv-real", "practical"}

    assert (workspace / "grid" / "practical-ipc1-pipc2.dfss").exists()
    practical = RunManifest.read(workspace / "grid" / "practical-ipc1-pipc2.manifest.jsonl")
    assert practical.weights == {"alpha": 0.1, "beta": 0.0, "gamma": 0.001}
    assert practical.config["init"] == "noise"
    real = RunManifest.read(workspace / "grid" / "dsv-real-ipc1-pipcall.manifest.jsonl")
    assert real.config["init"] == "real" and real.weights["alpha"] == 0.001


def test_sweep_rejects_unknown_methods(workspace):
    _pretrain(workspace)
    result = CliRunner().invoke(
        cli,
        ["-q", "sweep", "--checkpoint", "model.dfck", "--data", "data", "--methods", "dm,mtt"],
        obj={},
    )
    assert result.exit_code == 1
    assert "unknown sweep method(s) mtt" in result.output
