from __future__ import annotations

import pytest
import torch

from dsvdistill.artifacts import (
    ArtifactError,
    load_checkpoint,
    load_synthetic,
    read_checkpoint,
    save_checkpoint,
    save_synthetic,
)
from dsvdistill.kkt import SyntheticSet
from dsvdistill.models import ModelError, ModelSpec


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, mlp_spec, mlp_params):
    path = tmp_path / "model.dfck"
    mean = torch.tensor([0.25], dtype=torch.float64)
    save_checkpoint(mlp_params, path, spec=mlp_spec, extras={"mean": mean, "meta.std": torch.ones(1)})
    checkpoint = read_checkpoint(path)
    assert checkpoint.params.bit_equal(mlp_params)
    assert checkpoint.spec == mlp_spec
    stored_mean, stored_std = checkpoint.normalization
    assert torch.equal(stored_mean, mean)
    assert stored_std.tolist() == [1.0]
    assert load_checkpoint(path).bit_equal(mlp_params)


def test_checkpoint_against_wrong_spec_raises_model_error(tmp_path, mlp_spec, mlp_params):
    path = tmp_path / "model.dfck"
    save_checkpoint(mlp_params, path)
    other = ModelSpec(arch="mlp", input_shape=(1, 4, 4), num_classes=3, width=7, depth=2)
    with pytest.raises(ModelError, match="model.dfck"):
        load_checkpoint(path, other)
    assert load_checkpoint(path, mlp_spec).bit_equal(mlp_params)


def test_synthetic_roundtrip_keeps_zero_multipliers(tmp_path, synthetic):
    lambdas = synthetic.lambdas.clone()
    lambdas[1] = 0.0
    original = SyntheticSet(synthetic.images, synthetic.labels, lambdas, synthetic.num_classes)
    path = tmp_path / "set.dfss"
    save_synthetic(original, path)
    loaded = load_synthetic(path)
    assert torch.equal(loaded.images, original.images)
    assert torch.equal(loaded.labels, original.labels)
    assert torch.equal(loaded.lambdas, lambdas)
    assert float(loaded.lambdas[1]) == 0.0
    assert loaded.num_classes == 3


def test_checkpoint_is_not_a_synthetic_set(tmp_path, mlp_params):
    path = tmp_path / "model.dfck"
    save_checkpoint(mlp_params, path)
    with pytest.raises(ArtifactError, match="bad magic"):
        load_synthetic(path)


def test_truncated_files_are_rejected(tmp_path, mlp_params, synthetic):
    ckpt = tmp_path / "model.dfck"
    save_checkpoint(mlp_params, ckpt)
    ckpt.write_bytes(ckpt.read_bytes()[:40])
    with pytest.raises(ArtifactError, match="truncated"):
        read_checkpoint(ckpt)

    synth = tmp_path / "set.dfss"
    save_synthetic(synthetic, synth)
    synth.write_bytes(synth.read_bytes()[:-3])
    with pytest.raises(ArtifactError, match="truncated"):
        load_synthetic(synth)


def test_trailing_bytes_and_bad_version(tmp_path, synthetic):
    path = tmp_path / "set.dfss"
    save_synthetic(synthetic, path)
    payload = path.read_bytes()
    path.write_bytes(payload + b"\x00")
    with pytest.raises(ArtifactError, match="trailing"):
        load_synthetic(path)
    path.write_bytes(payload[:4] + b"\x09\x00\x00\x00" + payload[8:])
    with pytest.raises(ArtifactError, match="version 9"):
        load_synthetic(path)


def test_missing_file_is_an_artifact_error(tmp_path):
    with pytest.raises(ArtifactError, match="cannot read"):
        load_synthetic(tmp_path / "absent.dfss")


def test_failed_write_leaves_no_partial_file(tmp_path, synthetic, monkeypatch):
    path = tmp_path / "set.dfss"

    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr("dsvdistill.util.os.replace", boom)
    with pytest.raises(OSError):
        save_synthetic(synthetic, path)
    assert list(tmp_path.iterdir()) == []
