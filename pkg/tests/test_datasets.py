from __future__ import annotations

import struct

import numpy as np
import pytest
import torch

from dsvdistill.datasets import (
    BLOB_SIGMA,
    DataError,
    LabeledSet,
    decode_cifar10,
    gen_toy,
    load_dataset,
    load_toy,
    parse_cifar10,
    parse_idx,
    save_toy,
    write_idx,
)


def _cifar_records() -> bytes:
    bright = bytes([3]) + bytes([255]) * 3072
    dark = bytes([7]) + bytes([0]) * 3072
    return bright + dark


def test_cifar_records_decode_to_unit_range():
    images, labels = decode_cifar10(_cifar_records())
    assert images.shape == (2, 3, 32, 32)
    assert labels.tolist() == [3, 7]
    assert float(images[0].min()) == 1.0
    assert float(images[1].max()) == 0.0


def test_cifar_corrupt_size_is_rejected():
    with pytest.raises(DataError, match="corrupt CIFAR-10 file"):
        decode_cifar10(_cifar_records()[:-1], "batch.bin")


def test_cifar_files_are_standardised(tmp_path):
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(_cifar_records())
    raw = parse_cifar10([path], normalization=(torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64)))
    assert float(raw.images[0, 0, 0, 0]) == 1.0
    fitted = parse_cifar10([path])
    assert torch.allclose(fitted.mean, torch.full((3,), 0.5, dtype=torch.float64))
    assert torch.allclose(fitted.images.mean(dim=(0, 2, 3)), torch.zeros(3, dtype=torch.float64), atol=1e-12)
    assert fitted.num_classes == 10


def test_idx_roundtrip(tmp_path, generator):
    pixels = torch.randint(0, 256, (6, 1, 5, 4), generator=generator).to(torch.float64) / 255.0
    labels = torch.tensor([0, 1, 2, 3, 4, 9])
    write_idx(pixels, labels, tmp_path / "img", tmp_path / "lbl")
    data = parse_idx(tmp_path / "img", tmp_path / "lbl")
    assert torch.equal(data.images, pixels)
    assert torch.equal(data.labels, labels)


def test_idx_bad_label_magic_names_both_values(tmp_path):
    write_idx(torch.zeros(2, 1, 2, 2, dtype=torch.float64), torch.tensor([0, 1]), tmp_path / "img", tmp_path / "lbl")
    payload = (tmp_path / "lbl").read_bytes()
    (tmp_path / "lbl").write_bytes(struct.pack(">I", 0x803) + payload[4:])
    with pytest.raises(DataError, match="expected 0x00000801, got 0x00000803"):
        parse_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_count_mismatch(tmp_path):
    write_idx(torch.zeros(2, 1, 2, 2, dtype=torch.float64), torch.tensor([0, 1]), tmp_path / "img", tmp_path / "lbl")
    write_idx(torch.zeros(3, 1, 2, 2, dtype=torch.float64), torch.tensor([0, 1, 2]), tmp_path / "img3", tmp_path / "lbl3")
    with pytest.raises(DataError, match="count mismatch"):
        parse_idx(tmp_path / "img3", tmp_path / "lbl")


def test_load_dataset_uses_standard_names(tmp_path):
    write_idx(
        torch.zeros(2, 1, 2, 2, dtype=torch.float64),
        torch.tensor([0, 1]),
        tmp_path / "t10k-images-idx3-ubyte",
        tmp_path / "t10k-labels-idx1-ubyte",
    )
    assert load_dataset("mnist", tmp_path, "test").n == 2
    with pytest.raises(DataError, match="cannot read"):
        load_dataset("mnist", tmp_path, "train")
    with pytest.raises(DataError, match="unknown dataset"):
        load_dataset("svhn", tmp_path)


def test_symmetric_fixture_points():
    data = gen_toy("separable2d", 2, 0, symmetric=True)
    assert data.images.reshape(4, 2).tolist() == [[-2.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
    assert data.labels.tolist() == [0, 0, 1, 1]


def test_separable_toy_is_deterministic_with_a_gap():
    first = gen_toy("separable2d", 15, 4)
    assert torch.equal(first.images, gen_toy("separable2d", 15, 4).images)
    assert torch.bincount(first.labels).tolist() == [15, 15]
    points = first.images.reshape(first.n, 2)
    negatives, positives = points[first.labels == 0], points[first.labels == 1]
    assert float(torch.cdist(negatives, positives).min()) >= 0.5


def test_blobs_are_well_separated():
    data = gen_toy("blobs", 200, 1, num_classes=3)
    means = [data.images[data.labels == c].reshape(-1, 2).mean(dim=0) for c in range(3)]
    for a in range(3):
        for b in range(a + 1, 3):
            assert float(torch.dist(means[a], means[b])) >= 4 * BLOB_SIGMA


def test_moons_and_unknown_kind():
    assert gen_toy("moons", 5, 0).n == 10
    with pytest.raises(DataError, match="unknown toy kind"):
        gen_toy("spirals", 5, 0)


def test_toy_text_roundtrip(tmp_path):
    data = gen_toy("separable2d", 6, 2)
    path = tmp_path / "toy.txt"
    save_toy(data, path)
    loaded = load_toy(path)
    assert torch.equal(loaded.images, data.images)
    assert torch.equal(loaded.labels, data.labels)


def test_toy_text_errors(tmp_path):
    path = tmp_path / "toy.txt"
    path.write_text("0.5 1.0 0\n0.5 x 1\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        load_toy(path)
    path.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(DataError, match="no points"):
        load_toy(path)


def test_labeled_set_validation():
    with pytest.raises(DataError):
        LabeledSet(images=torch.zeros(2, 4), labels=torch.zeros(2, dtype=torch.long), num_classes=2)
    data = LabeledSet(images=torch.zeros(3, 1, 1, 2), labels=torch.tensor([0, 1, 1]), num_classes=3)
    assert sorted(data.by_class()) == [0, 1]
    assert np.array_equal(data.class_indices(1).numpy(), [1, 2])
