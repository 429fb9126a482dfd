from __future__ import annotations

import numpy as np
import pytest
import torch

from dsvdistill.checks import DistillError
from dsvdistill.datasets import gen_toy
from dsvdistill.kkt import SyntheticSet, aggregated_gradient, stationarity_loss
from dsvdistill.models.factory import flatten_params
from dsvdistill.oracle import (
    MARGIN_BAND,
    STATIONARITY_LIMIT,
    check_symmetric_fixture,
    dsv_pipeline,
    dsv_vs_sv_distance,
    least_confident,
    logit_margin,
    perturbed_start,
    run_oracle_suite,
    train_linear,
)
from dsvdistill.svm import signed_labels, solve_svm


def _symmetric():
    return gen_toy("separable2d", 2, 0, symmetric=True)


def test_linear_model_learns_the_symmetric_separator():
    data = _symmetric()
    spec, params = train_linear(data)
    margins = logit_margin(spec, params, data.images)
    assert margins[:2].max() < 0 < margins[2:].min()
    assert float(params["head.weight"][:, 1].abs().max()) == 0.0


def test_least_confident_picks_the_inner_points():
    data = _symmetric()
    spec, params = train_linear(data)
    start = least_confident(spec, params, data)
    assert start.images.reshape(2, 2).tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    assert start.labels.tolist() == [0, 1]


def test_candidates_on_support_vectors_have_zero_distance():
    data = _symmetric()
    spec, params = train_linear(data)
    points = data.images.reshape(data.n, -1).numpy()
    solution = solve_svm(points, signed_labels(data.labels.numpy()))
    start = least_confident(spec, params, data)
    rows = dsv_vs_sv_distance(start, solution, data, spec, params)
    assert len(rows) == start.n
    assert all(row.nearest_sv == 0.0 for row in rows)
    assert all(np.isclose(row.margin, row.training_margin) for row in rows)


def test_symmetric_fixture_case():
    case = check_symmetric_fixture()
    assert case.passed
    assert case.to_dict()["kind"] == "oracle"


def test_noise_start_moves_the_stationarity_trace():
    case, rows, manifest = dsv_pipeline(_symmetric(), start="noise")
    assert manifest.steps[0].stat > manifest.final["stat"]
    assert manifest.final["stat"] < STATIONARITY_LIMIT
    assert case.name == "dsv-vs-sv[noise]"
    assert not case.gating
    assert case.detail["initial_stationarity"] == manifest.steps[0].stat
    assert [row.start for row in rows] == ["noise", "noise"]


def test_perturbed_start_leaves_the_support_vectors():
    data = _symmetric()
    spec, params = train_linear(data)
    points = data.images.reshape(data.n, -1).numpy()
    solution = solve_svm(points, signed_labels(data.labels.numpy()))
    start = perturbed_start(spec, params, data, seed=0)
    assert torch.equal(start.images, perturbed_start(spec, params, data, seed=0).images)
    rows = dsv_vs_sv_distance(start, solution, data, spec, params, start="perturbed")
    assert all(row.nearest_sv > 0.0 for row in rows)


def test_stationarity_is_blind_to_the_margin():
    data = _symmetric()
    spec, params = train_linear(data)
    far = SyntheticSet(
        images=torch.tensor([[[[-3.0, 0.0]]], [[[3.0, 0.0]]]], dtype=torch.float64),
        labels=torch.tensor([0, 1]),
        lambdas=torch.tensor([0.5, 0.5], dtype=torch.float64),
        num_classes=2,
    )
    agg = aggregated_gradient(spec, params, far)
    assert float(stationarity_loss(flatten_params(params), agg).detach()) <= 1e-9
    training_margin = float(logit_margin(spec, params, data.images).abs().min())
    far_margins = logit_margin(spec, params, far.images).abs()
    assert float(far_margins.min()) - training_margin > MARGIN_BAND


def test_unknown_start_is_rejected():
    with pytest.raises(DistillError, match="unknown DSV start"):
        dsv_pipeline(_symmetric(), start="support")


def test_suite_verdict_comes_from_the_solver_checks():
    report = run_oracle_suite(seed=0, instances=5, steps=50)
    assert report.passed, report.records()
    names = [case.name for case in report.cases]
    assert names == ["random-instances", "symmetric-fixture", "dsv-vs-sv[noise]", "dsv-vs-sv[perturbed]"]
    assert [case.gating for case in report.cases] == [True, True, False, False]
    assert len(report.rows) == 4
    for case in report.cases[2:]:
        assert set(case.detail) == {"initial_stationarity", "stationarity", "band", "max_margin_gap"}
    kinds = {record["kind"] for record in report.records()}
    assert kinds == {"oracle", "dsv"}
