from __future__ import annotations

import pytest
import torch

from dsvdistill import autodiff as ad
from dsvdistill.autodiff import GradientRequest, ShapeError

PRIMITIVE_TOL = 1e-6


def _rand(generator, *shape):
    return torch.randn(shape, generator=generator, dtype=torch.float64)


def test_registry_dispatches_by_name():
    a = torch.ones(2, 3, dtype=torch.float64)
    b = torch.full((3,), 2.0, dtype=torch.float64)
    assert torch.equal(ad.forward_primitive("add", a, b), a + b)
    assert torch.equal(ad.forward_primitive("sum", a), torch.tensor(6.0, dtype=torch.float64))
    with pytest.raises(ad.AutodiffError, match="unknown primitive"):
        ad.forward_primitive("softmax", a)


def test_shape_errors_name_primitive_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(torch.zeros(2, 3, dtype=torch.float64), torch.zeros(2, 3, dtype=torch.float64))
    with pytest.raises(ShapeError, match="add"):
        ad.add(torch.zeros(2, 3), torch.zeros(4))
    with pytest.raises(ShapeError, match="reshape"):
        ad.reshape(torch.zeros(6), (4, 2))
    with pytest.raises(ShapeError, match="conv2d"):
        ad.conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(3, 1, 3, 3))


@pytest.mark.parametrize(
    "name,build",
    [
        ("mul", lambda x, g: ad.sum_(ad.mul(x, x))),
        ("matmul", lambda x, g: ad.sum_(ad.matmul(x.reshape(2, 8), _rand(g, 8, 3)) ** 2)),
        ("logsumexp", lambda x, g: ad.sum_(ad.logsumexp(x.reshape(4, 4), dim=1))),
        ("instance_norm", lambda x, g: ad.sum_(ad.instance_norm(x.reshape(1, 1, 4, 4)) * _rand(g, 1, 1, 4, 4))),
        ("avg_pool2", lambda x, g: ad.sum_(ad.avg_pool2(x.reshape(1, 1, 4, 4)) ** 3)),
        ("conv2d", lambda x, g: ad.sum_(ad.conv2d(x.reshape(1, 1, 4, 4), _rand(g, 2, 1, 3, 3), padding=1) ** 2)),
        ("relu", lambda x, g: ad.sum_(ad.relu(x) * _rand(g, 16))),
        ("concat", lambda x, g: ad.sum_(ad.concat(x, x * 2.0) ** 2)),
        ("slice", lambda x, g: ad.sum_(ad.slice_(x, dim=0, start=3, stop=9) ** 2)),
        ("mean", lambda x, g: ad.mean(x**2)),
    ],
)
def test_primitive_gradients_match_finite_differences(name, build):
    g = torch.Generator().manual_seed(11)
    x = _rand(g, 16)
    # rebuild the random constants identically for every evaluation
    def f(v):
        return build(v, torch.Generator().manual_seed(3))

    assert ad.finite_difference_check(f, x) <= PRIMITIVE_TOL, name


def test_bilinear_resample_gradients_in_image_and_identity_grid():
    g = torch.Generator().manual_seed(5)
    image = _rand(g, 1, 2, 4, 4)
    rows = torch.arange(4, dtype=torch.float64).view(4, 1).expand(4, 4)
    cols = torch.arange(4, dtype=torch.float64).view(1, 4).expand(4, 4)
    identity = torch.stack([rows, cols], dim=-1).unsqueeze(0)
    assert torch.equal(ad.bilinear_resample(image, identity), image)

    shifted = identity + 0.37
    weights = _rand(g, 1, 2, 4, 4)
    err = ad.finite_difference_check(
        lambda x: ad.sum_(ad.bilinear_resample(x.reshape(1, 2, 4, 4), shifted) * weights),
        image.reshape(-1),
    )
    assert err <= PRIMITIVE_TOL


def test_bilinear_resample_zero_pads_outside():
    image = torch.ones(1, 1, 2, 2, dtype=torch.float64)
    grid = torch.full((1, 1, 1, 2), -5.0, dtype=torch.float64)
    assert float(ad.bilinear_resample(image, grid)) == 0.0


def test_grad_returns_zeros_for_unreachable_leaves():
    x = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    unused = torch.tensor([3.0], dtype=torch.float64, requires_grad=True)
    frozen = torch.tensor([4.0], dtype=torch.float64)
    gx, gu, gf = ad.grad(GradientRequest(ad.sum_(x * x), [x, unused, frozen]))
    assert torch.equal(gx, torch.tensor([2.0, 4.0], dtype=torch.float64))
    assert torch.equal(gu, torch.zeros(1, dtype=torch.float64))
    assert torch.equal(gf, torch.zeros(1, dtype=torch.float64))


def test_grad_with_create_graph_supports_second_order():
    x = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
    (first,) = ad.grad(GradientRequest(x**3, [x], create_graph=True))
    (second,) = ad.grad(GradientRequest(first, [x]))
    assert float(first) == pytest.approx(27.0)
    assert float(second) == pytest.approx(18.0)


def test_grad_rejects_non_scalar_output():
    x = torch.ones(2, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ad.GradientError, match="scalar"):
        ad.grad(GradientRequest(x * 2, [x]))


def test_clamp_min_projects():
    out = ad.clamp_min(torch.tensor([-1.0, 0.0, 2.0], dtype=torch.float64), min=0.0)
    assert out.tolist() == [0.0, 0.0, 2.0]
