"""
Differentiable tensor primitives and gradient helpers.

Every tensor in dsvdistill is a ``torch.float64`` CPU tensor. Graphs are recorded
by torch per call, so there is no recording state owned by this module; two
independent computations never share a graph unless they share tensors.

The primitives below validate their operand shapes before dispatching so that a
mismatch surfaces as :class:`ShapeError` naming the primitive and every shape,
instead of a backend message from deep inside a model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import torch
import torch.nn.functional as F

from .util import DsvDistillError

DTYPE = torch.float64
Tensor = torch.Tensor

INSTANCE_NORM_EPS = 1e-5


class AutodiffError(DsvDistillError):
    """Base error for tensor and gradient failures."""


class ShapeError(AutodiffError):
    """Raised when a primitive receives operands of incompatible shape."""


class GradientError(AutodiffError):
    """Raised for malformed gradient requests or non-finite checks."""


def as_tensor(data: Any) -> Tensor:
    """Convert lists, numpy arrays and tensors to a float64 tensor."""
    if isinstance(data, torch.Tensor):
        return data.to(DTYPE)
    return torch.as_tensor(data, dtype=DTYPE)


def _shapes(*tensors: Tensor) -> str:
    return ", ".join(str(tuple(t.shape)) for t in tensors)


def _fail(kind: str, *tensors: Tensor, detail: str = "") -> ShapeError:
    suffix = f": {detail}" if detail else ""
    return ShapeError(f"{kind}: incompatible shapes {_shapes(*tensors)}{suffix}")


def _broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as exc:
        raise _fail(kind, a, b) from exc


# Primitives ----------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("add", a, b)
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("mul", a, b)
    return a * b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() < 1 or b.dim() < 1:
        raise _fail("matmul", a, b, detail="operands must be at least 1-D")
    inner_b = b.shape[0] if b.dim() == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise _fail("matmul", a, b, detail=f"inner extents {a.shape[-1]} != {inner_b}")
    return torch.matmul(a, b)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    if x.dim() != 4 or weight.dim() != 4:
        raise _fail("conv2d", x, weight, detail="expected (N,C,H,W) input and (O,C,kh,kw) kernel")
    if x.shape[1] != weight.shape[1]:
        raise _fail("conv2d", x, weight, detail="channel count differs")
    if bias is not None and tuple(bias.shape) != (weight.shape[0],):
        raise _fail("conv2d", weight, bias, detail="bias must have one entry per output channel")
    out_h = (x.shape[2] + 2 * padding - weight.shape[2]) // stride + 1
    out_w = (x.shape[3] + 2 * padding - weight.shape[3]) // stride + 1
    if out_h < 1 or out_w < 1:
        raise _fail("conv2d", x, weight, detail="kernel larger than padded input")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    # torch's relu backward passes gradient only where the output is > 0.
    return torch.relu(x)


def avg_pool2(x: Tensor) -> Tensor:
    if x.dim() != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise _fail("avg_pool2", x, detail="expected (N,C,H,W) with H, W >= 2")
    return F.avg_pool2d(x, kernel_size=2, stride=2)


def instance_norm(
    x: Tensor,
    weight: Tensor | None = None,
    bias: Tensor | None = None,
    *,
    eps: float = INSTANCE_NORM_EPS,
) -> Tensor:
    """Per-sample, per-channel normalisation with an optional channel affine map."""
    if x.dim() != 4:
        raise _fail("instance_norm", x, detail="expected (N,C,H,W)")
    channels = x.shape[1]
    for param in (weight, bias):
        if param is not None and tuple(param.shape) != (channels,):
            raise _fail("instance_norm", x, param, detail="affine parameters must have one entry per channel")
    mean = x.mean(dim=(2, 3), keepdim=True)
    centred = x - mean
    var = (centred * centred).mean(dim=(2, 3), keepdim=True)
    out = centred / torch.sqrt(var + eps)
    if weight is not None:
        out = out * weight.view(1, channels, 1, 1)
    if bias is not None:
        out = out + bias.view(1, channels, 1, 1)
    return out


def logsumexp(x: Tensor, *, dim: int = -1) -> Tensor:
    if x.dim() == 0:
        raise _fail("logsumexp", x, detail="needs a class axis")
    return torch.logsumexp(x, dim=dim)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    target = list(shape)
    known = math.prod(s for s in target if s != -1)
    if -1 not in target and known != x.numel():
        raise ShapeError(f"reshape: cannot view {tuple(x.shape)} as {tuple(target)}")
    if -1 in target and (known == 0 or x.numel() % known != 0):
        raise ShapeError(f"reshape: cannot view {tuple(x.shape)} as {tuple(target)}")
    return x.reshape(target)


def sum_(x: Tensor, *, dim: int | tuple[int, ...] | None = None, keepdim: bool = False) -> Tensor:
    if dim is None:
        return x.sum()
    return x.sum(dim=dim, keepdim=keepdim)


def mean(x: Tensor, *, dim: int | tuple[int, ...] | None = None, keepdim: bool = False) -> Tensor:
    if x.numel() == 0:
        raise _fail("mean", x, detail="empty operand")
    if dim is None:
        return x.mean()
    return x.mean(dim=dim, keepdim=keepdim)


def concat(*tensors: Tensor, dim: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no operands")
    ref = tensors[0]
    axis = dim % ref.dim()
    for t in tensors[1:]:
        if t.dim() != ref.dim() or any(
            t.shape[k] != ref.shape[k] for k in range(ref.dim()) if k != axis
        ):
            raise _fail("concat", *tensors, detail=f"extents must agree off axis {dim}")
    return torch.cat(tensors, dim=dim)


def slice_(x: Tensor, *, dim: int, start: int, stop: int) -> Tensor:
    extent = x.shape[dim]
    if not 0 <= start <= stop <= extent:
        raise _fail("slice", x, detail=f"range [{start}, {stop}) outside axis {dim} of extent {extent}")
    return x.narrow(dim, start, stop - start)


def bilinear_resample(x: Tensor, grid: Tensor) -> Tensor:
    """
    Sample ``x`` at fractional pixel coordinates with zero padding.

    ``grid`` holds ``(row, col)`` source coordinates in input pixel units with shape
    (N, Ho, Wo, 2). The result is linear in ``x`` and built from gathers and
    products only, so it stays differentiable to any order.
    """
    if x.dim() != 4 or grid.dim() != 4 or grid.shape[-1] != 2 or grid.shape[0] != x.shape[0]:
        raise _fail("bilinear_resample", x, grid, detail="expected (N,C,H,W) input and (N,Ho,Wo,2) grid")
    n, c, h, w = x.shape
    out_h, out_w = grid.shape[1], grid.shape[2]
    rows, cols = grid[..., 0], grid[..., 1]
    r0 = torch.floor(rows)
    c0 = torch.floor(cols)
    wr = (rows - r0).unsqueeze(1)
    wc = (cols - c0).unsqueeze(1)
    flat = x.reshape(n, c, h * w)

    def tap(r: Tensor, col: Tensor) -> Tensor:
        valid = ((r >= 0) & (r <= h - 1) & (col >= 0) & (col <= w - 1)).to(x.dtype)
        index = (r.clamp(0, h - 1).long() * w + col.clamp(0, w - 1).long()).reshape(n, 1, out_h * out_w)
        picked = flat.gather(2, index.expand(n, c, out_h * out_w)).reshape(n, c, out_h, out_w)
        return picked * valid.unsqueeze(1)

    top = tap(r0, c0) * (1 - wc) + tap(r0, c0 + 1) * wc
    bottom = tap(r0 + 1, c0) * (1 - wc) + tap(r0 + 1, c0 + 1) * wc
    return top * (1 - wr) + bottom * wr


def clamp_min(x: Tensor, *, min: float) -> Tensor:  # noqa: A002 - mirrors torch naming
    return torch.clamp_min(x, min)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "avg_pool2": avg_pool2,
    "instance_norm": instance_norm,
    "logsumexp": logsumexp,
    "reshape": reshape,
    "sum": sum_,
    "mean": mean,
    "concat": concat,
    "slice": slice_,
    "bilinear_resample": bilinear_resample,
    "clamp_min": clamp_min,
}


def forward_primitive(kind: str, *inputs: Tensor, **attrs: Any) -> Tensor:
    """Apply the primitive registered under ``kind`` to ``inputs``."""
    try:
        primitive = PRIMITIVES[kind]
    except KeyError as exc:
        raise AutodiffError(f"unknown primitive {kind!r}; known: {', '.join(sorted(PRIMITIVES))}") from exc
    return primitive(*inputs, **attrs)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for (out, in) shaped weights."""
    out = matmul(x, weight.transpose(0, 1))
    return add(out, bias) if bias is not None else out


# Gradients -----------------------------------------------------------------------


@dataclass(frozen=True)
class GradientRequest:
    output: Tensor
    wrt: Sequence[Tensor]
    create_graph: bool = False
    retain_graph: bool | None = None


def grad(request: GradientRequest) -> list[Tensor]:
    """
    Return d(output)/d(leaf) for each requested leaf.

    Leaves the output does not depend on (including tensors that do not require
    grad) receive zero gradients. With ``create_graph`` the returned tensors are
    themselves differentiable.

    Raises:
        GradientError: If the output is not a single-element tensor
    """
    output = request.output
    if output.numel() != 1:
        raise GradientError(f"gradient output must be a scalar, got shape {tuple(output.shape)}")
    wrt = list(request.wrt)
    result = [torch.zeros_like(t) for t in wrt]
    live = [k for k, t in enumerate(wrt) if t.requires_grad]
    if not output.requires_grad or not live:
        return result
    grads = torch.autograd.grad(
        output.reshape(()),
        [wrt[k] for k in live],
        create_graph=request.create_graph,
        retain_graph=request.retain_graph,
        allow_unused=True,
    )
    for k, g in zip(live, grads):
        if g is not None:
            result[k] = g
    return result


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
) -> float:
    """
    Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|)

    Raises:
        GradientError: If ``f`` evaluates to a non-finite value
    """
    base = as_tensor(x).detach().clone()
    point = base.clone().requires_grad_(True)
    value = f(point)
    if not torch.isfinite(value).all():
        raise GradientError("finite_difference_check: f is not finite at x")
    analytic = grad(GradientRequest(value, [point]))[0].detach().reshape(-1)

    worst = 0.0
    for k in range(base.numel()):
        plus = base.clone()
        plus.view(-1)[k] += step
        minus = base.clone()
        minus.view(-1)[k] -= step
        f_plus = f(plus).detach().item()
        f_minus = f(minus).detach().item()
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise GradientError(f"finite_difference_check: f is not finite near coordinate {k}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        a_k = float(analytic[k])
        worst = max(worst, abs(a_k - numeric) / max(1.0, abs(a_k)))
    return worst
