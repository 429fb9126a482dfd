"""Sanity checks run against synthetic sets before they are optimised or saved."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import torch

from .kkt import SyntheticSet
from .util import DsvDistillError


class DistillError(DsvDistillError):
    """Raised when a synthesis run produces an invalid state."""


@dataclass
class CheckMessage:
    severity: str
    message: str


@dataclass
class CheckResult:
    passed: bool
    messages: List[CheckMessage] = field(default_factory=list)

    def add(self, severity: str, message: str) -> None:
        self.messages.append(CheckMessage(severity=severity, message=message))
        if severity == "error":
            self.passed = False

    def errors(self) -> List[str]:
        return [msg.message for msg in self.messages if msg.severity == "error"]


def _non_finite(tensor: torch.Tensor) -> int:
    return int((~torch.isfinite(tensor.detach())).sum())


def run_checks(synthetic: SyntheticSet, *, ipc: int | None = None) -> CheckResult:
    """
    Inspect a synthetic set.

    Errors: non-finite pixels or multipliers, negative multipliers.
    Warnings: classes with no samples, classes whose size differs from ``ipc``,
    and all-zero multiplier vectors (the stationarity term then has no direction).
    """
    result = CheckResult(passed=True)

    bad_pixels = _non_finite(synthetic.images)
    if bad_pixels:
        result.add("error", f"{bad_pixels} non-finite pixel value(s)")
    bad_lambdas = _non_finite(synthetic.lambdas)
    if bad_lambdas:
        result.add("error", f"{bad_lambdas} non-finite multiplier(s)")

    negative = int((synthetic.lambdas.detach() < 0).sum())
    if negative:
        result.add("error", f"{negative} negative multiplier(s); dual feasibility requires lambda >= 0")

    counts = torch.bincount(synthetic.labels, minlength=synthetic.num_classes)
    for label, count in enumerate(counts.tolist()):
        if count == 0:
            result.add("warning", f"class {label} has no synthetic samples")
        elif ipc is not None and count != ipc:
            result.add("warning", f"class {label} has {count} samples (expected {ipc})")

    if synthetic.n and not bad_lambdas and float(synthetic.lambdas.detach().abs().sum()) == 0.0:
        result.add("warning", "all multipliers are zero")

    return result


def enforce_dual_feasibility(synthetic: SyntheticSet, step: int) -> None:
    """Post-step hook: every multiplier must be finite and >= 0."""
    lambdas = synthetic.lambdas.detach()
    if _non_finite(lambdas) or bool((lambdas < 0).any()):
        worst = float(lambdas.min()) if lambdas.numel() else float("nan")
        raise DistillError(f"dual feasibility violated after step {step}: min lambda {worst}")
