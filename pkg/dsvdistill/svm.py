"""
Hard-margin linear SVM by sequential minimal optimisation.

The dual ``max sum(a) - 1/2 a^T Q a`` subject to ``sum(a_i y_i) = 0`` and
``a_i >= 0`` is solved two coordinates at a time, choosing the pair by the
second-order working-set rule. With no upper bound on the multipliers the
solver only terminates on separable data; diverging multipliers are reported
as non-separable input.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .logging import get_logger
from .util import DsvDistillError

logger = get_logger("svm")

TAU = 1e-12
DEFAULT_TOL = 1e-10
MAX_ITER = 200_000
DIVERGENCE = 1e10


class SvmError(DsvDistillError):
    """Raised for non-separable or malformed inputs."""


@dataclass(frozen=True)
class SvmSolution:
    w: np.ndarray
    b: float
    alpha: np.ndarray
    iterations: int = 0

    def support_indices(self, tol: float = 1e-8) -> np.ndarray:
        scale = max(1.0, float(self.alpha.max())) if self.alpha.size else 1.0
        return np.flatnonzero(self.alpha > tol * scale)

    def decision(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.w + self.b

    @property
    def objective(self) -> float:
        """Primal objective ``||w||^2 / 2``."""
        return 0.5 * float(self.w @ self.w)


def _validate(points: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise SvmError(f"expected (n, d) points and n labels, got {x.shape} and {y.shape}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SvmError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SvmError("both classes must be present")
    return x, y


def signed_labels(labels: np.ndarray) -> np.ndarray:
    """Map {0, 1} class indices to {-1, +1}."""
    return np.where(np.asarray(labels) > 0, 1.0, -1.0)


def solve_svm(points: np.ndarray, labels: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> SvmSolution:
    """
    Maximum-margin separator of ``points`` with labels in {-1, +1}.

    Raises:
        SvmError: If the data is not linearly separable
    """
    x, y = _validate(points, labels)
    n = x.shape[0]
    kernel = x @ x.T
    alpha = np.zeros(n)
    grad = np.ones(n)  # d(dual)/d(alpha)
    diag = np.diag(kernel)

    for iteration in range(max_iter):
        yg = y * grad
        up = (y > 0) | (alpha > 0)
        low = (y < 0) | (alpha > 0)
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        gap_i = yg[i]
        candidates = np.flatnonzero(low & (yg < gap_i))
        if candidates.size == 0 or gap_i - yg[candidates].min() <= tol:
            break
        b_it = gap_i - yg[candidates]
        a_it = diag[i] + diag[candidates] - 2.0 * kernel[i, candidates]
        a_it = np.where(a_it > 0, a_it, TAU)
        j = int(candidates[np.argmin(-(b_it**2) / a_it)])

        curvature = max(diag[i] + diag[j] - 2.0 * kernel[i, j], TAU)
        step = (gap_i - yg[j]) / curvature
        # only the negative-class side of each pair is bounded below by zero
        if y[i] < 0:
            step = min(step, alpha[i])
        if y[j] > 0:
            step = min(step, alpha[j])

        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        alpha[i] = max(alpha[i], 0.0)
        alpha[j] = max(alpha[j], 0.0)
        grad += step * y * (kernel[j] - kernel[i])
        if alpha.sum() > DIVERGENCE:
            raise SvmError(f"data is not linearly separable (multipliers diverged after {iteration + 1} iterations)")
    else:
        raise SvmError(f"data is not linearly separable (no convergence within {max_iter} iterations)")

    w = (alpha * y) @ x
    support = alpha > 1e-8 * max(1.0, float(alpha.max()))
    b = float(np.mean(y[support] - x[support] @ w))
    logger.debug("SMO converged after %d iterations, %d support vectors", iteration, int(support.sum()))
    return SvmSolution(w=w, b=b, alpha=alpha, iterations=iteration)


@dataclass(frozen=True)
class KktResiduals:
    primal: float
    dual: float
    complementary: float
    stationarity: float

    def worst(self) -> float:
        return max(self.primal, self.dual, self.complementary, self.stationarity)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.worst() <= tol


def kkt_residuals(solution: SvmSolution, points: np.ndarray, labels: np.ndarray) -> KktResiduals:
    """Largest violation of each hard-margin KKT condition."""
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    functional = y * (x @ solution.w + solution.b)
    alpha = solution.alpha
    return KktResiduals(
        primal=float(max(0.0, np.max(1.0 - functional))),
        dual=float(max(0.0, np.max(-alpha))),
        complementary=float(np.max(np.abs(alpha * (functional - 1.0)))),
        stationarity=float(np.linalg.norm(solution.w - (alpha * y) @ x)),
    )


def enumerate_svm(points: np.ndarray, labels: np.ndarray, max_support: int = 3) -> SvmSolution:
    """
    Brute-force hard-margin solution over candidate support-vector subsets.

    Every subset of up to ``max_support`` points with both classes is made
    active (``y_i (w.x_i + b) = 1``) and solved in closed form; the feasible
    candidate with non-negative multipliers and the smallest ``||w||`` wins.
    Exponential in ``max_support``; meant as a reference for small sets.
    """
    x, y = _validate(points, labels)
    best: SvmSolution | None = None
    for size in range(2, max_support + 1):
        for subset in itertools.combinations(range(x.shape[0]), size):
            idx = np.array(subset)
            ys = y[idx]
            if np.all(ys > 0) or np.all(ys < 0):
                continue
            gram = (ys[:, None] * ys[None, :]) * (x[idx] @ x[idx].T)
            system = np.zeros((size + 1, size + 1))
            system[:size, :size] = gram
            system[:size, size] = ys
            system[size, :size] = ys
            rhs = np.concatenate([np.ones(size), [0.0]])
            solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
            sub_alpha, b = solution[:size], float(solution[size])
            if np.any(sub_alpha < -1e-9):
                continue
            w = (sub_alpha * ys) @ x[idx]
            if np.any(y * (x @ w + b) < 1.0 - 1e-9):
                continue
            if best is None or 0.5 * float(w @ w) < best.objective:
                alpha = np.zeros(x.shape[0])
                alpha[idx] = np.clip(sub_alpha, 0.0, None)
                best = SvmSolution(w=w, b=b, alpha=alpha)
    if best is None:
        raise SvmError("no feasible support-vector subset found")
    return best
