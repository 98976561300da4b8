"""Scalar minimisers for local training and server fine-tuning.

Two methods share one contract: the returned parameters are the best point
ever evaluated, so the result is never worse than the starting point.

* ``GRADIENT_FREE``: adaptive Nelder-Mead (dimension-dependent coefficients).
* ``GRADIENT_DESCENT``: fixed-step descent on central finite differences.

Both run under a hard evaluation budget of ``1 + maxiter * per_iteration``
objective calls, where ``per_iteration`` is ``dim + 2`` for Nelder-Mead and
``2 * dim + 1`` for descent. The leading 1 is the evaluation of the start
point, which is all that happens when ``maxiter == 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Objective = Callable[[np.ndarray], float]

SPREAD_TOL = 1e-8


class Method(str, enum.Enum):
    GRADIENT_FREE = "gradient_free"
    GRADIENT_DESCENT = "gradient_descent"


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method = Method.GRADIENT_FREE
    maxiter: int = 100
    seed: int = 0
    step_size: float = 0.1
    initial_simplex_scale: float = 0.5
    fd_epsilon: float = 1e-5

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if int(self.maxiter) != self.maxiter or self.maxiter < 0:
            raise OptimizerError(f"maxiter must be a non-negative integer, got {self.maxiter!r}")
        for name in ("step_size", "initial_simplex_scale", "fd_epsilon"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise OptimizerError(f"{name} must be a positive real, got {value!r}")


@dataclass
class ObjectiveTrace:
    evaluations: list[tuple[np.ndarray, float]] = field(default_factory=list)
    best_params: np.ndarray | None = None
    best_value: float = math.inf

    def record(self, params: np.ndarray, value: float) -> None:
        params = np.array(params, dtype=float)
        self.evaluations.append((params, value))
        if value < self.best_value:
            self.best_value = value
            self.best_params = params

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.evaluations]

    def best_so_far(self) -> list[float]:
        out, best = [], math.inf
        for v in self.values:
            best = min(best, v)
            out.append(best)
        return out


def evaluation_budget(method: Method, dim: int, maxiter: int) -> int:
    per_iteration = dim + 2 if Method(method) is Method.GRADIENT_FREE else 2 * dim + 1
    return 1 + maxiter * per_iteration


class _Counted:
    def __init__(self, objective: Objective, trace: ObjectiveTrace, budget: int):
        self.objective = objective
        self.trace = trace
        self.budget = budget
        self.calls = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.calls

    def __call__(self, params: np.ndarray) -> float:
        self.calls += 1
        value = float(self.objective(np.array(params, dtype=float)))
        if math.isnan(value):
            value = math.inf
        self.trace.record(params, value)
        return value


def finite_diff_gradient(objective: Objective, theta: Sequence[float], fd_epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if not fd_epsilon > 0:
        raise OptimizerError(f"fd_epsilon must be positive, got {fd_epsilon}")
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = fd_epsilon
        hi = float(objective(theta + step))
        lo = float(objective(theta - step))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise OptimizerError(f"non-finite objective while differentiating coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * fd_epsilon)
    return grad


def minimize(objective: Objective, init: Sequence[float], cfg: OptimizerConfig) -> tuple[np.ndarray, ObjectiveTrace]:
    x0 = np.array(init, dtype=float).reshape(-1)
    trace = ObjectiveTrace()
    f = _Counted(objective, trace, evaluation_budget(cfg.method, x0.size, cfg.maxiter))
    f0 = f(x0)
    if not math.isfinite(f0):
        raise OptimizerError(f"objective is not finite at the initial point ({f0})")
    if cfg.maxiter > 0 and x0.size > 0:
        if cfg.method is Method.GRADIENT_FREE:
            _nelder_mead(f, x0, f0, cfg)
        else:
            _gradient_descent(f, x0, cfg)
    return np.array(trace.best_params), trace


def _gradient_descent(f: _Counted, x0: np.ndarray, cfg: OptimizerConfig) -> None:
    theta = x0.copy()
    dim = theta.size
    for _ in range(cfg.maxiter):
        if f.remaining < 2 * dim + 1:
            break
        grad = finite_diff_gradient(f, theta, cfg.fd_epsilon)
        theta = theta - cfg.step_size * grad
        f(theta)


def _nelder_mead(f: _Counted, x0: np.ndarray, f0: float, cfg: OptimizerConfig) -> None:
    dim = x0.size
    # Gao & Han adaptive coefficients
    alpha = 1.0
    gamma = 1.0 + 2.0 / dim
    rho = 0.75 - 1.0 / (2.0 * dim)
    sigma = 1.0 - 1.0 / dim if dim > 1 else 0.5

    simplex = [x0]
    values = [f0]
    for i in range(dim):
        if f.remaining < 1:
            return
        vertex = x0.copy()
        vertex[i] += cfg.initial_simplex_scale
        simplex.append(vertex)
        values.append(f(vertex))
    pts = np.array(simplex)
    vals = np.array(values)

    for _ in range(cfg.maxiter):
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        if vals[-1] - vals[0] < SPREAD_TOL:
            return
        if f.remaining < 1:
            return
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]

        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        if fr < vals[0]:
            if f.remaining < 1:
                pts[-1], vals[-1] = xr, fr
                continue
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue

        if f.remaining < 1:
            return
        if fr < vals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = f(xc)
            accept = fc <= fr
        else:
            xc = centroid - rho * (centroid - worst)
            fc = f(xc)
            accept = fc < vals[-1]
        if accept:
            pts[-1], vals[-1] = xc, fc
            continue

        # shrink toward the best vertex
        for j in range(1, dim + 1):
            if f.remaining < 1:
                return
            pts[j] = pts[0] + sigma * (pts[j] - pts[0])
            vals[j] = f(pts[j])
