"""The simultaneous-control functional, its adjoint gradients and the CG operator.

    F(u) = 1/2 sum_nu mu(nu) |x_nu(T) - x_T|^2 + beta/2 |u|^2

Each per-parameter computation is one forward solve plus one adjoint solve
(a "coupled solve").  Expectations are reduced in ascending parameter index,
whether or not the per-parameter work ran on a thread pool, so results are
bitwise reproducible.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core_dynamics import (
    ControlSignal,
    IntegrationDivergence,
    LinearResponse,
    TimeGrid,
    l2_norm_sq,
)
from .parametric_systems import ParametricSystem

__all__ = [
    "ControlProblem",
    "SolveCounter",
    "Evaluation",
    "GradientSample",
    "evaluate",
    "value_and_gradient",
    "gradient_full",
    "gradient_single",
    "gradient_variance",
    "apply_cg_operator",
    "cg_rhs",
    "lift",
    "lift_adjoint",
]

DEFAULT_BETA = 1e-3


class SolveCounter:
    """Instrumentation: coupled (forward + adjoint) and forward-only solves."""

    def __init__(self):
        self.coupled = 0
        self.forward = 0

    def __repr__(self):
        return f"SolveCounter(coupled={self.coupled}, forward={self.forward})"


@dataclass(frozen=True, eq=False)
class ControlProblem:
    system: ParametricSystem
    x0: np.ndarray
    x_target: np.ndarray
    beta: float = DEFAULT_BETA
    grid: TimeGrid = field(default_factory=TimeGrid)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        n = self.system.n
        for name in ("x0", "x_target"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (n,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite vector of length {n}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def n_params(self) -> int:
        return len(self.system.params)

    @property
    def weights(self) -> np.ndarray:
        return self.system.params.weight_array

    def zero_control(self) -> ControlSignal:
        return ControlSignal.zeros(self.grid, self.system.m)

    def response(self, index) -> LinearResponse:
        """Cached RK4 solution operator for parameter `index`."""
        key = ("response", index)
        r = self._cache.get(key)
        if r is None:
            try:
                r = LinearResponse(self.system.matrix(index), self.system.B, self.grid)
            except IntegrationDivergence as exc:
                raise IntegrationDivergence(exc.node, index) from None
            with self._lock:
                self._cache[key] = r
        return r

    def free_terminal(self, index) -> np.ndarray:
        """y_nu(T): the uncontrolled state at T."""
        key = ("free", index)
        y = self._cache.get(key)
        if y is None:
            try:
                y = self.response(index).free_terminal(self.x0)
            except IntegrationDivergence as exc:
                raise IntegrationDivergence(exc.node, index) from None
            with self._lock:
                self._cache[key] = y
        return y


class Evaluation(NamedTuple):
    value: float
    terminal_mismatch: float  # E |x(T) - x_T|^2
    penalty: float  # beta/2 |u|^2


@dataclass(frozen=True)
class GradientSample:
    nu_index: int
    control_part: ControlSignal
    adjoint_part: ControlSignal
    combined: ControlSignal
    estimate: float = float("nan")  # F_nu(u), free by-product of the forward solve


def _check_grid(prob, u):
    if u.grid != prob.grid or u.m != prob.system.m:
        raise ValueError("control does not match the problem grid / input width")


def _map(fn, n, workers):
    if workers and workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def _terminal(prob, i, u):
    x_t = prob.free_terminal(i) + prob.response(i).control_terminal(u)
    if not np.all(np.isfinite(x_t)):
        raise IntegrationDivergence(prob.grid.n_steps, i)
    return x_t


def evaluate(prob: ControlProblem, u: ControlSignal, counter: SolveCounter | None = None, workers=None) -> Evaluation:
    _check_grid(prob, u)
    k = prob.n_params

    def one(i):
        r = _terminal(prob, i, u) - prob.x_target
        return float(r @ r)

    sq = _map(one, k, workers)
    if counter is not None:
        counter.forward += k
    mismatch = 0.0
    for w, s in zip(prob.weights, sq):
        mismatch += w * s
    penalty = 0.5 * prob.beta * l2_norm_sq(u)
    return Evaluation(0.5 * mismatch + penalty, mismatch, penalty)


def _single(prob, u, i):
    x_t = _terminal(prob, i, u)
    residual = x_t - prob.x_target
    adj = prob.response(i).adjoint(-residual)
    return residual, adj


def gradient_single(prob: ControlProblem, u: ControlSignal, nu_index: int, counter: SolveCounter | None = None) -> GradientSample:
    """Gradient of the single-realization cost: beta u - B^T p_nu."""
    _check_grid(prob, u)
    if not 0 <= nu_index < prob.n_params:
        raise IndexError(f"parameter index {nu_index} out of range [0, {prob.n_params})")
    residual, adj = _single(prob, u, nu_index)
    if counter is not None:
        counter.coupled += 1
    control_part = prob.beta * u.values
    est = 0.5 * float(residual @ residual) + 0.5 * prob.beta * l2_norm_sq(u)
    return GradientSample(
        nu_index,
        ControlSignal(prob.grid, control_part),
        ControlSignal(prob.grid, adj),
        ControlSignal(prob.grid, control_part - adj),
        est,
    )


def value_and_gradient(prob: ControlProblem, u: ControlSignal, counter: SolveCounter | None = None, workers=None):
    """(Evaluation, gradient) from one coupled solve per parameter."""
    _check_grid(prob, u)
    k = prob.n_params
    control_part = prob.beta * u.values
    parts = _map(lambda i: _single(prob, u, i), k, workers)
    if counter is not None:
        counter.coupled += k
    grad = np.zeros_like(control_part)
    mismatch = 0.0
    # mu-weighted sum of the single-parameter gradients, ascending index
    for w, (residual, adj) in zip(prob.weights, parts):
        grad += w * (control_part - adj)
        mismatch += w * float(residual @ residual)
    penalty = 0.5 * prob.beta * l2_norm_sq(u)
    return Evaluation(0.5 * mismatch + penalty, mismatch, penalty), ControlSignal(prob.grid, grad)


def gradient_full(prob: ControlProblem, u: ControlSignal, counter: SolveCounter | None = None, workers=None) -> ControlSignal:
    return value_and_gradient(prob, u, counter, workers)[1]


def gradient_variance(prob: ControlProblem, u: ControlSignal, counter: SolveCounter | None = None) -> float:
    """E|g_nu|^2 - |E g_nu|^2 in the discrete L^2 norm."""
    samples = [gradient_single(prob, u, i, counter).combined for i in range(prob.n_params)]
    second = 0.0
    mean = np.zeros_like(u.values)
    for w, g in zip(prob.weights, samples):
        second += w * l2_norm_sq(g)
        mean += w * g.values
    return second - l2_norm_sq(ControlSignal(prob.grid, mean))


def lift(prob: ControlProblem, u: ControlSignal, index: int) -> np.ndarray:
    """L_nu u = z_nu(T), the zero-initial-state response to u."""
    _check_grid(prob, u)
    return prob.response(index).control_terminal(u)


def lift_adjoint(prob: ControlProblem, q, index: int) -> ControlSignal:
    """L*_nu q = B^T p_nu with p_nu(T) = q."""
    return ControlSignal(prob.grid, prob.response(index).adjoint(np.asarray(q, dtype=float)))


def apply_cg_operator(prob: ControlProblem, u: ControlSignal, counter: SolveCounter | None = None, workers=None) -> ControlSignal:
    """(beta I + E[L* L]) u."""
    _check_grid(prob, u)
    k = prob.n_params

    def one(i):
        resp = prob.response(i)
        return resp.adjoint(resp.control_terminal(u))

    parts = _map(one, k, workers)
    if counter is not None:
        counter.coupled += k
    acc = np.zeros_like(u.values)
    for w, adj in zip(prob.weights, parts):
        acc += w * adj
    return ControlSignal(prob.grid, prob.beta * u.values + acc)


def cg_rhs(prob: ControlProblem, counter: SolveCounter | None = None, workers=None) -> ControlSignal:
    """b = -E[L*(y_nu(T) - x_T)]."""
    k = prob.n_params

    def one(i):
        return prob.response(i).adjoint(prob.x_target - prob.free_terminal(i))

    parts = _map(one, k, workers)
    if counter is not None:
        counter.coupled += k
    acc = np.zeros((prob.grid.n_nodes, prob.system.m))
    for w, adj in zip(prob.weights, parts):
        acc += w * adj
    return ControlSignal(prob.grid, acc)
