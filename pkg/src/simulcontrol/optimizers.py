"""GD, CG, SGD and CSG drivers with learning-rate schedules and solve accounting.

Accounting convention (checked by the counters in every report):

* GD: one full gradient pass per iteration, ``coupled_solves = iterations * |K|``.
  An iteration evaluates the gradient at the current iterate and either
  stops or takes a step, so a run that is already optimal reports one
  iteration and returns ``u0`` unchanged.
* CG: one setup pass giving the initial residual, then one operator
  application per iteration, ``coupled_solves = (iterations + 1) * |K|``.
* SGD / CSG: one single-parameter coupled solve per iteration.

The default step size ``1 / lambda_max`` of the CG operator comes from power
iteration; those solves are reported separately as ``setup_solves``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core_dynamics import ControlSignal, l2_inner, l2_norm_sq
from .objective import (
    ControlProblem,
    SolveCounter,
    apply_cg_operator,
    evaluate,
    gradient_single,
    value_and_gradient,
)
from .parametric_systems import ParameterSet

__all__ = [
    "Constant",
    "RobbinsMonro",
    "Adaptive",
    "StopRule",
    "RunReport",
    "CsgState",
    "SolverDivergence",
    "CGBreakdown",
    "estimate_lambda_max",
    "default_step",
    "csg_weights",
    "run_gd",
    "run_cg",
    "run_sgd",
    "run_csg",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class Constant:
    eta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")

    def at(self, k):
        return self.eta


@dataclass(frozen=True)
class RobbinsMonro:
    """eta_k = a / (b + k): sum diverges, sum of squares converges."""

    a: float
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Robbins-Monro rate needs a > 0 and b > 0")

    def at(self, k):
        return self.a / (self.b + k)


@dataclass(frozen=True)
class Adaptive:
    """Fixed step, multiplied by `shrink` whenever a window of F-estimates stalls."""

    eta0: float
    shrink: float = 0.5
    window: int = 10

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class StopRule:
    tol: float = 1e-4
    max_iter: int = 10_000
    kind: str = "distance_bound"  # or "grad_norm_sq", "update_window"
    window: int = 10

    def __post_init__(self):
        if not self.tol >= 0:
            raise ValueError("tol must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.kind not in ("distance_bound", "grad_norm_sq", "update_window"):
            raise ValueError(f"unknown stop rule {self.kind!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def _gradient_measure(prob, stop, g):
    # |u - u_hat| <= |grad F(u)| / beta because the CG operator is >= beta I
    gn = l2_norm_sq(g)
    return gn / prob.beta**2 if stop.kind == "distance_bound" else gn


@dataclass
class RunReport:
    algorithm: str
    iterations: int
    coupled_solves: int
    setup_solves: int
    n_params: int
    functional_history: list
    history_is_estimate: bool
    measure_history: list
    solves_history: list
    control: ControlSignal
    objective: float
    terminal_mismatch: float
    converged: bool
    seed: int | None = None
    final_rate: float | None = None
    wall_ms: list = field(default_factory=list, repr=False)

    def to_dict(self, include_control=True):
        """Deterministic summary; wall times are left out on purpose."""
        d = {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "coupled_solves": self.coupled_solves,
            "setup_solves": self.setup_solves,
            "n_params": self.n_params,
            "converged": self.converged,
            "seed": self.seed,
            "final_rate": self.final_rate,
            "objective": self.objective,
            "terminal_mismatch": self.terminal_mismatch,
            "history_is_estimate": self.history_is_estimate,
            "functional_history": list(self.functional_history),
            "measure_history": list(self.measure_history),
            "solves_history": list(self.solves_history),
        }
        if include_control:
            d["control"] = self.control.values.tolist()
        return d

    def expected_solves(self) -> int:
        k = self.n_params
        return {
            "gd": self.iterations * k,
            "cg": (self.iterations + 1) * k,
            "sgd": self.iterations,
            "csg": self.iterations,
        }[self.algorithm]


class SolverDivergence(RuntimeError):
    """The functional blew up; `report` holds the partial run."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class CGBreakdown(RuntimeError):
    pass


class _Recorder:
    def __init__(self, algorithm, prob, counter):
        self.algorithm = algorithm
        self.prob = prob
        self.counter = counter
        self.start = counter.coupled
        self.f, self.measure, self.solves, self.wall = [], [], [], []
        self.t0 = time.perf_counter()

    def record(self, f, measure):
        self.f.append(float(f))
        self.measure.append(float(measure))
        self.solves.append(self.counter.coupled - self.start)
        self.wall.append((time.perf_counter() - self.t0) * 1e3)

    def report(self, iterations, u, converged, setup, estimate=False, seed=None, rate=None):
        used = self.counter.coupled - self.start
        final = evaluate(self.prob, u)
        return RunReport(
            self.algorithm, iterations, used, setup, self.prob.n_params,
            self.f, estimate, self.measure, self.solves, u,
            final.value, final.terminal_mismatch, converged, seed, rate, self.wall,
        )


def estimate_lambda_max(prob: ControlProblem, steps=20, counter=None, workers=None) -> float:
    """Largest eigenvalue of the CG operator by power iteration."""
    v = ControlSignal(prob.grid, np.random.default_rng(0).standard_normal((prob.grid.n_nodes, prob.system.m)))
    v = (1.0 / np.sqrt(l2_norm_sq(v))) * v
    lam = prob.beta
    for _ in range(steps):
        w = apply_cg_operator(prob, v, counter, workers)
        lam = l2_inner(v, w)
        norm = np.sqrt(l2_norm_sq(w))
        if norm == 0:
            break
        v = (1.0 / norm) * w
    return float(lam)


def default_step(prob: ControlProblem, counter=None, workers=None) -> float:
    """1 / (beta + lambda_max(E[L* L])), cached on the problem."""
    key = ("default_step",)
    eta = prob._cache.get(key)
    if eta is None:
        lam = estimate_lambda_max(prob, counter=counter, workers=workers)
        # lam already contains beta
        eta = 1.0 / lam
        prob._cache[key] = eta
        prob._cache[("default_step_solves",)] = counter.coupled if counter else 0
    return eta


def _setup(prob, u0):
    u = prob.zero_control() if u0 is None else u0
    if u.grid != prob.grid or u.m != prob.system.m:
        raise ValueError("u0 does not match the problem grid / input width")
    return u


def _resolve_rate(prob, rate, default_kind, workers):
    if rate is None or rate == "auto":
        eta = default_step(prob, SolveCounter(), workers)
        rate = Adaptive(eta) if default_kind == "adaptive" else Constant(eta)
        # cost of the estimate, reported the same way whether or not it was cached
        return rate, prob._cache[("default_step_solves",)]
    return rate, 0


def _diverged(f, f0):
    return not np.isfinite(f) or (f > DIVERGENCE_FACTOR * f0 and f > f0)


def run_gd(prob: ControlProblem, u0=None, rate=None, stop: StopRule | None = None, workers=None) -> RunReport:
    stop = stop or StopRule()
    u = _setup(prob, u0)
    rate, setup = _resolve_rate(prob, rate, "constant", workers)
    if isinstance(rate, Adaptive):
        raise ValueError("GD takes a Constant or RobbinsMonro rate")
    counter = SolveCounter()
    rec = _Recorder("gd", prob, counter)
    converged = False
    f0 = None
    k = 0
    while k < stop.max_iter:
        ev, g = value_and_gradient(prob, u, counter, workers)
        gn = _gradient_measure(prob, stop, g)
        rec.record(ev.value, gn)
        k += 1
        f0 = ev.value if f0 is None else f0
        if _diverged(ev.value, f0):
            raise SolverDivergence(
                f"GD diverged at iteration {k}: F={ev.value:g} vs initial {f0:g}",
                rec.report(k, u, False, setup),
            )
        if gn < stop.tol:
            converged = True
            break
        u = u - rate.at(k - 1) * g
    return rec.report(k, u, converged, setup, rate=rate.at(k - 1))


def run_cg(prob: ControlProblem, u0=None, stop: StopRule | None = None, workers=None) -> RunReport:
    """Conjugate gradients on (beta I + E[L*L]) u = b in the trapezoid inner product."""
    stop = stop or StopRule()
    u = _setup(prob, u0)
    counter = SolveCounter()
    rec = _Recorder("cg", prob, counter)
    # setup pass: r0 = b - A u0 = -grad F(u0)
    ev0, g0 = value_and_gradient(prob, u, counter, workers)
    r = -g0
    d = r
    rr = l2_norm_sq(r)
    rec.record(ev0.value, _gradient_measure(prob, stop, r))
    # F(u0 + delta) = F(u0) + <g0, delta> + 1/2 <A delta, delta>
    delta = prob.zero_control()
    a_delta = prob.zero_control()
    k = 0
    while _gradient_measure(prob, stop, r) >= stop.tol and k < stop.max_iter:
        ad = apply_cg_operator(prob, d, counter, workers)
        dad = l2_inner(d, ad)
        if not dad > 0:
            raise CGBreakdown(f"d^T A d = {dad:g} <= 0 at iteration {k}; the CG operator is not positive definite")
        alpha = rr / dad
        u = u + alpha * d
        delta = delta + alpha * d
        a_delta = a_delta + alpha * ad
        r = r - alpha * ad
        rr_new = l2_norm_sq(r)
        d = r + (rr_new / rr) * d
        rr = rr_new
        k += 1
        f = ev0.value + l2_inner(g0, delta) + 0.5 * l2_inner(a_delta, delta)
        rec.record(f, _gradient_measure(prob, stop, r))
    return rec.report(k, u, _gradient_measure(prob, stop, r) < stop.tol, 0)


def _sampler(params: ParameterSet, seed):
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(params.weight_array)
    cdf /= cdf[-1]
    last = len(cdf) - 1

    def draw():
        return min(int(np.searchsorted(cdf, rng.random(), side="right")), last)

    return draw


class _StochasticLoop:
    """Shared bookkeeping for SGD and CSG: rate schedule, windows, stopping."""

    def __init__(self, algorithm, prob, rate, stop, seed, setup):
        self.prob, self.rate, self.stop, self.seed, self.setup = prob, rate, stop, seed, setup
        self.counter = SolveCounter()
        self.rec = _Recorder(algorithm, prob, self.counter)
        self.draw = _sampler(prob.system.params, seed)
        self.eta = rate.eta0 if isinstance(rate, Adaptive) else None
        self.updates = []
        self.window_means = []
        self.algorithm = algorithm

    def step_size(self, k):
        return self.eta if self.eta is not None else self.rate.at(k)

    def after_step(self, k, u, estimate, update_sq):
        """Record iteration k; returns True when the stop rule fires."""
        rec, stop = self.rec, self.stop
        self.updates.append(update_sq)
        rec.record(estimate, update_sq)
        w = self.rate.window if isinstance(self.rate, Adaptive) else stop.window
        if len(rec.f) % w == 0:
            mean = float(np.mean(rec.f[-w:]))
            if self.window_means and _diverged(mean, self.window_means[0]):
                raise SolverDivergence(
                    f"{self.algorithm.upper()} diverged at iteration {k + 1}: "
                    f"window mean {mean:g} vs first window {self.window_means[0]:g}",
                    rec.report(k + 1, u, False, self.setup, True, self.seed, self.step_size(k)),
                )
            if isinstance(self.rate, Adaptive) and self.window_means and mean >= self.window_means[-1]:
                self.eta *= self.rate.shrink
            self.window_means.append(mean)
        if not np.isfinite(estimate):
            raise SolverDivergence(
                f"{self.algorithm.upper()} produced a non-finite estimate at iteration {k + 1}",
                rec.report(k + 1, u, False, self.setup, True, self.seed, self.step_size(k)),
            )
        if stop.kind == "update_window":
            return len(self.updates) >= stop.window and float(np.mean(self.updates[-stop.window:])) < stop.tol
        return update_sq < stop.tol


def run_sgd(prob: ControlProblem, u0=None, rate=None, stop: StopRule | None = None, seed=0) -> RunReport:
    stop = stop or StopRule(kind="update_window")
    u = _setup(prob, u0)
    rate, setup = _resolve_rate(prob, rate, "adaptive", None)
    loop = _StochasticLoop("sgd", prob, rate, stop, seed, setup)
    converged = False
    k = 0
    while k < stop.max_iter:
        i = loop.draw()
        sample = gradient_single(prob, u, i, loop.counter)
        step = loop.step_size(k) * sample.combined
        u = u - step
        done = loop.after_step(k, u, sample.estimate, l2_norm_sq(step))
        k += 1
        if done:
            converged = True
            break
    return loop.rec.report(k, u, converged, setup, True, seed, loop.step_size(k - 1))


def _nearest_weights(values, weights, sampled, recency):
    """Voronoi masses of the sampled points; ties go to the most recent."""
    values = np.asarray(values, dtype=float)
    sampled = np.asarray(sampled, dtype=float)
    recency = np.asarray(recency)
    dist = np.abs(values[:, None] - sampled[None, :])
    dmin = dist.min(axis=1, keepdims=True)
    scale = max(1.0, float(np.abs(values).max()))
    candidates = dist <= dmin + 1e-12 * scale
    owner = np.where(candidates, recency[None, :], np.iinfo(np.int64).min).argmax(axis=1)
    alpha = np.zeros(len(sampled))
    for j, w in zip(owner, weights):
        alpha[j] += w
    return alpha


def csg_weights(sampled, params: ParameterSet) -> np.ndarray:
    """Nearest-neighbour weights for a CSG history.

    `sampled` is a sequence of (parameter value, iteration) pairs.  Each point
    of the parameter set gives its mass to the nearest sampled value; among
    equidistant or repeated samples the latest iteration wins, so superseded
    entries get weight zero.
    """
    sampled = list(sampled)
    if not sampled:
        raise ValueError("CSG weights need at least one sample")
    vals = [float(v) for v, _ in sampled]
    its = [int(t) for _, t in sampled]
    if len(set(its)) != len(its):
        raise ValueError("iteration tags must be unique")
    return _nearest_weights(params.values, params.weights, vals, its)


@dataclass
class CsgState:
    """Sample history of a CSG run.

    Only the latest gradient per parameter index is kept: an older sample of
    the same parameter always loses the recency tie-break and has weight 0.
    """

    indices: list = field(default_factory=list)
    latest: dict = field(default_factory=dict)  # index -> (iteration, gradient values)
    weights: np.ndarray | None = None

    def add(self, k, index, gradient):
        self.indices.append(index)
        self.latest[index] = (k, gradient)

    def aggregate(self, params: ParameterSet, grid):
        order = sorted(self.latest)
        alpha = _nearest_weights(
            params.values, params.weights,
            [params.values[i] for i in order], [self.latest[i][0] for i in order],
        )
        self.weights = alpha
        g = np.zeros_like(self.latest[order[0]][1])
        for a, i in zip(alpha, order):
            if a:
                g += a * self.latest[i][1]
        return ControlSignal(grid, g)


def run_csg(prob: ControlProblem, u0=None, rate=None, stop: StopRule | None = None, seed=0, state: CsgState | None = None) -> RunReport:
    stop = stop or StopRule(kind="update_window")
    u = _setup(prob, u0)
    rate, setup = _resolve_rate(prob, rate, "constant", None)
    loop = _StochasticLoop("csg", prob, rate, stop, seed, setup)
    state = CsgState() if state is None else state
    params = prob.system.params
    converged = False
    k = 0
    while k < stop.max_iter:
        i = loop.draw()
        sample = gradient_single(prob, u, i, loop.counter)
        state.add(k, i, sample.combined.values)
        direction = state.aggregate(params, prob.grid)
        step = loop.step_size(k) * direction
        u = u - step
        done = loop.after_step(k, u, sample.estimate, l2_norm_sq(step))
        k += 1
        if done:
            converged = True
            break
    return loop.rec.report(k, u, converged, setup, True, seed, loop.step_size(k - 1))
