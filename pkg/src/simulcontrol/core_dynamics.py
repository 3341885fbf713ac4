"""Time grids, fixed-step RK4 integration and discrete L^2 calculus.

Controls are stored as nodal samples on a uniform grid and interpreted as
piecewise-linear in time.  Inner products use the composite trapezoid rule.

The forward scheme is classical RK4 with the control evaluated by linear
interpolation at the stage times.  Because the dynamics are linear and
time-invariant, one RK4 step is an affine map

    x_{k+1} = R x_k + G0 u_k + G1 u_{k+1}

and `LinearResponse` precomputes the resulting control-to-terminal-state
map.  Its transpose, weighted by the trapezoid weights, is the exact
discrete adjoint, so gradients and the CG operator are exact for the
discretized functional.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "TimeGrid",
    "ControlSignal",
    "Trajectory",
    "IntegrationDivergence",
    "LinearResponse",
    "as_matrix",
    "integrate_forward",
    "integrate_adjoint",
    "adjoint_control_samples",
    "propagate_exact",
    "l2_inner",
    "l2_norm_sq",
]


class IntegrationDivergence(ArithmeticError):
    """A non-finite value appeared during time integration."""

    def __init__(self, node, nu_index=None):
        self.node = node
        self.nu_index = nu_index
        where = f"node {node}"
        if nu_index is not None:
            where += f" (parameter index {nu_index})"
        super().__init__(f"integration diverged at {where}")


@dataclass(frozen=True)
class TimeGrid:
    t_final: float = 1.0
    n_steps: int = 200

    def __post_init__(self):
        if not (np.isfinite(self.t_final) and self.t_final > 0):
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError(f"n_steps must be an integer >= 2, got {self.n_steps}")

    @property
    def step(self) -> float:
        return self.t_final / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @functools.cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_nodes) * self.step
        t[-1] = self.t_final
        t.setflags(write=False)
        return t

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights at the nodes."""
        w = np.full(self.n_nodes, self.step)
        w[0] = w[-1] = 0.5 * self.step
        w.setflags(write=False)
        return w


def as_matrix(a, rows=None, cols=None, name="matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array, checking the shape if given."""
    m = np.array(a, dtype=float)
    if m.ndim == 1 and cols == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ValueError(f"{name} has shape {m.shape}, expected ({rows}, {cols})")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _frozen(values, grid, name):
    v = np.array(values, dtype=float)
    if v.ndim == 1:
        v = v.reshape(-1, 1)
    if v.ndim != 2 or v.shape[0] != grid.n_nodes:
        raise ValueError(
            f"{name} needs {grid.n_nodes} samples on this grid, got array of shape {v.shape}"
        )
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite samples")
    v.setflags(write=False)
    return v


class ControlSignal:
    """Nodal samples of an M-component control, shape (n_steps + 1, M)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values):
        self.grid = grid
        self.values = _frozen(values, grid, "control")

    @classmethod
    def zeros(cls, grid, m=1):
        return cls(grid, np.zeros((grid.n_nodes, m)))

    @classmethod
    def constant(cls, grid, value, m=1):
        return cls(grid, np.full((grid.n_nodes, m), float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.array([np.atleast_1d(fn(t)) for t in grid.nodes], dtype=float))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def _check(self, other):
        if not isinstance(other, ControlSignal):
            return NotImplemented
        if other.grid != self.grid or other.values.shape != self.values.shape:
            raise ValueError("controls live on different grids or have different widths")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return ControlSignal(self.grid, self.values + other.values)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return ControlSignal(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return ControlSignal(self.grid, scalar * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return ControlSignal(self.grid, -self.values)

    def __repr__(self):
        return f"ControlSignal(n_nodes={self.grid.n_nodes}, m={self.m})"


class Trajectory:
    """Nodal samples of an N-component state or adjoint path."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values):
        self.grid = grid
        self.values = _frozen(values, grid, "trajectory")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def __repr__(self):
        return f"Trajectory(n_nodes={self.grid.n_nodes}, n={self.values.shape[1]})"


def _rk4_step(a, x, b0, bm, b1, h):
    # works on vectors (N,) and on stacks of columns (N, k)
    k1 = a @ x + b0
    k2 = a @ (x + 0.5 * h * k1) + bm
    k3 = a @ (x + 0.5 * h * k2) + bm
    k4 = a @ (x + h * k3) + b1
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _first_bad_row(values):
    bad = ~np.all(np.isfinite(values), axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def _sweep(a, x0, drive, grid):
    n, h = grid.n_steps, grid.step
    xs = np.empty((grid.n_nodes, x0.shape[0]))
    xs[0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            if drive is None:
                xs[k + 1] = _rk4_step(a, xs[k], 0.0, 0.0, 0.0, h)
            else:
                b0, b1 = drive[k], drive[k + 1]
                xs[k + 1] = _rk4_step(a, xs[k], b0, 0.5 * (b0 + b1), b1, h)
    bad = _first_bad_row(xs)
    if bad is not None:
        raise IntegrationDivergence(bad)
    return xs


def integrate_forward(A, B, u: ControlSignal, x0, grid: TimeGrid | None = None) -> Trajectory:
    """Integrate x' = A x + B u(t) from x(0) = x0 with classical RK4."""
    grid = u.grid if grid is None else grid
    if grid != u.grid:
        raise ValueError("control grid does not match the integration grid")
    A = as_matrix(A, name="A")
    n = A.shape[0]
    A = as_matrix(A, n, n, name="A")
    B = as_matrix(B, n, u.m, name="B")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {n}")
    drive = u.values @ B.T
    return Trajectory(grid, _sweep(A, x0, drive, grid))


def integrate_adjoint(A, p_T, grid: TimeGrid) -> Trajectory:
    """Solve p' = -A^T p backward from p(T) = p_T with the same RK4 scheme."""
    A = as_matrix(A, name="A")
    n = A.shape[0]
    A = as_matrix(A, n, n, name="A")
    p_T = np.asarray(p_T, dtype=float).reshape(-1)
    if p_T.shape != (n,) or not np.all(np.isfinite(p_T)):
        raise ValueError(f"p_T must be a finite vector of length {n}")
    reversed_path = _sweep(A.T, p_T, None, grid)
    return Trajectory(grid, reversed_path[::-1])


def _input_gains(A, B, h):
    """One-step input matrices G0, G1 of the RK4 scheme with linear interpolation."""
    zero = np.zeros_like(B)
    g0 = _rk4_step(A, zero, B, 0.5 * B, zero, h)
    g1 = _rk4_step(A, zero, zero, 0.5 * B, B, h)
    return g0, g1


def adjoint_control_samples(A, B, p: Trajectory) -> ControlSignal:
    """Map an adjoint path to the control-space samples of B^T p.

    The samples are the discrete adjoint of the RK4 input map with respect to
    the trapezoid inner product, so that l2_inner(zeta, result) equals
    <z(T), p(T)> for the z-system driven by zeta, to rounding error.
    """
    grid = p.grid
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = as_matrix(B, n, None, name="B")
    g0, g1 = _input_gains(A, B, grid.step)
    pv = p.values
    s = np.zeros((grid.n_nodes, B.shape[1]))
    s[:-1] += pv[1:] @ g0
    s[1:] += pv[1:] @ g1
    return ControlSignal(grid, s / grid.weights[:, None])


class LinearResponse:
    """Precomputed RK4 solution operator of x' = A x + B u on a fixed grid.

    terminal(x0, u) gives the RK4 value x(T); adjoint(q) gives the
    control-space samples of B^T p for the adjoint path with p(T) = q.
    """

    def __init__(self, A, B, grid: TimeGrid):
        A = as_matrix(A, name="A")
        n = A.shape[0]
        self.A = as_matrix(A, n, n, name="A")
        self.B = as_matrix(B, n, None, name="B")
        self.grid = grid
        self.n = n
        self.m = self.B.shape[1]
        h, steps = grid.step, grid.n_steps
        g0, g1 = _input_gains(self.A, self.B, h)
        gain = np.zeros((grid.n_nodes, n, self.m))
        v = np.hstack([g0, g1])
        zero = np.zeros_like(v)
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(steps):
                # v = R^s [G0 G1]
                gain[steps - 1 - s] += v[:, : self.m]
                gain[steps - s] += v[:, self.m :]
                v = _rk4_step(self.A, v, zero, zero, zero, h)
        if not np.all(np.isfinite(gain)):
            raise IntegrationDivergence(grid.n_steps)
        self._gain = np.ascontiguousarray(gain.transpose(1, 0, 2).reshape(n, -1))
        self._inv_weights = 1.0 / grid.weights[:, None]

    def free_terminal(self, x0) -> np.ndarray:
        """Homogeneous solution at T, i.e. the y-system."""
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return _sweep(self.A, x0, None, self.grid)[-1]

    def control_terminal(self, u: ControlSignal) -> np.ndarray:
        """z(T) for z' = A z + B u, z(0) = 0."""
        return self._gain @ u.values.reshape(-1)

    def adjoint(self, q) -> np.ndarray:
        """Samples of B^T p, shape (n_nodes, M), for p' = -A^T p, p(T) = q."""
        return (self._gain.T @ q).reshape(self.grid.n_nodes, self.m) * self._inv_weights


def propagate_exact(A, B, u: ControlSignal, x0, grid: TimeGrid | None = None, hold="zero") -> Trajectory:
    """Exact stepwise propagation through block-matrix exponentials.

    hold="zero" treats u as constant on each interval (left sample);
    hold="linear" uses the piecewise-linear interpolant.
    """
    grid = u.grid if grid is None else grid
    A = as_matrix(A, name="A")
    n = A.shape[0]
    A = as_matrix(A, n, n, name="A")
    B = as_matrix(B, n, u.m, name="B")
    m, h = u.m, grid.step
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    us = u.values
    xs = np.empty((grid.n_nodes, n))
    xs[0] = x0
    if hold == "zero":
        block = np.zeros((n + m, n + m))
        block[:n, :n] = A
        block[:n, n:] = B
        e = expm(block * h)
        ad, bd = e[:n, :n], e[:n, n:]
        for k in range(grid.n_steps):
            xs[k + 1] = ad @ xs[k] + bd @ us[k]
    elif hold == "linear":
        # states (x, u, du/dt): du/dt is constant over the interval
        block = np.zeros((n + 2 * m, n + 2 * m))
        block[:n, :n] = A
        block[:n, n : n + m] = B
        block[n : n + m, n + m :] = np.eye(m)
        e = expm(block * h)
        for k in range(grid.n_steps):
            state = np.concatenate([xs[k], us[k], (us[k + 1] - us[k]) / h])
            xs[k + 1] = (e @ state)[:n]
    else:
        raise ValueError(f"unknown hold {hold!r}")
    return Trajectory(grid, xs)


def l2_inner(u: ControlSignal, v: ControlSignal) -> float:
    if u.grid != v.grid or u.values.shape != v.values.shape:
        raise ValueError("controls live on different grids or have different widths")
    return float(u.grid.weights @ np.einsum("ij,ij->i", u.values, v.values))


def l2_norm_sq(u: ControlSignal) -> float:
    return l2_inner(u, u)
