"""Parameter sets, benchmark system families, augmentation and controllability."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml
from scipy import linalg

from .core_dynamics import as_matrix

__all__ = [
    "ParameterSet",
    "ParametricSystem",
    "AugmentedSystem",
    "ControllabilityReport",
    "SystemFileError",
    "build_cart_pendulum",
    "build_brunovsky",
    "build_named",
    "load_system",
    "save_system",
    "system_from_mapping",
    "assemble_augmented",
    "hautus_check",
    "gramian",
    "condition_number",
]

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class ParameterSet:
    values: tuple
    weights: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        if len(values) < 1:
            raise ValueError("a parameter set needs at least one value")
        if len(weights) != len(values):
            raise ValueError(f"{len(values)} values but {len(weights)} weights")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("parameter values must be finite")
        if len(set(values)) != len(values):
            raise ValueError("parameter values must be pairwise distinct")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError("weights must be finite and nonnegative")
        total = math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")

    @classmethod
    def uniform(cls, values):
        values = tuple(values)
        w = 1.0 / len(values) if values else 0.0
        return cls(values, (w,) * len(values))

    @classmethod
    def linspace(cls, lo, hi, count):
        if count < 1:
            raise ValueError("count must be >= 1")
        return cls.uniform(np.linspace(lo, hi, count).tolist())

    def __len__(self):
        return len(self.values)

    @functools.cached_property
    def weight_array(self) -> np.ndarray:
        return np.array(self.weights)

    @functools.cached_property
    def value_array(self) -> np.ndarray:
        return np.array(self.values)


@dataclass(frozen=True, eq=False)
class ParametricSystem:
    """The family nu -> (A_nu, B) over a finite parameter set.

    `builder` and `builder_args` record how the family was made so it can be
    written back to a system file; explicit families carry their matrices.
    """

    n: int
    m: int
    B: np.ndarray
    family: Callable[[float], np.ndarray]
    params: ParameterSet
    builder: str | None = None
    builder_args: dict = field(default_factory=dict)

    def __post_init__(self):
        B = as_matrix(self.B, self.n, self.m, name="B")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    def with_params(self, params: ParameterSet) -> "ParametricSystem":
        return ParametricSystem(self.n, self.m, self.B, self.family, params, self.builder, self.builder_args)

    def matrix(self, index: int) -> np.ndarray:
        """A_nu for the parameter at `index`."""
        return self._matrix_at(self.params.values[index])

    def _matrix_at(self, nu):
        a = as_matrix(self.family(nu), self.n, self.n, name=f"A(nu={nu})")
        a.setflags(write=False)
        return a

    def matrices(self):
        return [self.matrix(i) for i in range(len(self.params))]


def build_cart_pendulum(cart_mass, params: ParameterSet, length=1.0) -> ParametricSystem:
    """Linearized cart / inverted pendulum with variable tip mass nu.

    `length` is kept as metadata only; the linearized matrix does not use it.
    """
    if not cart_mass > 0:
        raise ValueError(f"cart mass must be positive, got {cart_mass}")
    if any(nu < 0 for nu in params.values):
        raise ValueError("pendulum masses must be nonnegative")
    mass = float(cart_mass)

    def family(nu):
        return np.array(
            [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, -nu / mass, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, (nu + mass) / mass, 0.0, 0.0],
            ]
        )

    B = np.array([[0.0], [1.0], [0.0], [-1.0]])
    return ParametricSystem(4, 1, B, family, params, "cart_pendulum", {"cart_mass": mass, "length": float(length)})


def build_brunovsky(n, params: ParameterSet) -> ParametricSystem:
    """Companion form of x^(n) + nu x = 0 with B a column of ones."""
    if int(n) != n or n < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {n}")
    n = int(n)

    def family(nu):
        a = np.eye(n, k=1)
        a[n - 1, 0] = -nu
        return a

    return ParametricSystem(n, 1, np.ones((n, 1)), family, params, "brunovsky", {"n": n})


BUILDERS = {
    "cart_pendulum": lambda params, cart_mass=10.0, length=1.0: build_cart_pendulum(cart_mass, params, length),
    "brunovsky": lambda params, n=4: build_brunovsky(n, params),
}


def build_named(name, params, **kwargs) -> ParametricSystem:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown system builder {name!r}; choose from {sorted(BUILDERS)}") from None
    return builder(params, **kwargs)


class SystemFileError(ValueError):
    pass


_TOP_KEYS = {"N", "M", "B", "params", "builder", "matrices"}
_BUILDER_KEYS = {"name", "args"}
_PARAM_KEYS = {"value", "weight"}


def _field_error(path, where, msg):
    return SystemFileError(f"{path}: field '{where}': {msg}")


def system_from_mapping(doc, source="<mapping>") -> ParametricSystem:
    """Build a system from a parsed system-description document (strict)."""
    if not isinstance(doc, dict):
        raise SystemFileError(f"{source}: top level must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise _field_error(source, sorted(unknown)[0], "unknown field")
    for key in ("N", "M", "B", "params"):
        if key not in doc:
            raise _field_error(source, key, "missing")
    if ("builder" in doc) == ("matrices" in doc):
        raise SystemFileError(f"{source}: exactly one of 'builder' or 'matrices' is required")
    n, m = doc["N"], doc["M"]
    for key, val in (("N", n), ("M", m)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise _field_error(source, key, f"must be a positive integer, got {val!r}")

    raw_b = doc["B"]
    try:
        b = np.array(raw_b, dtype=float)
    except (TypeError, ValueError) as exc:
        raise _field_error(source, "B", f"not numeric: {exc}") from None
    if b.size != n * m:
        raise _field_error(source, "B", f"dimension mismatch: {b.size} entries for an {n}x{m} matrix")
    b = b.reshape(n, m)

    if not isinstance(doc["params"], list) or not doc["params"]:
        raise _field_error(source, "params", "must be a nonempty list")
    values, weights = [], []
    for i, entry in enumerate(doc["params"]):
        where = f"params[{i}]"
        if not isinstance(entry, dict):
            raise _field_error(source, where, "must be a mapping with 'value' and 'weight'")
        extra = set(entry) - _PARAM_KEYS
        if extra:
            raise _field_error(source, f"{where}.{sorted(extra)[0]}", "unknown field")
        if "value" not in entry:
            raise _field_error(source, f"{where}.value", "missing")
        values.append(float(entry["value"]))
        weights.append(float(entry.get("weight", float("nan"))))
    if all(math.isnan(w) for w in weights):
        weights = [1.0 / len(values)] * len(values)
    try:
        params = ParameterSet(values, weights)
    except ValueError as exc:
        raise _field_error(source, "params", str(exc)) from None

    if "builder" in doc:
        entry = doc["builder"]
        if not isinstance(entry, dict) or "name" not in entry:
            raise _field_error(source, "builder", "must be a mapping with 'name'")
        extra = set(entry) - _BUILDER_KEYS
        if extra:
            raise _field_error(source, f"builder.{sorted(extra)[0]}", "unknown field")
        try:
            system = build_named(entry["name"], params, **(entry.get("args") or {}))
        except (TypeError, ValueError) as exc:
            raise _field_error(source, "builder", str(exc)) from None
        if system.n != n or system.m != m:
            raise _field_error(source, "N", f"builder produces {system.n}x{system.m}, file says {n}x{m}")
        if not np.array_equal(system.B, b):
            raise _field_error(source, "B", "does not match the named builder's input matrix")
        return system

    mats = doc["matrices"]
    if not isinstance(mats, list) or len(mats) != len(values):
        raise _field_error(source, "matrices", f"need one matrix per parameter ({len(values)})")
    table = {}
    for i, (nu, raw) in enumerate(zip(values, mats)):
        try:
            a = np.array(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise _field_error(source, f"matrices[{i}]", f"not numeric: {exc}") from None
        if a.size != n * n:
            raise _field_error(source, f"matrices[{i}]", f"dimension mismatch: {a.size} entries for {n}x{n}")
        table[nu] = a.reshape(n, n)

    def family(nu):
        return table[float(nu)]

    return ParametricSystem(n, m, b, family, params)


def load_system(path) -> ParametricSystem:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise SystemFileError(f"{path}:{where} parse error: {getattr(exc, 'problem', exc)}") from None
    return system_from_mapping(doc, str(path))


def system_to_mapping(system: ParametricSystem, explicit=False) -> dict:
    doc = {
        "N": system.n,
        "M": system.m,
        "B": system.B.reshape(-1).tolist(),
        "params": [{"value": v, "weight": w} for v, w in zip(system.params.values, system.params.weights)],
    }
    if system.builder and not explicit:
        doc["builder"] = {"name": system.builder, "args": dict(system.builder_args)}
    else:
        doc["matrices"] = [a.reshape(-1).tolist() for a in system.matrices()]
    return doc


def save_system(system: ParametricSystem, path, explicit=False):
    Path(path).write_text(yaml.safe_dump(system_to_mapping(system, explicit), sort_keys=False))


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    calA: np.ndarray
    calB: np.ndarray
    block_size: int

    @property
    def n_blocks(self) -> int:
        return self.calA.shape[0] // self.block_size

    def block(self, i) -> np.ndarray:
        s = slice(i * self.block_size, (i + 1) * self.block_size)
        return self.calA[s, s]


def assemble_augmented(system: ParametricSystem) -> AugmentedSystem:
    calA = linalg.block_diag(*system.matrices())
    calB = np.vstack([system.B] * len(system.params))
    return AugmentedSystem(calA, calB, system.n)


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    failing_eigenvalue: complex | None
    rank_found: int
    rank_required: int
    tolerance: float


class ControllabilityError(RuntimeError):
    pass


def hautus_check(aug: AugmentedSystem, rank_tol=None) -> ControllabilityReport:
    """PBH test: rank [calA - lambda I, calB] = n at every eigenvalue.

    With rank_tol=None the tolerance is 1e-10 times the largest singular value
    over all tested compounds.
    """
    a, b = aug.calA, aug.calB
    n = a.shape[0]
    if rank_tol is not None and not rank_tol > 0:
        raise ValueError("rank_tol must be positive")
    try:
        # block-diagonal: per-block eigenvalues are more accurate than the whole
        eigs = np.concatenate([linalg.eigvals(aug.block(i)) for i in range(aug.n_blocks)])
    except linalg.LinAlgError as exc:
        raise ControllabilityError(f"eigenvalue computation failed: {exc}") from exc
    eigs = eigs[np.lexsort((eigs.imag, eigs.real))]
    distinct = []
    for lam in eigs:
        if not distinct or abs(lam - distinct[-1]) > 1e-13 * max(1.0, abs(lam)):
            distinct.append(lam)
    spectra = []
    for lam in distinct:
        compound = np.hstack([a - lam * np.eye(n), b])
        try:
            spectra.append(linalg.svd(compound, compute_uv=False))
        except linalg.LinAlgError as exc:
            raise ControllabilityError(f"SVD failed at eigenvalue {lam}: {exc}") from exc
    sigma_max = max(float(s[0]) for s in spectra)
    tol = rank_tol if rank_tol is not None else 1e-10 * sigma_max
    worst_rank = n
    failing = None
    for lam, s in zip(distinct, spectra):
        rank = int(np.sum(s > tol))
        if rank < n and failing is None:
            failing = complex(lam)
        worst_rank = min(worst_rank, rank)
    return ControllabilityReport(failing is None, failing, worst_rank, n, float(tol))


def gramian(aug: AugmentedSystem, t_final, quad_steps=400) -> np.ndarray:
    """Controllability Gramian by composite trapezoid quadrature.

    Uses e^{A t_k} B with t_k = k T / quad_steps, built by repeated
    multiplication with the one-step exponential.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    if quad_steps < 16:
        raise ValueError("quad_steps must be >= 16")
    a, b = aug.calA, aug.calB
    h = t_final / quad_steps
    step = linalg.expm(a * h)
    v = b.copy()
    w = 0.5 * (v @ v.T)
    for k in range(1, quad_steps + 1):
        v = step @ v
        w += (0.5 if k == quad_steps else 1.0) * (v @ v.T)
    w *= h
    return 0.5 * (w + w.T)


def condition_number(w, rank_tol=1e-10) -> float:
    """lambda_max / lambda_min of a symmetric PSD matrix; inf if numerically singular."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("condition_number needs a square matrix")
    scale = max(np.abs(w).max(), np.finfo(float).tiny)
    if np.abs(w - w.T).max() > 1e-12 * scale:
        raise ValueError("condition_number needs a symmetric matrix")
    lam = linalg.eigvalsh(w)
    lo, hi = lam[0], lam[-1]
    if hi <= 0 or lo <= rank_tol * hi:
        log.warning("Gramian is numerically singular (lambda_min=%g, lambda_max=%g)", lo, hi)
        return math.inf
    return float(hi / lo)
