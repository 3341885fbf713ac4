"""Command-line front end: run, bench, check, costmodel.

Exit codes: 0 success, 1 invalid configuration, 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import statistics
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import cost_model
from .core_dynamics import ControlSignal, IntegrationDivergence, TimeGrid, integrate_forward
from .objective import ControlProblem, evaluate
from .optimizers import (
    Adaptive,
    CGBreakdown,
    Constant,
    RobbinsMonro,
    SolverDivergence,
    StopRule,
    run_cg,
    run_csg,
    run_gd,
    run_sgd,
)
from .parametric_systems import (
    BUILDERS,
    ParameterSet,
    SystemFileError,
    assemble_augmented,
    build_named,
    condition_number,
    gramian,
    hautus_check,
    load_system,
)
from .problems import BRUNOVSKY_RANGE, CART_RANGE, default_problem

log = logging.getLogger("simulcontrol")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
ALGORITHMS = ("gd", "cg", "sgd", "csg")
STOCHASTIC = ("sgd", "csg")
CONVERGENCE_COLUMNS = ("iter", "objective", "measure", "solves", "wall_ms")
TRAJECTORY_COLUMNS = ("t", "nu", "component_index", "value")
BENCH_COLUMNS = (
    "axis", "value", "algorithm", "runs", "converged", "median_iterations",
    "median_wall_ms", "median_solves", "total_solves", "accounting_ok", "status",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: str = "brunovsky"
    algo: str = "cg"
    nparams: int = 10
    dim: int = 4
    cart_mass: float = 10.0
    beta: float = 1e-3
    tfinal: float = 1.0
    nsteps: int = 200
    tol: float = 1e-4
    max_iter: int | None = None
    seed: int | None = None
    rate: str = "auto"
    workers: int | None = None
    out: str | None = None
    traj_out: str | None = None
    history_out: str | None = None

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {', '.join(ALGORITHMS)}")
        if self.system not in BUILDERS and not Path(self.system).is_file():
            raise ConfigError(f"system {self.system!r} is neither a builder ({', '.join(BUILDERS)}) nor a file")
        for name in ("nparams", "dim", "nsteps"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        if self.nsteps < 2:
            raise ConfigError("nsteps must be >= 2")
        for name in ("beta", "tfinal", "tol", "cart_mass"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.max_iter is not None and (not isinstance(self.max_iter, int) or self.max_iter < 1):
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter!r}")
        if self.seed is not None and not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        parse_rate(self.rate)
        return self

    @property
    def iteration_cap(self):
        if self.max_iter is not None:
            return self.max_iter
        return 500 if self.algo == "cg" else 100_000


@dataclass
class BenchConfig:
    base: RunConfig = field(default_factory=RunConfig)
    axis: str = "nparams"
    values: list = field(default_factory=list)
    seeds: int = 5
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    jobs: int = 1
    out: str | None = None

    def validate(self):
        self.base.validate()
        if self.axis not in ("nparams", "dim"):
            raise ConfigError(f"sweep axis must be 'nparams' or 'dim', got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep list is empty")
        if any(not isinstance(v, int) or v < 1 for v in self.values):
            raise ConfigError("sweep values must be positive integers")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f"algorithms must be drawn from {', '.join(ALGORITHMS)}")
        if not isinstance(self.seeds, int) or self.seeds < 1:
            raise ConfigError("seeds must be a positive integer")
        if self.axis == "dim" and any(v < 2 for v in self.values):
            raise ConfigError("dimension sweep values must be >= 2")
        return self


def parse_rate(text):
    """'auto', 'constant:ETA', 'rm:A[,B]' or 'adaptive:ETA0[,SHRINK[,WINDOW]]'."""
    if text in (None, "auto"):
        return None
    kind, _, args = str(text).partition(":")
    try:
        nums = [float(a) for a in args.split(",")] if args else []
        if kind == "constant" and len(nums) == 1:
            return Constant(nums[0])
        if kind == "rm" and 1 <= len(nums) <= 2:
            return RobbinsMonro(*nums)
        if kind == "adaptive" and 1 <= len(nums) <= 3:
            if len(nums) == 3:
                nums[2] = int(nums[2])
            return Adaptive(*nums)
    except ValueError as exc:
        raise ConfigError(f"bad rate {text!r}: {exc}") from None
    raise ConfigError(f"bad rate {text!r}; use auto, constant:ETA, rm:A,B or adaptive:ETA0,SHRINK,WINDOW")


def build_problem(cfg: RunConfig) -> ControlProblem:
    grid = TimeGrid(cfg.tfinal, cfg.nsteps)
    if cfg.system in BUILDERS:
        lo, hi = CART_RANGE if cfg.system == "cart_pendulum" else BRUNOVSKY_RANGE
        params = ParameterSet.linspace(lo, hi, cfg.nparams)
        kwargs = {"cart_mass": cfg.cart_mass} if cfg.system == "cart_pendulum" else {"n": cfg.dim}
        system = build_named(cfg.system, params, **kwargs)
    else:
        system = load_system(cfg.system)
    return default_problem(system, cfg.beta, grid)


def execute(cfg: RunConfig, prob: ControlProblem | None = None):
    prob = prob or build_problem(cfg)
    rate = parse_rate(cfg.rate)
    if cfg.algo == "cg":
        return run_cg(prob, stop=StopRule(cfg.tol, cfg.iteration_cap), workers=cfg.workers)
    if cfg.algo == "gd":
        return run_gd(prob, rate=rate, stop=StopRule(cfg.tol, cfg.iteration_cap), workers=cfg.workers)
    seed = 0 if cfg.seed is None else cfg.seed
    stop = StopRule(cfg.tol, cfg.iteration_cap, "update_window")
    runner = run_sgd if cfg.algo == "sgd" else run_csg
    return runner(prob, rate=rate, stop=stop, seed=seed)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def convergence_rows(report):
    return [
        (i, repr(f), repr(m), s, f"{w:.3f}")
        for i, (f, m, s, w) in enumerate(
            zip(report.functional_history, report.measure_history, report.solves_history, report.wall_ms)
        )
    ]


def trajectory_rows(prob: ControlProblem, u: ControlSignal):
    rows = []
    t = prob.grid.nodes
    for i, nu in enumerate(prob.system.params.values):
        traj = integrate_forward(prob.system.matrix(i), prob.system.B, u, prob.x0)
        for k, tk in enumerate(t):
            for c, v in enumerate(traj.values[k]):
                rows.append((repr(float(tk)), repr(nu), c, repr(float(v))))
    return rows


def _free_path(path):
    p = Path(path)
    return p.with_name(f"{p.stem}_free{p.suffix}")


def write_run_outputs(cfg, prob, report, status):
    # output locations are not part of the experiment
    settings = {k: v for k, v in asdict(cfg).items() if k not in ("out", "traj_out", "history_out")}
    doc = {"status": status, "config": settings, "report": report.to_dict()}
    if cfg.out:
        _atomic_write(cfg.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        meta = {"created_unix": time.time(), "wall_ms": report.wall_ms}
        _atomic_write(str(cfg.out) + ".meta.json", json.dumps(meta) + "\n")
    if cfg.history_out:
        _atomic_write(cfg.history_out, _csv_text(CONVERGENCE_COLUMNS, convergence_rows(report)))
    if cfg.traj_out and status == "ok":
        _atomic_write(cfg.traj_out, _csv_text(TRAJECTORY_COLUMNS, trajectory_rows(prob, report.control)))
        _atomic_write(_free_path(cfg.traj_out), _csv_text(TRAJECTORY_COLUMNS, trajectory_rows(prob, prob.zero_control())))


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    prob = build_problem(cfg)
    try:
        report = execute(cfg, prob)
    except SolverDivergence as exc:
        log.error("%s", exc)
        write_run_outputs(cfg, prob, exc.report, "diverged")
        return EXIT_SOLVER
    except (IntegrationDivergence, CGBreakdown) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    write_run_outputs(cfg, prob, report, "ok")
    free = evaluate(prob, prob.zero_control())
    print(f"algorithm      {report.algorithm}")
    print(f"|K|            {prob.n_params}")
    print(f"iterations     {report.iterations}  (converged: {report.converged})")
    print(f"coupled solves {report.coupled_solves}  (+{report.setup_solves} setup)")
    print(f"F(u)           {report.objective:.6e}")
    print(f"E|x(T)-xT|^2   {report.terminal_mismatch:.6e}  (uncontrolled {free.terminal_mismatch:.6e})")
    return EXIT_OK


def _median(xs):
    return statistics.median(xs) if xs else float("nan")


def _bench_cell(bench: BenchConfig, value):
    cfg = replace(bench.base, **{bench.axis: value})
    prob = build_problem(cfg)
    rows = []
    for algo in bench.algorithms:
        seeds = list(range(bench.seeds)) if algo in STOCHASTIC else [None]
        iters, walls, solves, conv, errors = [], [], [], 0, []
        accounting = True
        for seed in seeds:
            run_cfg = replace(cfg, algo=algo, seed=seed)
            t0 = time.perf_counter()
            try:
                rep = execute(run_cfg, prob)
            except (SolverDivergence, IntegrationDivergence, CGBreakdown) as exc:
                errors.append(type(exc).__name__)
                continue
            walls.append((time.perf_counter() - t0) * 1e3)
            iters.append(rep.iterations)
            solves.append(rep.coupled_solves)
            conv += rep.converged
            accounting &= rep.coupled_solves == rep.expected_solves()
        status = "ok" if not errors else f"failed:{len(errors)}:{errors[0]}"
        rows.append((
            bench.axis, value, algo, len(seeds), conv, _median(iters), f"{_median(walls):.1f}",
            _median(solves), sum(solves), accounting, status,
        ))
    return rows


def run_bench(bench: BenchConfig):
    bench.validate()
    if bench.jobs > 1:
        with ThreadPoolExecutor(max_workers=bench.jobs) as pool:
            cells = list(pool.map(lambda v: _bench_cell(bench, v), bench.values))
    else:
        cells = [_bench_cell(bench, v) for v in bench.values]
    return [row for cell in cells for row in cell]


def cmd_bench(bench: BenchConfig) -> int:
    rows = run_bench(bench)
    text = _csv_text(BENCH_COLUMNS, rows)
    if bench.out:
        _atomic_write(bench.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_check(cfg: RunConfig, quad_steps=400) -> int:
    cfg.validate()
    prob = build_problem(cfg)
    aug = assemble_augmented(prob.system)
    rep = hautus_check(aug)
    rho = condition_number(gramian(aug, cfg.tfinal, quad_steps))
    label = "single system" if prob.n_params == 1 else f"augmented system ({prob.n_params} realizations)"
    print(f"{label}: N|K| = {aug.calA.shape[0]}, M = {prob.system.m}")
    print(f"controllable   {'yes' if rep.controllable else 'no'}")
    print(f"rank           {rep.rank_found} / {rep.rank_required}  (tol {rep.tolerance:.3e})")
    if rep.failing_eigenvalue is not None:
        print(f"fails at       lambda = {rep.failing_eigenvalue:.6g}")
    print(f"Gramian rho    {'inf (numerically singular)' if math.isinf(rho) else f'{rho:.6e}'}")
    return EXIT_OK


def cmd_costmodel(k_size, epsilon, rho) -> int:
    pred = cost_model.predicted_costs(k_size, epsilon, rho)
    print(f"|K| = {k_size}, eps = {epsilon:g}, rho = {rho:g}")
    for name, val in pred.rows():
        print(f"{name:28s} {'n/a' if val is None else f'{val:.6g}'}")
    print(f"{'recommendation':28s} {pred.recommendation}")
    return EXIT_OK


_FLAG_FIELDS = {
    "system": "system", "algo": "algo", "nparams": "nparams", "dim": "dim", "cart_mass": "cart_mass",
    "beta": "beta", "tfinal": "tfinal", "nsteps": "nsteps", "tol": "tol", "max_iter": "max_iter",
    "seed": "seed", "rate": "rate", "workers": "workers", "out": "out", "traj_out": "traj_out",
    "history_out": "history_out",
}


def _add_run_flags(p):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--system", help="builder name (cart_pendulum, brunovsky) or system file path")
    p.add_argument("--algo", help="gd, cg, sgd or csg")
    p.add_argument("--nparams", type=int, help="|K|, number of parameter values")
    p.add_argument("--dim", type=int, help="state dimension N (brunovsky)")
    p.add_argument("--cart-mass", dest="cart_mass", type=float)
    p.add_argument("--beta", type=float, help="control penalization")
    p.add_argument("--tfinal", type=float)
    p.add_argument("--nsteps", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", help="auto | constant:ETA | rm:A,B | adaptive:ETA0,SHRINK,WINDOW")
    p.add_argument("--workers", type=int, help="threads for per-parameter solves (GD/CG)")
    p.add_argument("--out", help="report (run) or table (bench) output path")
    p.add_argument("--traj-out", dest="traj_out", help="controlled trajectories CSV; free ones go to *_free")
    p.add_argument("--history-out", dest="history_out", help="convergence history CSV")


def _load_config(path):
    if not path:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return doc


def _run_config(args, doc) -> RunConfig:
    known = set(_FLAG_FIELDS.values())
    unknown = set(doc) - known - {"sweep", "seeds", "algos", "jobs", "quad_steps", "rho"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {k: v for k, v in doc.items() if k in known}
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="simulcontrol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compute a simultaneous control")
    _add_run_flags(run)

    bench = sub.add_parser("bench", help="sweep |K| or N and tabulate iterations and solve counts")
    _add_run_flags(bench)
    bench.add_argument("--sweep", help="AXIS=V1,V2,... with AXIS in {nparams, dim}")
    bench.add_argument("--seeds", type=int, help="seeds per stochastic cell")
    bench.add_argument("--algos", help="comma-separated subset of gd,cg,sgd,csg")
    bench.add_argument("--jobs", type=int, help="cells run concurrently")

    check = sub.add_parser("check", help="Hautus test and Gramian conditioning of the augmented system")
    _add_run_flags(check)
    check.add_argument("--quad-steps", dest="quad_steps", type=int, default=400)

    cm = sub.add_parser("costmodel", help="predicted GD/CG/SGD costs and the |K| threshold")
    cm.add_argument("--nparams", type=int, required=True)
    cm.add_argument("--tol", type=float, default=1e-4)
    cm.add_argument("--rho", type=float, help="Gramian conditioning; computed from --system if omitted")
    cm.add_argument("--system", help="builder name or system file, used when --rho is missing")
    cm.add_argument("--dim", type=int, default=4)
    cm.add_argument("--tfinal", type=float, default=1.0)
    return parser


def _bench_config(args, doc) -> BenchConfig:
    base = _run_config(args, doc)
    sweep = doc.get("sweep") or {}
    axis, values = sweep.get("axis", "nparams"), sweep.get("values", [])
    if args.sweep:
        axis, _, vals = args.sweep.partition("=")
        values = _int_list(vals)
    seeds = args.seeds if args.seeds is not None else doc.get("seeds", 5)
    # a dimension sweep compares CG with CSG only
    default_algos = ["cg", "csg"] if axis == "dim" else list(ALGORITHMS)
    algos = args.algos.split(",") if args.algos else doc.get("algos", default_algos)
    jobs = args.jobs if args.jobs is not None else doc.get("jobs", 1)
    return BenchConfig(base, axis, list(values), seeds, list(algos), jobs, base.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "costmodel":
            rho = args.rho
            if rho is None:
                if not args.system:
                    raise ConfigError("costmodel needs --rho or --system")
                cfg = RunConfig(system=args.system, nparams=args.nparams, dim=args.dim, tfinal=args.tfinal).validate()
                aug = assemble_augmented(build_problem(cfg).system)
                rho = condition_number(gramian(aug, cfg.tfinal))
            return cmd_costmodel(args.nparams, args.tol, rho)
        doc = _load_config(args.config)
        if args.command == "run":
            return cmd_run(_run_config(args, doc))
        if args.command == "bench":
            return cmd_bench(_bench_config(args, doc))
        if args.command == "check":
            return cmd_check(_run_config(args, doc), args.quad_steps)
    except (ConfigError, SystemFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IntegrationDivergence, CGBreakdown, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    parser.error(f"unknown command {args.command}")
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
