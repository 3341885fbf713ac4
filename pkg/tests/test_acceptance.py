"""Acceptance suite: one check per criterion, each at its stated tolerance.

Every check prints a single ``PASS``/``FAIL`` line (collected again in the
pytest terminal summary).  Run stand-alone with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from simulcontrol import (  # noqa: E402
    AugmentedSystem,
    Constant,
    ControlSignal,
    CsgState,
    StopRule,
    apply_cg_operator,
    assemble_augmented,
    brunovsky_problem,
    cart_pendulum_problem,
    cg_rhs,
    evaluate,
    gradient_full,
    hautus_check,
    l2_inner,
    l2_norm_sq,
    lift,
    lift_adjoint,
    predicted_costs,
    rate_constant_cg,
    rate_constant_gd,
    run_cg,
    run_csg,
    run_gd,
    run_sgd,
    sgd_threshold,
)
from simulcontrol.cli import BenchConfig, RunConfig, run_bench  # noqa: E402
from simulcontrol.parametric_systems import ParameterSet, build_brunovsky, build_cart_pendulum  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}
SEEDS = range(20)
EPS = 1e-4


@functools.lru_cache(maxsize=None)
def example1(k=10):
    return cart_pendulum_problem(k)


@functools.lru_cache(maxsize=None)
def example2(k=10, n=4):
    return brunovsky_problem(n, k)


def _control(prob, r):
    return ControlSignal(prob.grid, r.standard_normal((prob.grid.n_nodes, prob.system.m)))


def _record(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    return ok


def criterion_1():
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    worst = 0.0
    for prob in (example1(), example2()):
        u = _control(prob, r)
        g = gradient_full(prob, u)
        for _ in range(10):
            z = _control(prob, r)
            h = 1e-3
            fd = (evaluate(prob, u + h * z).value - evaluate(prob, u - h * z).value) / (2 * h)
            an = l2_inner(g, z)
            worst = max(worst, abs(fd - an) / abs(an))
    dt = time.perf_counter() - t0
    return _record(1, worst < 1e-5 and dt < 10, f"max relative FD error {worst:.2e} (< 1e-5), {dt:.2f} s (< 10 s)")


def criterion_2():
    prob = example2()
    r = np.random.default_rng(2)
    worst = 0.0
    for j in range(20):
        i = j % prob.n_params
        z = _control(prob, r)
        q = r.standard_normal(prob.system.n)
        lz = lift(prob, z, i)
        gap = abs(l2_inner(z, lift_adjoint(prob, q, i)) - lz @ q)
        worst = max(worst, gap / (np.linalg.norm(lz) * np.linalg.norm(q)))
    return _record(2, worst < 1e-9, f"max normalized duality gap {worst:.2e} (< 1e-9)")


def criterion_3():
    r = np.random.default_rng(3)
    sym = coer = ident = 0.0
    for prob in (example1(), example2()):
        b = cg_rhs(prob)
        for _ in range(10):
            u, v = _control(prob, r), _control(prob, r)
            au, av = apply_cg_operator(prob, u), apply_cg_operator(prob, v)
            x, y = l2_inner(au, v), l2_inner(u, av)
            sym = max(sym, abs(x - y) / max(abs(x), abs(y)))
            coer = max(coer, prob.beta * l2_norm_sq(u) - l2_inner(au, u))
            ident = max(ident, float(np.abs((gradient_full(prob, u) - (au - b)).values).max()))
    ok = sym < 1e-9 and coer <= 1e-10 and ident < 1e-10
    return _record(3, ok, f"symmetry {sym:.2e} (< 1e-9), coercivity deficit {coer:.2e} (<= 1e-10), "
                          f"|grad - (Au - b)| {ident:.2e} (< 1e-10)")


def criterion_4():
    t0 = time.perf_counter()
    prob = example2()
    cg = run_cg(prob, stop=StopRule(EPS))
    gd = run_gd(prob, stop=StopRule(EPS, 200_000))
    rel = math.sqrt(l2_norm_sq(gd.control - cg.control) / l2_norm_sq(cg.control))
    free = evaluate(prob, prob.zero_control()).terminal_mismatch
    worst = max(gd.terminal_mismatch, cg.terminal_mismatch)
    dt = time.perf_counter() - t0
    ok = rel < 1e-2 and worst * 100 <= free and dt < 120
    return _record(4, ok, f"|u_GD - u_CG|/|u_CG| = {rel:.2e} (< 1e-2), mismatch {worst:.2e} vs free {free:.2e} "
                          f"(ratio {free / worst:.0f}, >= 100), {dt:.1f} s (< 120 s)")


def _stochastic_iterations(prob, runner):
    return [runner(prob, stop=StopRule(EPS, 50_000, "update_window"), seed=s).iterations for s in SEEDS]


def criterion_5():
    t0 = time.perf_counter()
    parts, ok = [], True

    cg_iters = {k: run_cg(example2(k), stop=StopRule(EPS)).iterations for k in (2, 10, 100)}
    a = all(v <= 30 for v in cg_iters.values())
    parts.append(f"(a) CG iterations {cg_iters} (<= 30): {'ok' if a else 'no'}")
    ok &= a

    iters = {}
    for name, make in (("ex1", example1), ("ex2", example2)):
        for algo, runner in (("sgd", run_sgd), ("csg", run_csg)):
            for k in (10, 100):
                iters[name, algo, k] = _stochastic_iterations(make(k), runner)
    b_parts = []
    for name in ("ex1", "ex2"):
        for algo in ("sgd", "csg"):
            m10 = statistics.median(iters[name, algo, 10])
            m100 = statistics.median(iters[name, algo, 100])
            change = abs(m100 - m10) / m10
            b_parts.append(f"{name}/{algo} {m10:g}->{m100:g} ({change:.0%})")
            ok_b = change < 0.25
            ok &= ok_b
    parts.append("(b) medians |K|=10->100 (< 25%): " + ", ".join(b_parts))

    sgd, csg = iters["ex1", "sgd", 100], iters["ex1", "csg", 100]
    wins = sum(c < s for c, s in zip(csg, sgd)) / len(sgd)
    c = statistics.median(csg) < statistics.median(sgd) and wins >= 0.8
    parts.append(f"(c) ex1 |K|=100 median CSG {statistics.median(csg):g} vs SGD {statistics.median(sgd):g}, "
                 f"CSG wins {wins:.0%} (>= 80%): {'ok' if c else 'no'}")
    ok &= c
    dt = time.perf_counter() - t0
    ok &= dt < 900
    parts.append(f"{dt:.0f} s (< 900 s)")
    return _record(5, ok, "; ".join(parts))


def criterion_6():
    rows = []
    for system in ("cart_pendulum", "brunovsky"):
        base = RunConfig(system=system, max_iter=3000, tol=EPS)
        rows += run_bench(BenchConfig(base, "nparams", [2, 10], seeds=3, algorithms=["gd", "cg", "sgd", "csg"]))
    bad = [r for r in rows if r[9] is not True or not r[10] == "ok"]
    return _record(6, not bad, f"{len(rows)} bench cells, {len(bad)} with accounting mismatch or failure")


def criterion_7():
    cases = {
        "ex1 nu={0.1,1}": (assemble_augmented(build_cart_pendulum(10, ParameterSet.uniform([0.1, 1.0]))), True),
        "ex2 N=4 |K|=10": (assemble_augmented(build_brunovsky(4, ParameterSet.linspace(1, 6, 10))), True),
    }
    a = build_brunovsky(4, ParameterSet.uniform([2.0])).matrix(0)
    cases["ex2 duplicated nu"] = (AugmentedSystem(*oracles.block_diag_stack([a, a], np.ones((4, 1))), 4), False)
    cp = build_cart_pendulum(10, ParameterSet.uniform([0.5])).matrix(0)
    cases["ex1 duplicated nu"] = (AugmentedSystem(*oracles.block_diag_stack([cp, cp], np.array([0, 1, 0, -1.0])), 4), False)
    ok, parts = True, []
    for name, (aug, expected) in cases.items():
        verdict = hautus_check(aug).controllable
        kalman = oracles.kalman_rank(aug.calA, aug.calB)
        agrees = verdict == (kalman == aug.calA.shape[0])
        good = agrees and verdict == expected
        ok &= good
        parts.append(f"{name}: hautus={verdict} kalman_rank={kalman}/{aug.calA.shape[0]} "
                     f"expected={expected} {'ok' if good else 'MISMATCH'}")
    return _record(7, ok, "; ".join(parts))


def criterion_8():
    checks = [
        abs(rate_constant_gd(9) - math.log(10 / 8)) < 1e-5,
        abs(rate_constant_gd(4) - math.log(5 / 3)) < 1e-5,
        abs(rate_constant_cg(9) - math.log(2)) < 1e-5,
        abs(rate_constant_cg(4) - math.log(3)) < 1e-5,
        abs(sgd_threshold(1e-4) - 1085.73) <= 0.01,
        all(rate_constant_cg(r) > rate_constant_gd(r) for r in np.logspace(1e-6, 6, 400)),
        abs(predicted_costs(2, 1e-4, 9).cost_cg - 26.58) <= 0.01,
    ]
    return _record(8, all(checks), f"{sum(checks)}/{len(checks)} cost-model checks "
                                   f"(threshold(1e-4) = {sgd_threshold(1e-4):.4f})")


def criterion_9():
    parts, ok = [], True
    for name, make in (("ex1", lambda: cart_pendulum_problem(10)), ("ex2", lambda: brunovsky_problem(4, 10))):
        for algo, runner in (("sgd", run_sgd), ("csg", run_csg)):
            reps = [runner(make(), stop=StopRule(EPS, 2000, "update_window"), seed=5).to_dict() for _ in range(2)]
            same = reps[0] == reps[1]
            ok &= same
            parts.append(f"{name}/{algo} seeded {'identical' if same else 'DIFFER'}")
        for algo, runner in (("gd", run_gd), ("cg", run_cg)):
            reps = [runner(make(), stop=StopRule(EPS, 500), workers=w).to_dict() for w in (1, 4)]
            same = reps[0] == reps[1]
            ok &= same
            parts.append(f"{name}/{algo} workers 1 vs 4 {'identical' if same else 'DIFFER'}")
    return _record(9, ok, "; ".join(parts))


def criterion_10():
    r = np.random.default_rng(10)
    worst, ok = 0.0, True
    for k in (3, 10):
        prob = cart_pendulum_problem(k)
        u0 = _control(prob, r)
        state = CsgState()
        run_csg(prob, u0, Constant(0.0), StopRule(0.0, 500, "update_window"), seed=k, state=state)
        ok &= set(state.indices) == set(range(k))
        g = state.aggregate(prob.system.params, prob.grid)
        worst = max(worst, float(np.abs((g - gradient_full(prob, u0)).values).max()))
    return _record(10, ok and worst < 1e-12, f"max |G - grad F(u0)| = {worst:.2e} (< 1e-12) on |K| in {{3, 10}}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_acceptance(check):
    assert check(), RESULTS[CRITERIA.index(check) + 1][1]


if __name__ == "__main__":
    outcomes = [check() for check in CRITERIA]
    print(f"{sum(outcomes)}/{len(outcomes)} criteria pass")
    sys.exit(0 if all(outcomes) else 1)
