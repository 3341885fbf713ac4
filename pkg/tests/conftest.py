import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from simulcontrol import ControlProblem, ParameterSet, ParametricSystem, TimeGrid  # noqa: E402


def explicit_problem(mats, B, x0, xt, beta=1e-3, grid=None, values=None, weights=None):
    """Problem over an explicit list of matrices (one per parameter)."""
    mats = [np.atleast_2d(np.asarray(a, dtype=float)) for a in mats]
    n = mats[0].shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    values = list(range(len(mats))) if values is None else values
    params = ParameterSet(values, weights) if weights is not None else ParameterSet.uniform(values)
    table = dict(zip(params.values, mats))
    system = ParametricSystem(n, B.shape[1], B, lambda nu: table[float(nu)], params)
    return ControlProblem(system, x0, xt, beta, grid or TimeGrid())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
