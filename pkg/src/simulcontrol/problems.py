"""The two benchmark problems used throughout the experiments."""

from __future__ import annotations

import numpy as np

from .core_dynamics import TimeGrid
from .objective import DEFAULT_BETA, ControlProblem
from .parametric_systems import ParameterSet, ParametricSystem, build_brunovsky, build_cart_pendulum

CART_MASS = 10.0
CART_RANGE = (0.1, 1.0)
BRUNOVSKY_RANGE = (1.0, 6.0)


def cart_pendulum_problem(n_params=10, beta=DEFAULT_BETA, grid=None, cart_mass=CART_MASS) -> ControlProblem:
    """Example 1: start at (-1, 1, 0, 0), target the origin, nu evenly spaced in [0.1, 1]."""
    params = ParameterSet.linspace(*CART_RANGE, n_params)
    system = build_cart_pendulum(cart_mass, params)
    return ControlProblem(system, [-1.0, 1.0, 0.0, 0.0], np.zeros(4), beta, grid or TimeGrid())


def brunovsky_problem(n=4, n_params=10, beta=DEFAULT_BETA, grid=None) -> ControlProblem:
    """Example 2: start at all ones, target the origin, nu evenly spaced in [1, 6]."""
    params = ParameterSet.linspace(*BRUNOVSKY_RANGE, n_params)
    system = build_brunovsky(n, params)
    return ControlProblem(system, np.ones(n), np.zeros(n), beta, grid or TimeGrid())


def default_problem(system: ParametricSystem, beta=DEFAULT_BETA, grid=None) -> ControlProblem:
    """Problem with the initial state / target conventions of the named builders."""
    if system.builder == "cart_pendulum":
        x0, xt = [-1.0, 1.0, 0.0, 0.0], np.zeros(4)
    else:
        x0, xt = np.ones(system.n), np.zeros(system.n)
    return ControlProblem(system, x0, xt, beta, grid or TimeGrid())
