"""Closed-form convergence constants and cost predictions.

All costs are in coupled-solve units with the big-O constants set to 1, so
they are only meaningful relative to each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["CostPrediction", "rate_constant_gd", "rate_constant_cg", "predicted_costs", "sgd_threshold"]


def _check_rho(rho):
    if not (isinstance(rho, (int, float)) and rho > 1 and not math.isnan(rho)):
        raise ValueError(f"conditioning rho must be > 1, got {rho!r}")


def _log_ratio(s):
    # ln((s + 1) / (s - 1)) = ln(1 + 2 / (s - 1)), stable as s -> 1+ and s -> inf
    if math.isinf(s):
        return 0.0
    return math.log1p(2.0 / (s - 1.0))


def rate_constant_gd(rho) -> float:
    """ln((rho + 1) / (rho - 1))."""
    _check_rho(rho)
    return _log_ratio(float(rho))


def rate_constant_cg(rho) -> float:
    """ln((sqrt(rho) + 1) / (sqrt(rho) - 1))."""
    _check_rho(rho)
    if math.isinf(rho):
        return 0.0
    s = math.sqrt(rho)
    # sqrt(rho) - 1 computed without cancellation
    return math.log1p(2.0 / ((rho - 1.0) / (s + 1.0)))


@dataclass(frozen=True)
class CostPrediction:
    k_size: int
    epsilon: float
    rho: float
    c_gd: float
    c_cg: float
    cost_gd: float
    cost_cg: float
    sgd_cost: float
    threshold_k: float | None
    recommendation: str

    def rows(self):
        return [
            ("C_GD", self.c_gd),
            ("C_CG", self.c_cg),
            ("cost GD [rel. units]", self.cost_gd),
            ("cost CG [rel. units]", self.cost_cg),
            ("cost SGD/CSG [rel. units]", self.sgd_cost),
            ("|K| threshold", self.threshold_k),
        ]


def sgd_threshold(epsilon) -> float:
    """|K|(eps) = 1 / (eps ln(1/eps)), the size above which SGD becomes competitive."""
    if not 0 < epsilon < 1 / math.e:
        raise ValueError(f"epsilon must lie in (0, 1/e), got {epsilon!r}")
    return 1.0 / (epsilon * math.log(1.0 / epsilon))


def predicted_costs(k_size, epsilon, rho) -> CostPrediction:
    if int(k_size) != k_size or k_size < 1:
        raise ValueError(f"|K| must be an integer >= 1, got {k_size!r}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    c_gd = rate_constant_gd(rho)
    c_cg = rate_constant_cg(rho)
    log_eps = math.log(1.0 / epsilon)
    cost_gd = k_size * log_eps / c_gd if c_gd > 0 else math.inf
    cost_cg = k_size * log_eps / c_cg if c_cg > 0 else math.inf
    sgd_cost = 1.0 / epsilon
    # ties go to CG
    best = min((cost_cg, 0, "cg"), (cost_gd, 1, "gd"), (sgd_cost, 2, "sgd/csg"))
    threshold = sgd_threshold(epsilon) if epsilon < 1 / math.e else None
    return CostPrediction(int(k_size), epsilon, float(rho), c_gd, c_cg, cost_gd, cost_cg, sgd_cost, threshold, best[2])
