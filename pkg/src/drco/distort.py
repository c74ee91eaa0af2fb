"""Approximation by sample distortion toward a bad support point.

Instead of solving the robust problem exactly, move every sample part of the
way toward the support point with the largest coordinate sum, then minimize
empirical risk on the moved sample.  The move fraction is chosen so that
shifting any tail subset of the sample stays inside the transport ball, which
yields a multiplicative guarantee on the returned solution; on a box support
the guarantee constant is exactly the move denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import milp, risk
from .milp import LinearProgram
from .model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    PolytopeSupport,
    RiskSpec,
    Support,
    UnrestrictedSupport,
    ensure_samples_in_support,
)

TARGET_MAX_SUM = "max_sum"
TARGET_NEAR_CEILING = "near_ceiling"


@dataclass(frozen=True, eq=False)
class DistortionPlan:
    """A distorted sample plus the data behind its guarantee.

    target is the support point the samples move toward, factor the
    denominator of the move (1 means all the way), coordinate_maxima the
    per-coordinate ceiling vector of the support, and distorted the moved
    sample.
    """

    target: np.ndarray
    factor: float
    coordinate_maxima: np.ndarray
    distorted: EmpiricalDistribution


def _ground_norm(vec: np.ndarray, q: float) -> float:
    if q == 1.0:
        return float(np.abs(vec).sum())
    if q == math.inf:
        return float(np.abs(vec).max(initial=0.0))
    return float(np.linalg.norm(vec))


def _polytope_lp(support, costs, extra_rows=()):
    n = support.normals.shape[1]
    lp = LinearProgram(
        np.asarray(costs, dtype=float),
        support.rows() + tuple(extra_rows),
        np.zeros(n),
        np.full(n, np.inf),
    )
    res = milp.solve_lp(lp)
    if res.status != milp.OPTIMAL:
        raise milp.SolverError(f"support point solve ended {res.status}")
    return res.solution


def _pick_target(support: Support, strategy: str) -> np.ndarray:
    if isinstance(support, BoxSupport):
        return support.upper.copy()
    if strategy == TARGET_MAX_SUM:
        return _polytope_lp(support, -np.ones(support.normals.shape[1]))
    if strategy == TARGET_NEAR_CEILING:
        # minimize the largest per-coordinate shortfall below the ceiling
        ceiling = support.coordinate_maxima
        n = ceiling.size
        costs = np.zeros(n + 1)
        costs[n] = 1.0
        rows = [
            milp.LinearRow(np.append(row.coeffs, 0.0), row.rel, row.rhs)
            for row in support.rows()
        ]
        for j in range(n):
            coeffs = np.zeros(n + 1)
            coeffs[j] = -1.0
            coeffs[n] = -1.0
            rows.append(milp.LinearRow(coeffs, milp.LESS_EQUAL, -float(ceiling[j])))
        lp = LinearProgram(
            np.array(costs), tuple(rows), np.zeros(n + 1), np.full(n + 1, np.inf)
        )
        res = milp.solve_lp(lp)
        if res.status != milp.OPTIMAL:
            raise milp.SolverError(f"support point solve ended {res.status}")
        return res.solution[:n]
    raise InputError(f"unknown target strategy {strategy!r}")


def _distort(dist: EmpiricalDistribution, target, factor):
    if math.isinf(factor):
        return dist
    moved = dist.realizations + (target - dist.realizations) / factor
    return EmpiricalDistribution(moved)


def build_plan(
    dist: EmpiricalDistribution,
    support: Support,
    spec: AmbiguitySpec,
    risk_spec: RiskSpec,
    target_strategy: str = TARGET_MAX_SUM,
) -> DistortionPlan:
    """Choose the target point and the smallest admissible move factor.

    The factor is the smallest value that keeps the move of any sample
    within a per-sample share of the transport budget, never below 1.
    A zero radius admits no factor; solve the empirical problem with
    risk.solve_cvar instead.
    """
    if isinstance(support, UnrestrictedSupport):
        raise InputError("sample distortion needs a bounded support")
    if spec.epsilon <= 0.0:
        raise InputError(
            "the move factor is undefined at radius zero; use risk.solve_cvar "
            "for the empirical problem"
        )
    if risk_spec.n_samples != dist.n_samples:
        raise InputError("risk spec sample count does not match the distribution")
    ensure_samples_in_support(dist, support)
    target = _pick_target(support, target_strategy)
    share = spec.epsilon * dist.n_samples / risk_spec.tail_count
    reach = max(
        _ground_norm(target - row, spec.q) for row in dist.realizations
    )
    factor = max(1.0, reach / share)
    if isinstance(support, BoxSupport):
        maxima = support.upper.copy()
    else:
        maxima = support.coordinate_maxima.copy()
    plan = DistortionPlan(
        target=target,
        factor=factor,
        coordinate_maxima=maxima,
        distorted=_distort(dist, target, factor),
    )
    ensure_samples_in_support(plan.distorted, support, tol=1e-6)
    return plan


def solve_distr_approx(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    support: Support,
    spec: AmbiguitySpec,
    risk_spec: RiskSpec,
    gap_tol: float = 0.0,
    target_strategy: str = TARGET_MAX_SUM,
) -> tuple[np.ndarray, float | None]:
    """Distort, minimize empirical risk, and certify the guarantee.

    Returns the solution and its certified approximation ratio: the move
    factor scaled by how far the ceiling vector overshoots the target on the
    chosen items.  When the target cost of the solution is zero the ratio is
    unavailable and None is returned in its place.
    """
    plan = build_plan(dist, support, spec, risk_spec, target_strategy)
    alpha = risk_spec.tail_count / risk_spec.n_samples
    report = risk.solve_cvar(problem, plan.distorted, alpha, gap_tol=gap_tol)
    x = report.solution
    target_cost = float(plan.target @ x)
    if target_cost <= 0.0:
        return x, None
    overshoot = max(1.0, float(plan.coordinate_maxima @ x) / target_cost)
    return x, overshoot * plan.factor


def solve_with_custom_c(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    support: Support,
    c_override: float,
    risk_spec: RiskSpec,
    gap_tol: float = 0.0,
) -> np.ndarray:
    """Run the distortion pipeline at a caller-chosen move factor.

    No ratio is certified.  A factor of 1 moves every sample onto the
    target; an infinite factor leaves the sample alone, reducing the solve
    to the empirical one.
    """
    if not c_override >= 1.0:
        raise InputError("the move factor must be at least 1")
    if isinstance(support, UnrestrictedSupport):
        raise InputError("sample distortion needs a bounded support")
    if risk_spec.n_samples != dist.n_samples:
        raise InputError("risk spec sample count does not match the distribution")
    ensure_samples_in_support(dist, support)
    target = _pick_target(support, TARGET_MAX_SUM)
    moved = _distort(dist, target, float(c_override))
    alpha = risk_spec.tail_count / risk_spec.n_samples
    report = risk.solve_cvar(problem, moved, alpha, gap_tol=gap_tol)
    return report.solution


def plan_to_doc(plan: DistortionPlan) -> dict:
    return {
        "target": plan.target.tolist(),
        "factor": plan.factor,
        "coordinate_maxima": plan.coordinate_maxima.tolist(),
        "distorted": plan.distorted.realizations.tolist(),
    }


def plan_from_doc(doc: dict) -> DistortionPlan:
    return DistortionPlan(
        target=np.asarray(doc["target"], dtype=float),
        factor=float(doc["factor"]),
        coordinate_maxima=np.asarray(doc["coordinate_maxima"], dtype=float),
        distorted=EmpiricalDistribution(doc["distorted"]),
    )
