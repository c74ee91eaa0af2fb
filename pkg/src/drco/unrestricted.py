"""Exact robust solvers built on closed forms of the worst-case risk.

Over the nonnegative orthant the worst-case risk is the empirical risk plus a
regularizer that depends on the solution only through its cardinality, so the
robust problem collapses to a handful of risk minimizations: a single solve
for the sum and sup ground norms, and one solve per cardinality bound in
between.  A bounded box with the sum ground norm gets its own two-solve
shortcut.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import milp, risk
from .milp import LinearRow, SolveReport
from .model import (
    AmbiguitySpec,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    UnrestrictedSupport,
    ensure_samples_in_support,
    risk_bracket,
)
from .worst_case import (
    closed_form_box_q1,
    count_norm_term,
    tail_scale,
    worst_value_unrestricted,
)


@dataclass
class CardinalityFamilyReport:
    """Outcome of the per-cardinality sweep for intermediate ground norms."""

    per_count: dict[int, SolveReport] = field(default_factory=dict)
    winning_count: int = -1
    solution: np.ndarray | None = None
    objective: float | None = None


def _solve_deterministic(problem: FeasibleSet, costs, gap_tol):
    model = problem.deterministic_model(np.asarray(costs, dtype=float))
    report = milp.solve_mixed(model, gap_tol=gap_tol)
    if report.status not in (milp.OPTIMAL, milp.GAP_REACHED):
        raise milp.SolverError(f"deterministic solve ended {report.status}")
    report.solution = np.round(report.solution[: problem.n_items])
    return report


def cardinality_range(problem: FeasibleSet) -> tuple[int, int]:
    """Smallest and largest number of picked items over the feasible set."""
    lo = _solve_deterministic(problem, np.ones(problem.n_items), 0.0)
    hi = _solve_deterministic(problem, -np.ones(problem.n_items), 0.0)
    return int(round(lo.objective)), int(round(-hi.objective))


def _zero_report(n_items: int) -> SolveReport:
    report = SolveReport(status=milp.OPTIMAL)
    report.objective = 0.0
    report.solution = np.zeros(n_items)
    return report


def _validate(problem, dist, alpha):
    if problem.n_items != dist.n_items:
        raise InputError("feasible set and samples disagree on the item count")
    ensure_samples_in_support(dist, UnrestrictedSupport(dist.n_items))
    risk_bracket(alpha, dist.n_samples)


def solve_cardinality_family(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    spec: AmbiguitySpec,
    alpha: float,
    gap_tol: float = 0.0,
) -> CardinalityFamilyReport:
    """Sweep a cardinality cap over its feasible range and keep the best.

    Adding the cap's norm penalty as a constant makes each sweep member an
    ordinary risk minimization; the best member attains the robust optimum,
    and its objective equals the worst-case value of its own solution.
    """
    _validate(problem, dist, alpha)
    n = problem.n_items
    gain = tail_scale(alpha, dist.n_samples)
    n_min, n_max = cardinality_range(problem)
    family = CardinalityFamilyReport()
    best = np.inf
    for count in range(n_min, n_max + 1):
        if count == 0:
            report = _zero_report(n)
        else:
            model = risk.cvar_model(problem, dist, alpha)
            cap = np.zeros(model.lp.costs.size)
            cap[:n] = 1.0
            model = milp.MixedModel(
                lp=milp.LinearProgram(
                    model.lp.costs,
                    model.lp.rows + (LinearRow(cap, milp.LESS_EQUAL, float(count)),),
                    model.lp.lower,
                    model.lp.upper,
                ),
                binary_idx=model.binary_idx,
            )
            report = milp.solve_mixed(model, gap_tol=gap_tol)
            if report.status not in (milp.OPTIMAL, milp.GAP_REACHED):
                raise milp.SolverError(f"cardinality sweep ended {report.status}")
            report.solution = np.round(report.solution[:n])
            report.objective += gain * spec.epsilon * count_norm_term(count, spec.q)
        family.per_count[count] = report
        if report.objective < best - 1e-12:
            best = report.objective
            family.winning_count = count
            family.solution = report.solution
            family.objective = report.objective
    return family


def solve_distr_unrestricted(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    spec: AmbiguitySpec,
    alpha: float,
    gap_tol: float = 0.0,
) -> SolveReport:
    """Robust minimization over the nonnegative orthant.

    The sum ground norm adds a flat penalty to every nonempty solution, the
    sup norm adds a per-item one, and intermediate norms go through the
    cardinality sweep.
    """
    _validate(problem, dist, alpha)
    n = problem.n_items
    gain = tail_scale(alpha, dist.n_samples)
    if spec.q == 1.0:
        report = risk.solve_cvar(problem, dist, alpha, gap_tol=gap_tol)
        if report.solution.sum() > 0.5:
            report.objective += gain * spec.epsilon
        if problem.contains(np.zeros(n)) and report.objective > 1e-12:
            report = _zero_report(n)
    elif spec.q == np.inf:
        model = risk.cvar_model(problem, dist, alpha)
        costs = model.lp.costs.copy()
        costs[:n] += gain * spec.epsilon
        model = milp.MixedModel(
            lp=milp.LinearProgram(
                costs, model.lp.rows, model.lp.lower, model.lp.upper
            ),
            binary_idx=model.binary_idx,
        )
        report = milp.solve_mixed(model, gap_tol=gap_tol)
        if report.status not in (milp.OPTIMAL, milp.GAP_REACHED):
            raise milp.SolverError(f"robust solve ended {report.status}")
        report.solution = np.round(report.solution[:n])
    else:
        family = solve_cardinality_family(problem, dist, spec, alpha, gap_tol)
        report = SolveReport(status=family.per_count[family.winning_count].status)
        report.objective = family.objective
        report.solution = family.solution
    check = worst_value_unrestricted(report.solution, dist, spec, alpha)
    if abs(check - report.objective) > 1e-6 + gap_tol * (1.0 + abs(check)):
        raise milp.SolverError(
            "robust objective disagrees with the worst-case value of its solution"
        )
    return report


def solve_expectation_unrestricted(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    spec: AmbiguitySpec,
    gap_tol: float = 0.0,
) -> SolveReport:
    """Robust expectation minimization (risk level one) over the orthant.

    The worst-case mean is the sample mean plus the norm penalty, so the sup
    ground norm reduces to one deterministic solve with shifted costs.
    """
    _validate(problem, dist, 1.0)
    n = problem.n_items
    mean = dist.mean()
    if spec.q == np.inf:
        report = _solve_deterministic(problem, mean + spec.epsilon, gap_tol)
    elif spec.q == 1.0:
        report = _solve_deterministic(problem, mean, gap_tol)
        if report.solution.sum() > 0.5:
            report.objective += spec.epsilon
        if problem.contains(np.zeros(n)) and report.objective > 1e-12:
            report = _zero_report(n)
    else:
        return solve_distr_unrestricted(problem, dist, spec, 1.0, gap_tol)
    check = worst_value_unrestricted(report.solution, dist, spec, 1.0)
    if abs(check - report.objective) > 1e-6 + gap_tol * (1.0 + abs(check)):
        raise milp.SolverError(
            "robust objective disagrees with the worst-case value of its solution"
        )
    return report


def gamma_approx_heuristic(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    spec: AmbiguitySpec,
    alpha: float,
    gap_tol: float = 0.0,
) -> tuple[np.ndarray, float]:
    """Solve the robust expectation problem as a stand-in for the risk one.

    Returns the solution and the factor by which its worst-case risk can
    exceed the true robust optimum: N below risk levels of 1/N, else the
    reciprocal level.
    """
    risk_bracket(alpha, dist.n_samples)
    report = solve_expectation_unrestricted(problem, dist, spec, gap_tol)
    return report.solution, tail_scale(alpha, dist.n_samples)


def solve_box_q1_two_solve(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    b: np.ndarray,
    epsilon: float,
    alpha: float,
    gap_tol: float = 0.0,
) -> SolveReport:
    """Box support with the sum ground norm: compare two candidate solves.

    The worst-case value of any solution is the smaller of its ceiling cost
    and its empirical risk plus a solution-independent shift, so the robust
    optimum is attained by the ceiling minimizer or the risk minimizer.
    Requires the risk level to be an exact sample fraction; ties go to the
    risk minimizer.
    """
    b = np.asarray(b, dtype=float)
    if problem.n_items != dist.n_items:
        raise InputError("feasible set and samples disagree on the item count")
    tail_count, exact = risk_bracket(alpha, dist.n_samples)
    if not exact:
        raise InputError(
            f"risk level must be an exact fraction of the sample count; "
            f"round alpha to {tail_count}/{dist.n_samples}"
        )
    cap_rep = _solve_deterministic(problem, b, gap_tol)
    risk_rep = risk.solve_cvar(problem, dist, alpha, gap_tol=gap_tol)
    cap_val = closed_form_box_q1(cap_rep.solution, dist, b, epsilon, tail_count)
    risk_val = closed_form_box_q1(risk_rep.solution, dist, b, epsilon, tail_count)
    report = SolveReport(status=milp.OPTIMAL)
    if risk_val <= cap_val:
        report.solution, report.objective = risk_rep.solution, risk_val
    else:
        report.solution, report.objective = cap_rep.solution, cap_val
    return report
