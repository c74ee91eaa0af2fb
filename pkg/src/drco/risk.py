"""Conditional value at risk over equally weighted cost samples.

The risk functional admits three equivalent routes that the tests play against
each other: an ordered weighted average of the sorted costs, a small linear
program, and a mixed-binary program that optimizes the risk over a feasible
set.  `risk_bracket` locates the tail bracket (l-1)/N < alpha <= l/N that the
weight formula needs.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from . import milp
from .milp import LinearProgram, LinearRow, MixedModel, SolveReport

if TYPE_CHECKING:
    from .model import EmpiricalDistribution, FeasibleSet

# re-exported here because the bracket is risk logic, whatever module keeps it
from .model import InputError, risk_bracket  # noqa: F401


def owa_weights(alpha: float, n_samples: int) -> np.ndarray:
    """Weights on the descending-sorted costs that realize the risk value.

    Below alpha = 1/N all weight sits on the single largest cost.  Otherwise
    the first l-1 positions get 1/(alpha N), position l the remainder, and the
    rest zero, where l is the tail count of `risk_bracket`.
    """
    tail, _ = risk_bracket(alpha, n_samples)
    w = np.zeros(n_samples)
    if alpha < 1.0 / n_samples:
        w[0] = 1.0
        return w
    share = 1.0 / (alpha * n_samples)
    w[: tail - 1] = share
    w[tail - 1] = 1.0 - (tail - 1) * share
    return w


def sorted_costs(dist: "EmpiricalDistribution", x: np.ndarray) -> np.ndarray:
    """Per-realization costs sorted descending, ties by realization index."""
    costs = dist.costs(x)
    order = np.argsort(-costs, kind="stable")
    return costs[order]


def cvar_discrete(dist: "EmpiricalDistribution", x: np.ndarray, alpha: float) -> float:
    """Risk value of a fixed solution: weighted average of the sorted costs."""
    w = owa_weights(alpha, dist.n_samples)
    return float(w @ sorted_costs(dist, x))


def cvar_lp(dist: "EmpiricalDistribution", x: np.ndarray, alpha: float) -> float:
    """Same value through the threshold-plus-overshoot linear program.

    Variables are a free threshold t and per-realization overshoots u_i >= 0
    with u_i + t at least the realization cost; the objective is
    t + (1/(alpha N)) * sum(u).
    """
    n_samples = dist.n_samples
    costs_x = dist.costs(x)
    nv = 1 + n_samples
    objective = np.full(nv, 1.0 / (alpha * n_samples))
    objective[0] = 1.0
    rows = []
    for i in range(n_samples):
        a = np.zeros(nv)
        a[0] = 1.0
        a[1 + i] = 1.0
        rows.append(LinearRow(a, milp.GREATER_EQUAL, costs_x[i]))
    lower = np.zeros(nv)
    lower[0] = -np.inf
    res = milp.solve_lp(
        LinearProgram(objective, tuple(rows), lower, np.full(nv, np.inf))
    )
    if res.status != milp.OPTIMAL:
        raise milp.SolverError(f"risk evaluation LP ended {res.status}")
    return res.objective


def cvar_model(
    problem: "FeasibleSet", dist: "EmpiricalDistribution", alpha: float
) -> MixedModel:
    """Mixed-binary model minimizing the risk over the feasible set.

    Variable layout: x (n binaries), then the threshold t, then the N
    overshoots.  Rows: realization costs tied to t and u, then the feasible
    set's own rows.
    """
    n = problem.n_items
    n_samples = dist.n_samples
    if dist.n_items != n:
        raise InputError("sample width does not match the number of items")
    nv = n + 1 + n_samples
    objective = np.zeros(nv)
    objective[n] = 1.0
    objective[n + 1 :] = 1.0 / (alpha * n_samples)
    rows = []
    for i in range(n_samples):
        a = np.zeros(nv)
        a[:n] = dist.realizations[i]
        a[n] = -1.0
        a[n + 1 + i] = -1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, 0.0))
    for row in problem.rows:
        a = np.zeros(nv)
        a[:n] = row.coeffs
        rows.append(LinearRow(a, row.rel, row.rhs))
    lower = np.zeros(nv)
    lower[n] = -np.inf
    upper = np.full(nv, np.inf)
    upper[:n] = 1.0
    lp = LinearProgram(objective, tuple(rows), lower, upper)
    return MixedModel(lp=lp, binary_idx=tuple(range(n)))


def solve_cvar(
    problem: "FeasibleSet",
    dist: "EmpiricalDistribution",
    alpha: float,
    gap_tol: float = 0.0,
    max_nodes: int = 500_000,
) -> SolveReport:
    """Minimize the risk of the solution cost over the feasible set."""
    risk_bracket(alpha, dist.n_samples)  # validates alpha
    model = cvar_model(problem, dist, alpha)
    report = milp.solve_mixed(model, gap_tol=gap_tol, max_nodes=max_nodes)
    if report.status in (milp.OPTIMAL, milp.GAP_REACHED) and report.solution is not None:
        x = np.round(report.solution[: problem.n_items])
        report.solution = x
        check = cvar_discrete(dist, x, alpha)
        if abs(check - report.objective) > 1e-6 * (1.0 + abs(check)):
            raise milp.SolverError(
                "risk model objective disagrees with the sorted-cost evaluation"
            )
    return report


def mean_heuristic(
    problem: "FeasibleSet",
    dist: "EmpiricalDistribution",
    alpha: float,
    gap_tol: float = 0.0,
) -> tuple[np.ndarray, float]:
    """Minimize the mean sample cost; approximation ratio min(N, 1/alpha).

    The returned solution's risk is at most that factor times the optimal
    risk, since the mean bounds the risk from below and the risk is at most
    min(N, 1/alpha) times the mean for nonnegative costs.
    """
    risk_bracket(alpha, dist.n_samples)
    model = problem.deterministic_model(dist.mean())
    report = milp.solve_mixed(model, gap_tol=gap_tol)
    if report.status != milp.OPTIMAL:
        raise milp.SolverError(f"mean-cost model ended {report.status}")
    ratio = min(float(dist.n_samples), 1.0 / alpha)
    return np.round(report.solution), ratio
