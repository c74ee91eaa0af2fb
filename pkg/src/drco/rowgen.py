"""Cutting-plane solver for robust risk minimization on bounded supports.

The master problem minimizes an epigraph variable over the feasible set,
constrained by linear cuts that underestimate the worst-case risk.  Each
round solves the master, asks the adversary for the worst distribution at the
master solution, turns its lifted tail into a new cut, and stops once the
bound gap closes.  A cut is the average of the lifted tail realizations, so
it is tight at the solution that generated it and valid everywhere else.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import milp
from .milp import LinearRow, SolveReport
from .model import (
    AmbiguitySpec,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    RiskSpec,
    Support,
)
from .worst_case import WorstCaseCertificate, worst_distribution

_DUPLICATE_TOL = 1e-9
_MAX_STALLS = 3


@dataclass
class CutSet:
    """Accumulated cuts with the iteration and solution that produced each."""

    vectors: list[np.ndarray] = field(default_factory=list)
    provenance: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.vectors)

    def is_duplicate(self, zeta: np.ndarray) -> bool:
        return any(
            float(np.max(np.abs(zeta - seen))) <= _DUPLICATE_TOL
            for seen in self.vectors
        )

    def add(self, zeta: np.ndarray, iteration: int, x: np.ndarray) -> None:
        self.vectors.append(np.asarray(zeta, dtype=float))
        self.provenance.append((iteration, np.asarray(x, dtype=float).copy()))


@dataclass
class RowGenIterate:
    iteration: int
    lower_bound: float
    upper_bound: float
    adversary_value: float
    adversary_ms: float


@dataclass
class RowGenTrace:
    """Per-iteration bounds of one cutting-plane run."""

    iterations: list[RowGenIterate] = field(default_factory=list)
    reason: str = ""

    def to_csv(self) -> str:
        lines = ["iteration,z_lb,z_ub,gap,adversary_ms"]
        for it in self.iterations:
            lines.append(
                f"{it.iteration},{it.lower_bound:.12g},{it.upper_bound:.12g},"
                f"{it.upper_bound - it.lower_bound:.12g},{it.adversary_ms:.3f}"
            )
        return "\n".join(lines) + "\n"


def generate_cut(certificate: WorstCaseCertificate, tail_count: int) -> np.ndarray:
    """Average of the lifted tail realizations, a valid lower estimate."""
    subset = list(certificate.active_subset)
    if len(subset) != tail_count:
        raise InputError("certificate tail size does not match the risk level")
    return certificate.distribution.realizations[subset].mean(axis=0)


def _master_model(problem: FeasibleSet) -> milp.MixedModel:
    n = problem.n_items
    rows = tuple(
        LinearRow(np.append(row.coeffs, 0.0), row.rel, row.rhs)
        for row in problem.rows
    )
    costs = np.zeros(n + 1)
    costs[n] = 1.0
    lower = np.zeros(n + 1)
    upper = np.ones(n + 1)
    upper[n] = np.inf
    return milp.MixedModel(
        lp=milp.LinearProgram(costs, rows, lower, upper),
        binary_idx=tuple(range(n)),
    )


def _cut_row(zeta: np.ndarray) -> LinearRow:
    return LinearRow(np.append(zeta, -1.0), milp.LESS_EQUAL, 0.0)


def _gap_closed(z_lb: float, z_ub: float, rel_gap: float) -> bool:
    if z_lb > 0.0:
        return (z_ub - z_lb) / z_lb <= rel_gap
    return z_ub - z_lb <= rel_gap


def solve_distr_rowgen(
    problem: FeasibleSet,
    dist: EmpiricalDistribution,
    support: Support,
    spec: AmbiguitySpec,
    risk_spec: RiskSpec,
    rel_gap: float = 1e-6,
    max_iter: int = 100,
) -> tuple[SolveReport, RowGenTrace]:
    """Minimize the worst-case risk by alternating master and adversary.

    Stops with status "optimal" once the relative bound gap (absolute when
    the lower bound is not positive) falls under rel_gap, and with
    "gap_reached" on the iteration budget or three non-improving rounds.
    The first cut averages the leading tail-count samples in input order.
    """
    if rel_gap <= 0.0:
        raise InputError("relative gap tolerance must be positive")
    if max_iter < 1:
        raise InputError("iteration budget must be at least 1")
    if problem.n_items != dist.n_items:
        raise InputError("feasible set and samples disagree on the item count")
    if not risk_spec.is_exact_fraction:
        raise InputError(
            f"risk level must be an exact fraction of the sample count; "
            f"round alpha to {risk_spec.tail_count}/{risk_spec.n_samples}"
        )
    tail_count = risk_spec.tail_count
    base = _master_model(problem)
    cuts = CutSet()
    cuts.add(dist.realizations[:tail_count].mean(axis=0), 0, np.zeros(dist.n_items))
    trace = RowGenTrace()
    z_ub = np.inf
    incumbent = None
    stalls = 0
    status = milp.GAP_REACHED
    start = time.perf_counter()
    for iteration in range(1, max_iter + 1):
        master = milp.resolve_with_added_rows(
            base, [_cut_row(z) for z in cuts.vectors]
        )
        if master.status != milp.OPTIMAL:
            raise milp.SolverError(f"master solve ended {master.status}")
        z_lb = float(master.objective)
        x = np.round(master.solution[: problem.n_items])
        tick = time.perf_counter()
        cert = worst_distribution(x, dist, support, spec, risk_spec)
        adversary_ms = (time.perf_counter() - tick) * 1e3
        if cert.value < z_ub:
            z_ub = cert.value
            incumbent = x
        trace.iterations.append(
            RowGenIterate(iteration, z_lb, z_ub, cert.value, adversary_ms)
        )
        if z_lb > z_ub + 1e-9:
            raise milp.SolverError("lower bound overtook the upper bound")
        if _gap_closed(z_lb, z_ub, rel_gap):
            status = milp.OPTIMAL
            trace.reason = "gap closed"
            break
        zeta = generate_cut(cert, tail_count)
        if cuts.is_duplicate(zeta):
            stalls += 1
            if stalls >= _MAX_STALLS:
                trace.reason = "stalled on duplicate cuts"
                break
        else:
            stalls = 0
            cuts.add(zeta, iteration, x)
    else:
        trace.reason = "iteration budget exhausted"

    report = SolveReport(status=status)
    report.objective = z_ub
    report.solution = incumbent
    report.cuts = len(cuts)
    last = trace.iterations[-1]
    report.gap_abs = last.upper_bound - last.lower_bound
    if last.lower_bound > 0.0:
        report.gap_rel = report.gap_abs / last.lower_bound
    else:
        report.gap_rel = np.inf if report.gap_abs > 0 else 0.0
    report.wall_ms = (time.perf_counter() - start) * 1e3
    return report, trace
