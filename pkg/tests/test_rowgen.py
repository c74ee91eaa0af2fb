"""Cutting-plane solver tests: convergence, bounds, trace serialization."""

import itertools
import math

import numpy as np
import pytest

from drco import milp, risk, rowgen
from drco.milp import LinearRow
from drco.model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    RiskSpec,
)
from drco.rowgen import RowGenTrace, generate_cut, solve_distr_rowgen
from drco.worst_case import worst_distribution


def covering_set(weights, demand):
    row = LinearRow(np.asarray(weights, dtype=float), milp.GREATER_EQUAL,
                    float(demand))
    return FeasibleSet(len(weights), (row,), tag="covering")


def selection_set(groups, n_items):
    rows = []
    for members in groups:
        coeffs = np.zeros(n_items)
        coeffs[list(members)] = 1.0
        rows.append(LinearRow(coeffs, milp.EQUAL, 1.0))
    return FeasibleSet(n_items, tuple(rows), tag="selection")


def make_instance(rng, n_items, n_samples):
    samples = rng.uniform(0.3, 3.0, size=(n_samples, n_items))
    upper = samples.max(axis=0) + rng.uniform(0.3, 1.5, size=n_items)
    return EmpiricalDistribution(samples), BoxSupport(np.zeros(n_items), upper)


def enumerate_feasible(problem):
    for bits in itertools.product((0.0, 1.0), repeat=problem.n_items):
        x = np.array(bits)
        if problem.contains(x):
            yield x


def brute_robust(problem, dist, support, spec, risk_spec):
    best = np.inf
    for x in enumerate_feasible(problem):
        cert = worst_distribution(x, dist, support, spec, risk_spec)
        best = min(best, cert.value)
    return best


def test_converges_to_enumerated_optimum():
    rng = np.random.default_rng(83)
    for trial in range(10):
        n_items = int(rng.integers(2, 5))
        n_samples = int(rng.integers(2, 5))
        dist, support = make_instance(rng, n_items, n_samples)
        if trial % 2:
            weights = rng.uniform(0.5, 2.0, size=n_items)
            problem = covering_set(
                weights, float(weights.sum() * rng.uniform(0.3, 0.8))
            )
        else:
            split = max(1, n_items // 2)
            problem = selection_set([range(split), range(split, n_items)], n_items)
        q = [1.0, math.inf][trial % 2]
        spec = AmbiguitySpec(float(rng.uniform(0.05, 0.6)), q)
        tail = int(rng.integers(1, n_samples + 1))
        risk_spec = RiskSpec.from_alpha(tail / n_samples, n_samples)
        report, trace = solve_distr_rowgen(
            problem, dist, support, spec, risk_spec, rel_gap=1e-8, max_iter=60
        )
        best = brute_robust(problem, dist, support, spec, risk_spec)
        assert report.status == milp.OPTIMAL
        assert report.objective == pytest.approx(best, rel=1e-6, abs=1e-8)
        assert problem.contains(report.solution)


def test_euclidean_ground_norm_converges_loosely():
    rng = np.random.default_rng(89)
    dist, support = make_instance(rng, 3, 3)
    problem = covering_set(np.ones(3), 1.5)
    spec = AmbiguitySpec(0.2, 2.0)
    risk_spec = RiskSpec.from_alpha(2 / 3, 3)
    report, trace = solve_distr_rowgen(
        problem, dist, support, spec, risk_spec, rel_gap=1e-5, max_iter=60
    )
    best = brute_robust(problem, dist, support, spec, risk_spec)
    assert report.objective == pytest.approx(best, rel=1e-4)


def test_trace_bounds_and_csv():
    rng = np.random.default_rng(97)
    dist, support = make_instance(rng, 3, 4)
    problem = covering_set(rng.uniform(0.5, 2.0, size=3), 1.2)
    spec = AmbiguitySpec(0.3, 1.0)
    risk_spec = RiskSpec.from_alpha(0.5, 4)
    report, trace = solve_distr_rowgen(
        problem, dist, support, spec, risk_spec, rel_gap=1e-8, max_iter=50
    )
    lows = [it.lower_bound for it in trace.iterations]
    ups = [it.upper_bound for it in trace.iterations]
    assert all(a <= b + 1e-9 for a, b in zip(lows, lows[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(ups, ups[1:]))
    for it in trace.iterations:
        assert it.lower_bound <= it.upper_bound + 1e-9
        assert it.adversary_ms >= 0.0
    assert trace.reason == "gap closed"
    text = trace.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "iteration,z_lb,z_ub,gap,adversary_ms"
    assert len(lines) == len(trace.iterations) + 1
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert float(first[2]) == pytest.approx(trace.iterations[0].upper_bound,
                                            rel=1e-9)


def test_zero_radius_reaches_risk_minimum():
    rng = np.random.default_rng(101)
    dist, support = make_instance(rng, 4, 4)
    problem = covering_set(rng.uniform(0.5, 1.5, size=4), 1.5)
    risk_spec = RiskSpec.from_alpha(0.5, 4)
    report, _ = solve_distr_rowgen(
        problem, dist, support, AmbiguitySpec(0.0, 1.0), risk_spec,
        rel_gap=1e-9, max_iter=60,
    )
    direct = risk.solve_cvar(problem, dist, 0.5)
    assert report.objective == pytest.approx(direct.objective, rel=1e-8)


def test_first_cut_uses_leading_samples_in_order():
    # put the largest costs last so input order and cost order disagree
    dist = EmpiricalDistribution([[1.0], [2.0], [9.0], [8.0]])
    support = BoxSupport(np.zeros(1), np.array([12.0]))
    problem = covering_set(np.ones(1), 0.5)  # forces x = (1,)
    risk_spec = RiskSpec.from_alpha(0.5, 4)
    _, trace = solve_distr_rowgen(
        problem, dist, support, AmbiguitySpec(0.1, 1.0), risk_spec,
        rel_gap=1e-9, max_iter=20,
    )
    # the first master sees only the cut (1/2)(sample_1 + sample_2)
    assert trace.iterations[0].lower_bound == pytest.approx(1.5)


def test_generate_cut_tight_at_its_solution():
    rng = np.random.default_rng(103)
    dist, support = make_instance(rng, 3, 4)
    x = np.array([1.0, 0.0, 1.0])
    risk_spec = RiskSpec.from_alpha(0.5, 4)
    spec = AmbiguitySpec(0.25, 1.0)
    cert = worst_distribution(x, dist, support, spec, risk_spec)
    zeta = generate_cut(cert, 2)
    assert float(zeta @ x) == pytest.approx(cert.value, abs=1e-9)
    for other in itertools.product((0.0, 1.0), repeat=3):
        other = np.array(other)
        bound = worst_distribution(other, dist, support, spec, risk_spec).value
        assert float(zeta @ other) <= bound + 1e-9


def test_stall_detection(monkeypatch):
    rng = np.random.default_rng(107)
    dist, support = make_instance(rng, 2, 3)
    problem = covering_set(np.ones(2), 0.5)
    risk_spec = RiskSpec.from_alpha(1 / 3, 3)
    frozen = np.zeros(2)
    monkeypatch.setattr(rowgen, "generate_cut", lambda cert, tail: frozen)
    report, trace = solve_distr_rowgen(
        problem, dist, support, AmbiguitySpec(0.3, 1.0), risk_spec,
        rel_gap=1e-12, max_iter=50,
    )
    assert trace.reason == "stalled on duplicate cuts"
    assert report.status == milp.GAP_REACHED
    assert report.objective is not None and report.solution is not None


def test_iteration_budget_reports_gap():
    rng = np.random.default_rng(109)
    dist, support = make_instance(rng, 3, 3)
    problem = covering_set(np.ones(3), 1.5)
    risk_spec = RiskSpec.from_alpha(2 / 3, 3)
    report, trace = solve_distr_rowgen(
        problem, dist, support, AmbiguitySpec(0.4, 1.0), risk_spec,
        rel_gap=1e-12, max_iter=1,
    )
    assert report.status in (milp.OPTIMAL, milp.GAP_REACHED)
    if report.status == milp.GAP_REACHED:
        assert trace.reason == "iteration budget exhausted"
        assert report.gap_abs >= 0.0


def test_rejects_bad_configuration():
    dist = EmpiricalDistribution([[1.0], [2.0]])
    support = BoxSupport(np.zeros(1), np.array([4.0]))
    problem = covering_set(np.ones(1), 0.5)
    good = RiskSpec.from_alpha(0.5, 2)
    with pytest.raises(InputError, match="positive"):
        solve_distr_rowgen(problem, dist, support, AmbiguitySpec(0.1, 1.0),
                           good, rel_gap=0.0)
    with pytest.raises(InputError, match="round"):
        solve_distr_rowgen(problem, dist, support, AmbiguitySpec(0.1, 1.0),
                           RiskSpec.from_alpha(0.7, 2))
    with pytest.raises(InputError, match="at least 1"):
        solve_distr_rowgen(problem, dist, support, AmbiguitySpec(0.1, 1.0),
                           good, max_iter=0)


def test_trace_default_is_empty():
    trace = RowGenTrace()
    assert trace.iterations == []
    assert trace.to_csv().startswith("iteration,")
