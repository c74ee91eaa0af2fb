"""Distortion approximation tests: plan shape, guarantees, custom factors."""

import itertools
import json
import math

import numpy as np
import pytest

from drco import milp, risk
from drco.distort import (
    TARGET_MAX_SUM,
    TARGET_NEAR_CEILING,
    build_plan,
    plan_from_doc,
    plan_to_doc,
    solve_distr_approx,
    solve_with_custom_c,
)
from drco.milp import LinearRow
from drco.model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    PolytopeSupport,
    RiskSpec,
    UnrestrictedSupport,
)
from drco.worst_case import worst_distribution


def covering_set(weights, demand):
    row = LinearRow(np.asarray(weights, dtype=float), milp.GREATER_EQUAL,
                    float(demand))
    return FeasibleSet(len(weights), (row,), tag="covering")


def enumerate_feasible(problem):
    for bits in itertools.product((0.0, 1.0), repeat=problem.n_items):
        x = np.array(bits)
        if problem.contains(x):
            yield x


def test_plan_frozen_square_example():
    dist = EmpiricalDistribution([[0.0, 0.0]])
    support = BoxSupport(np.zeros(2), np.ones(2))
    spec = AmbiguitySpec(epsilon=0.5, q=math.inf)
    rs = RiskSpec.from_alpha(1.0, 1)  # share of budget per sample = 0.5
    plan = build_plan(dist, support, spec, rs)
    assert plan.factor == pytest.approx(2.0)
    np.testing.assert_allclose(plan.target, [1.0, 1.0])
    np.testing.assert_allclose(plan.distorted.realizations, [[0.5, 0.5]])


def test_plan_factor_floors_at_one():
    # samples already at the target: nothing to move
    dist = EmpiricalDistribution([[2.0, 3.0], [2.0, 3.0]])
    support = BoxSupport(np.zeros(2), np.array([2.0, 3.0]))
    rs = RiskSpec.from_alpha(0.5, 2)
    plan = build_plan(dist, support, AmbiguitySpec(0.1, 1.0), rs)
    assert plan.factor == 1.0
    np.testing.assert_allclose(plan.distorted.realizations, dist.realizations)
    # a huge radius collapses every sample onto the target
    far = EmpiricalDistribution([[0.1, 0.2], [1.0, 0.5]])
    plan = build_plan(far, support, AmbiguitySpec(100.0, 1.0), rs)
    assert plan.factor == 1.0
    np.testing.assert_allclose(
        plan.distorted.realizations, [[2.0, 3.0], [2.0, 3.0]]
    )


def test_plan_line_segment_property():
    rng = np.random.default_rng(3)
    for q in (1.0, 2.0, math.inf):
        samples = rng.uniform(0.0, 2.0, size=(4, 3))
        upper = samples.max(axis=0) + 1.0
        dist = EmpiricalDistribution(samples)
        support = BoxSupport(np.zeros(3), upper)
        rs = RiskSpec.from_alpha(0.5, 4)
        plan = build_plan(dist, support, AmbiguitySpec(0.2, q), rs)
        c = plan.factor
        assert c >= 1.0
        expect = ((c - 1.0) / c) * samples + plan.target / c
        np.testing.assert_allclose(plan.distorted.realizations, expect,
                                   atol=1e-12)
        # the smallest admissible factor: every move fits the per-sample share
        share = 0.2 * 4 / rs.tail_count
        dists = [np.linalg.norm(plan.target - row, np.inf if q == math.inf
                                else q) for row in samples]
        assert max(dists) <= c * share + 1e-9
        if c > 1.0:
            assert max(dists) == pytest.approx(c * share)


def test_box_support_certifies_the_move_factor():
    rng = np.random.default_rng(7)
    samples = rng.uniform(0.2, 1.5, size=(3, 3))
    dist = EmpiricalDistribution(samples)
    support = BoxSupport(np.zeros(3), samples.max(axis=0) + 0.5)
    problem = covering_set(np.ones(3), 1.0)
    rs = RiskSpec.from_alpha(2 / 3, 3)
    spec = AmbiguitySpec(0.15, 1.0)
    x, ratio = solve_distr_approx(problem, dist, support, spec, rs)
    plan = build_plan(dist, support, spec, rs)
    assert ratio == pytest.approx(plan.factor)
    assert problem.contains(x)


def test_guarantee_against_enumerated_optimum():
    rng = np.random.default_rng(11)
    for trial in range(12):
        n_items = int(rng.integers(2, 5))
        n_samples = int(rng.integers(2, 5))
        samples = rng.uniform(0.2, 2.0, size=(n_samples, n_items))
        dist = EmpiricalDistribution(samples)
        support = BoxSupport(
            np.zeros(n_items),
            samples.max(axis=0) + rng.uniform(0.2, 1.0, size=n_items),
        )
        weights = rng.uniform(0.5, 1.5, size=n_items)
        problem = covering_set(weights, float(weights.sum() * 0.4))
        q = [1.0, 2.0, math.inf][trial % 3]
        spec = AmbiguitySpec(float(rng.uniform(0.05, 0.5)), q)
        tail = int(rng.integers(1, n_samples + 1))
        rs = RiskSpec.from_alpha(tail / n_samples, n_samples)
        x, ratio = solve_distr_approx(problem, dist, support, spec, rs)
        assert ratio is not None and ratio >= 1.0
        own = worst_distribution(x, dist, support, spec, rs).value
        best = min(
            worst_distribution(cand, dist, support, spec, rs).value
            for cand in enumerate_feasible(problem)
        )
        assert own <= ratio * best + 1e-6


def test_polytope_ratio_scales_with_ceiling_overshoot():
    # simplex face: the ceiling vector (2, 2) is not attainable, so the
    # certificate pays the overshoot on top of the move factor
    poly = PolytopeSupport(np.array([[1.0, 1.0]]), np.array([2.0]))
    dist = EmpiricalDistribution([[0.5, 0.5], [1.0, 0.4]])
    problem = covering_set(np.ones(2), 2.0)  # forces both items
    rs = RiskSpec.from_alpha(0.5, 2)
    spec = AmbiguitySpec(0.3, 1.0)
    x, ratio = solve_distr_approx(problem, dist, poly, spec, rs)
    plan = build_plan(dist, poly, spec, rs)
    target_cost = float(plan.target @ x)
    assert target_cost > 0
    expected_overshoot = float(plan.coordinate_maxima @ x) / target_cost
    assert ratio == pytest.approx(plan.factor * max(1.0, expected_overshoot))
    assert ratio >= plan.factor


def test_factor_one_minimizes_target_cost():
    rng = np.random.default_rng(13)
    samples = rng.uniform(0.0, 1.0, size=(3, 4))
    dist = EmpiricalDistribution(samples)
    upper = samples.max(axis=0) + rng.uniform(0.1, 2.0, size=4)
    support = BoxSupport(np.zeros(4), upper)
    problem = covering_set(np.ones(4), 2.0)
    rs = RiskSpec.from_alpha(1 / 3, 3)
    x = solve_with_custom_c(problem, dist, support, 1.0, rs)
    best = min(float(upper @ cand) for cand in enumerate_feasible(problem))
    assert float(upper @ x) == pytest.approx(best)


def test_infinite_factor_is_the_empirical_solve():
    rng = np.random.default_rng(17)
    samples = rng.uniform(0.2, 2.0, size=(4, 3))
    dist = EmpiricalDistribution(samples)
    support = BoxSupport(np.zeros(3), samples.max(axis=0) + 1.0)
    problem = covering_set(np.ones(3), 1.5)
    rs = RiskSpec.from_alpha(0.5, 4)
    x = solve_with_custom_c(problem, dist, support, math.inf, rs)
    direct = risk.solve_cvar(problem, dist, 0.5)
    assert risk.cvar_discrete(dist, x, 0.5) == pytest.approx(direct.objective)


def test_factor_sweep_stays_feasible():
    rng = np.random.default_rng(19)
    samples = rng.uniform(0.2, 1.5, size=(3, 3))
    dist = EmpiricalDistribution(samples)
    support = BoxSupport(np.zeros(3), samples.max(axis=0) + 0.8)
    problem = covering_set(np.ones(3), 1.0)
    rs = RiskSpec.from_alpha(2 / 3, 3)
    for c in (1.0, 1.5, 2.0, 4.0, 16.0, math.inf):
        x = solve_with_custom_c(problem, dist, support, c, rs)
        assert problem.contains(x)


def test_uncertified_when_target_cost_vanishes():
    # the only allowed item has a hard zero ceiling, so the target cost is 0
    dist = EmpiricalDistribution([[0.0, 1.0], [0.0, 0.5]])
    support = BoxSupport(np.zeros(2), np.array([0.0, 2.0]))
    coeffs = np.array([1.0, 0.0])
    rows = (
        LinearRow(coeffs, milp.EQUAL, 1.0),
        LinearRow(np.array([0.0, 1.0]), milp.EQUAL, 0.0),
    )
    problem = FeasibleSet(2, rows, tag="pinned")
    rs = RiskSpec.from_alpha(0.5, 2)
    x, ratio = solve_distr_approx(problem, dist, support,
                                  AmbiguitySpec(0.2, 1.0), rs)
    np.testing.assert_allclose(x, [1.0, 0.0])
    assert ratio is None


def test_target_strategies_differ_on_a_simplex():
    poly = PolytopeSupport(np.array([[1.0, 1.0]]), np.array([2.0]))
    dist = EmpiricalDistribution([[0.3, 0.3]])
    rs = RiskSpec.from_alpha(1.0, 1)
    spec = AmbiguitySpec(0.1, 1.0)
    by_sum = build_plan(dist, poly, spec, rs, TARGET_MAX_SUM)
    near = build_plan(dist, poly, spec, rs, TARGET_NEAR_CEILING)
    assert float(by_sum.target.sum()) == pytest.approx(2.0)
    np.testing.assert_allclose(near.target, [1.0, 1.0], atol=1e-8)
    with pytest.raises(InputError, match="strategy"):
        build_plan(dist, poly, spec, rs, "sideways")


def test_rejects_zero_radius_and_unbounded_support():
    dist = EmpiricalDistribution([[1.0], [2.0]])
    support = BoxSupport(np.zeros(1), np.array([3.0]))
    rs = RiskSpec.from_alpha(0.5, 2)
    with pytest.raises(InputError, match="solve_cvar"):
        build_plan(dist, support, AmbiguitySpec(0.0, 1.0), rs)
    with pytest.raises(InputError, match="bounded"):
        build_plan(dist, UnrestrictedSupport(1), AmbiguitySpec(0.1, 1.0), rs)
    problem = covering_set(np.ones(1), 0.5)
    with pytest.raises(InputError, match="at least 1"):
        solve_with_custom_c(problem, dist, support, 0.5, rs)


def test_plan_round_trip():
    dist = EmpiricalDistribution([[0.5, 1.0], [1.5, 0.2]])
    support = BoxSupport(np.zeros(2), np.array([2.0, 2.0]))
    rs = RiskSpec.from_alpha(0.5, 2)
    plan = build_plan(dist, support, AmbiguitySpec(0.3, 2.0), rs)
    doc = json.loads(json.dumps(plan_to_doc(plan)))
    back = plan_from_doc(doc)
    assert back.factor == pytest.approx(plan.factor)
    np.testing.assert_allclose(back.target, plan.target)
    np.testing.assert_allclose(back.coordinate_maxima, plan.coordinate_maxima)
    np.testing.assert_allclose(
        back.distorted.realizations, plan.distorted.realizations
    )
