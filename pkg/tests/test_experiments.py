"""Instance generation, truncated-normal sampling, and sweep plumbing."""

import csv
import io
import math

import numpy as np
import pytest
from scipy import stats

from drco import experiments
from drco.experiments import (
    METHOD_DISTORT,
    METHOD_ROWGEN,
    METHOD_SAA,
    GeneratedInstance,
    estimate_quantile,
    generate_instance,
    generated_from_doc,
    generated_to_doc,
    run_experiment,
    sample_costs,
    write_outputs,
)
from drco.model import InputError


def test_generation_is_deterministic_and_well_formed():
    a = generate_instance(100, seed=11)
    b = generate_instance(100, seed=11)
    c = generate_instance(100, seed=12)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.cost_low, b.cost_low)
    assert a.capacity == b.capacity
    assert not np.array_equal(a.weights, c.weights)
    assert a.capacity == 0.4 * a.weights.sum()
    assert np.all(a.cost_low >= 0.0)
    assert np.all(a.cost_high >= a.cost_low)
    assert a.feasible_set().n_items == 100


def test_samples_respect_their_intervals():
    inst = generate_instance(30, seed=3)
    dist = sample_costs(inst, 30, seed=4)
    assert dist.realizations.shape == (30, 30)
    assert np.all(dist.realizations >= inst.cost_low - 1e-12)
    assert np.all(dist.realizations <= inst.cost_high + 1e-12)
    again = sample_costs(inst, 30, seed=4)
    assert np.array_equal(dist.realizations, again.realizations)


def test_sample_mean_matches_the_truncated_normal():
    inst = generate_instance(6, seed=8)
    dist = sample_costs(inst, 100_000, seed=9)
    for i in range(6):
        mu, sigma = inst.weights[i], 0.7 * inst.weights[i]
        lo, hi = inst.cost_low[i], inst.cost_high[i]
        if sigma <= 0 or hi - lo <= 1e-12:
            continue
        a, b = (lo - mu) / sigma, (hi - mu) / sigma
        law = stats.truncnorm(a, b, loc=mu, scale=sigma)
        emp = dist.realizations[:, i].mean()
        stderr = law.std() / math.sqrt(100_000)
        assert abs(emp - law.mean()) < 3.0 * stderr


def test_degenerate_items_are_point_masses():
    inst = GeneratedInstance(
        weights=np.array([0.0, 0.5]),
        capacity=0.2,
        cost_low=np.array([0.0, 0.7]),
        cost_high=np.array([0.9, 0.7]),
        seed=None,
    )
    dist = sample_costs(inst, 12, seed=1)
    assert np.all(dist.realizations[:, 0] == 0.0)  # zero weight
    assert np.all(dist.realizations[:, 1] == 0.7)  # zero width
    x = np.array([1.0, 1.0])
    assert estimate_quantile(x, inst, n_draws=200, seed=2) == 0.7


def test_quantile_level_one_is_the_sample_maximum():
    inst = generate_instance(1, seed=5)
    x = np.ones(1)
    rng = np.random.default_rng(7)
    expected = (experiments._draw_cost_matrix(inst, 50, rng) @ x).max()
    got = estimate_quantile(x, inst, level=1.0, n_draws=50, seed=7)
    assert got == pytest.approx(expected, abs=0.0)


def test_quantile_estimate_is_stable_across_seeds():
    inst = generate_instance(40, seed=13)
    x = (np.arange(40) % 2).astype(float)
    q_one = estimate_quantile(x, inst, n_draws=100_000, seed=100)
    q_two = estimate_quantile(x, inst, n_draws=100_000, seed=200)
    assert abs(q_one - q_two) < 0.01 * abs(q_one)


def test_quantile_rejects_bad_requests():
    inst = generate_instance(3, seed=1)
    with pytest.raises(InputError, match="length"):
        estimate_quantile(np.ones(2), inst, seed=0)
    with pytest.raises(InputError, match="level"):
        estimate_quantile(np.ones(3), inst, level=0.0, seed=0)
    with pytest.raises(InputError, match="kind"):
        run_experiment("exp3", samples=1)


def smoke_result(jobs=1, seed=42):
    return run_experiment(
        "exp1",
        n=12,
        n_samples=4,
        samples=2,
        alpha=0.5,
        epsilon_grid=(0.0, 0.05, 0.2),
        methods=(METHOD_SAA, METHOD_ROWGEN, METHOD_DISTORT),
        seed=seed,
        mc_size=1000,
        jobs=jobs,
    )


def test_smoke_sweep_runs_end_to_end(tmp_path):
    result = smoke_result()
    assert len(result.records) == 2 * 3 * 3
    for rec in result.records:
        assert rec.status in ("optimal", "gap_reached")
        assert math.isfinite(rec.objective) and math.isfinite(rec.q90)
        assert rec.solve_ms >= 0.0
    # with no ball the robust methods coincide with the plain minimizer
    for sid in (0, 1):
        zero = {
            r.method: r for r in result.records
            if r.sample_id == sid and r.epsilon == 0.0
        }
        for method in (METHOD_ROWGEN, METHOD_DISTORT):
            assert zero[method].objective == pytest.approx(
                zero[METHOD_SAA].objective, rel=1e-9
            )
            assert zero[method].q90 == zero[METHOD_SAA].q90
    paths = write_outputs(result, tmp_path / "out")
    names = sorted(p.name for p in paths)
    assert names == ["aggregate.png", "sample_00.png", "sample_01.png",
                     "sweep.csv"]
    text = (tmp_path / "out" / "sweep.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == len(result.records)
    assert set(rows[0]) == set(experiments.CSV_FIELDS)


def test_sweep_is_reproducible_and_jobs_independent():
    text_one = smoke_result(jobs=1).to_csv_text(with_timing=False)
    text_again = smoke_result(jobs=1).to_csv_text(with_timing=False)
    text_par = smoke_result(jobs=2).to_csv_text(with_timing=False)
    assert text_one == text_again
    assert text_one == text_par
    assert "solve_ms" in smoke_result(jobs=1).to_csv_text()


def test_failures_are_recorded_not_raised():
    # alpha = 0.3 is not an exact tail fraction for four samples, so the
    # ball methods decline while the plain minimizer still runs
    result = run_experiment(
        "exp1",
        n=6,
        n_samples=4,
        samples=1,
        alpha=0.3,
        epsilon_grid=(0.05,),
        methods=(METHOD_SAA, METHOD_ROWGEN),
        seed=1,
        mc_size=200,
    )
    by_method = {r.method: r for r in result.records}
    assert by_method[METHOD_SAA].status == "optimal"
    assert by_method[METHOD_ROWGEN].status == "failed"
    assert math.isnan(by_method[METHOD_ROWGEN].q90)


def test_default_configs_follow_the_protocol():
    assert experiments.default_config("exp1")["alpha"] == 0.1
    assert experiments.default_config("exp2")["alpha"] == 0.5
    assert METHOD_ROWGEN not in experiments.default_config("exp2")["methods"]
    grid_one = experiments.default_epsilon_grid("exp1")
    grid_two = experiments.default_epsilon_grid("exp2")
    assert grid_one[0] == pytest.approx(0.0025)
    assert grid_one[-1] == pytest.approx(0.1)
    assert grid_two[-1] == pytest.approx(1.0)
    assert len(grid_one) == 40 and len(grid_two) == 400
    steps = np.diff(grid_one)
    assert np.allclose(steps, 0.0025)


def test_generated_instance_documents_round_trip():
    inst = generate_instance(9, seed=77)
    doc = generated_to_doc(inst)
    back = generated_from_doc(doc)
    assert np.array_equal(back.weights, inst.weights)
    assert np.array_equal(back.cost_high, inst.cost_high)
    assert back.capacity == inst.capacity
    with pytest.raises(InputError, match="document"):
        generated_from_doc({"type": "other"})
