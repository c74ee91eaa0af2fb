"""Desk-scale comparison sweeps on random covering-knapsack instances.

Generates instances with uniform weights and per-item truncated-normal cost
laws on box supports, then sweeps the ball radius comparing the empirical
risk minimizer against the row-generation solver and the sample-distortion
heuristic.  Solution quality is scored by a Monte Carlo 0.9-quantile of the
random cost, with one evaluation seed shared per sweep cell so the methods
see identical draws.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import milp, risk
from .distort import solve_distr_approx
from .model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    FeasibleSet,
    InputError,
    RiskSpec,
)
from .problems import KnapsackInstance, encode
from .rowgen import solve_distr_rowgen

METHOD_SAA = "SAA"
METHOD_ROWGEN = "RowGen"
METHOD_DISTORT = "Distort"

EXPERIMENT_KINDS = ("exp1", "exp2")

CSV_FIELDS = ("sample_id", "epsilon", "method", "objective", "q90",
              "solve_ms", "status")

_MC_CHUNK = 4000
_MIN_ACCEPT = 0.01
_WIDTH_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class GeneratedInstance:
    """Random covering knapsack with a per-item truncated-normal cost law."""

    weights: np.ndarray
    capacity: float
    cost_low: np.ndarray
    cost_high: np.ndarray
    seed: object

    def __post_init__(self):
        for name in ("weights", "cost_low", "cost_high"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise InputError("weights must be a nonempty vector")
        if self.cost_low.shape != self.weights.shape or (
            self.cost_high.shape != self.weights.shape
        ):
            raise InputError("cost interval shapes must match the weights")
        if np.any(self.cost_low < 0) or np.any(self.cost_high < self.cost_low):
            raise InputError("cost intervals must be nonnegative and ordered")

    @property
    def n_items(self) -> int:
        return self.weights.size

    def knapsack(self) -> KnapsackInstance:
        return KnapsackInstance(self.weights.copy(), self.capacity)

    def feasible_set(self) -> FeasibleSet:
        return encode(self.knapsack())

    def support(self) -> BoxSupport:
        return BoxSupport(self.cost_low.copy(), self.cost_high.copy())


def generate_instance(n: int, seed) -> GeneratedInstance:
    """Draw weights, set the capacity at 0.4 of their total, fix cost laws.

    Draw order is weights, then interval left slacks, then half widths, so
    a fixed seed pins the whole instance.
    """
    if n < 1:
        raise InputError("need at least one item")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.0, 1.0, size=n)
    left = rng.uniform(0.0, 1.0, size=n)
    half_width = rng.uniform(0.0, 1.0, size=n)
    low = np.maximum(0.0, weights - left)
    high = low + 2.0 * half_width
    return GeneratedInstance(
        weights=weights,
        capacity=0.4 * weights.sum(),
        cost_low=low,
        cost_high=high,
        seed=seed,
    )


def _draw_cost_matrix(instance: GeneratedInstance, count: int, rng) -> np.ndarray:
    """count independent cost vectors, one truncated normal per item.

    Rejection from the parent normal, switching to the inverse-CDF route for
    items whose acceptance probability is under one percent; degenerate
    items (zero weight or zero-width interval) are point masses.
    """
    out = np.empty((count, instance.n_items))
    for i in range(instance.n_items):
        mu = instance.weights[i]
        sigma = 0.7 * mu
        lo = instance.cost_low[i]
        hi = instance.cost_high[i]
        if hi - lo <= _WIDTH_EPS:
            out[:, i] = lo
            continue
        if sigma <= 0.0:
            out[:, i] = min(max(mu, lo), hi)
            continue
        cdf_lo = ndtr((lo - mu) / sigma)
        cdf_hi = ndtr((hi - mu) / sigma)
        if cdf_hi - cdf_lo < _MIN_ACCEPT:
            u = rng.uniform(cdf_lo, cdf_hi, size=count)
            out[:, i] = np.clip(mu + sigma * ndtri(u), lo, hi)
            continue
        col = rng.normal(mu, sigma, size=count)
        bad = (col < lo) | (col > hi)
        while np.any(bad):
            col[bad] = rng.normal(mu, sigma, size=int(bad.sum()))
            bad = (col < lo) | (col > hi)
        out[:, i] = col
    return out


def sample_costs(instance: GeneratedInstance, n_samples: int, seed) -> EmpiricalDistribution:
    """An empirical distribution of n_samples independent cost draws."""
    if n_samples < 1:
        raise InputError("need at least one sample")
    rng = np.random.default_rng(seed)
    return EmpiricalDistribution(_draw_cost_matrix(instance, n_samples, rng))


def estimate_quantile(
    x,
    instance: GeneratedInstance,
    level: float = 0.9,
    n_draws: int = 100_000,
    seed=None,
) -> float:
    """Monte Carlo level-quantile of the random cost of solution x.

    Returns the order statistic at the ceiling index.  Costs are drawn in
    full item rows regardless of x, so runs with a shared seed stay paired
    across solutions.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n_items,):
        raise InputError("solution length does not match the instance")
    if not 0.0 < level <= 1.0:
        raise InputError("quantile level must lie in (0, 1]")
    if n_draws < 1:
        raise InputError("need at least one draw")
    rng = np.random.default_rng(seed)
    totals = np.empty(n_draws)
    done = 0
    while done < n_draws:
        take = min(_MC_CHUNK, n_draws - done)
        totals[done:done + take] = _draw_cost_matrix(instance, take, rng) @ x
        done += take
    totals.sort()
    return float(totals[math.ceil(level * n_draws) - 1])


def default_epsilon_grid(kind: str) -> tuple[float, ...]:
    """Arithmetic radius grid with step 0.0025 up to the experiment's cap."""
    top = 40 if kind == "exp1" else 400
    return tuple(0.0025 * k for k in range(1, top + 1))


def default_config(kind: str) -> dict:
    if kind == "exp1":
        return {
            "alpha": 0.1,
            "q_norm": math.inf,
            "methods": (METHOD_SAA, METHOD_ROWGEN, METHOD_DISTORT),
        }
    if kind == "exp2":
        return {
            "alpha": 0.5,
            "q_norm": math.inf,
            "methods": (METHOD_SAA, METHOD_DISTORT),
        }
    raise InputError(f"unknown experiment kind {kind!r}")


@dataclass(frozen=True, eq=False)
class SweepRecord:
    sample_id: int
    epsilon: float
    method: str
    objective: float
    q90: float
    solve_ms: float
    status: str
    solution: tuple


@dataclass(frozen=True, eq=False)
class SweepResult:
    kind: str
    records: tuple
    mc_size: int
    alpha: float
    q_norm: float
    epsilon_grid: tuple

    def to_csv_text(self, with_timing: bool = True) -> str:
        """CSV rendering; with_timing=False drops the wall-clock column.

        Wall time is measurement, not computation, so byte-level
        reproducibility comparisons should use the timing-free form.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        fields = [f for f in CSV_FIELDS if with_timing or f != "solve_ms"]
        writer.writerow(fields)
        for rec in self.records:
            row = [
                rec.sample_id,
                f"{rec.epsilon:.10g}",
                rec.method,
                f"{rec.objective:.10g}",
                f"{rec.q90:.10g}",
                f"{rec.solve_ms:.3f}",
                rec.status,
            ]
            if not with_timing:
                del row[5]
            writer.writerow(row)
        return buf.getvalue()


def _solve_cell_method(method, payload, eps):
    """One (method, radius) solve; returns (solution, solve_ms, status)."""
    problem = payload["problem"]
    dist = payload["dist"]
    alpha = payload["alpha"]
    start = time.perf_counter()
    try:
        if method == METHOD_SAA or eps == 0.0:
            # the zero-radius ball collapses every method onto the
            # empirical risk minimizer
            report = risk.solve_cvar(problem, dist, alpha,
                                     gap_tol=payload["gap_tol"])
            x, status = report.solution, report.status
        elif method == METHOD_ROWGEN:
            spec = AmbiguitySpec(eps, payload["q_norm"])
            report, _ = solve_distr_rowgen(
                problem, dist, payload["support"], spec, payload["risk_spec"],
                rel_gap=payload["rowgen_rel_gap"],
                max_iter=payload["rowgen_max_iter"],
            )
            x, status = report.solution, report.status
        elif method == METHOD_DISTORT:
            spec = AmbiguitySpec(eps, payload["q_norm"])
            x, _ = solve_distr_approx(
                problem, dist, payload["support"], spec, payload["risk_spec"],
                gap_tol=payload["gap_tol"],
            )
            status = milp.OPTIMAL
        else:
            raise InputError(f"unknown method {method!r}")
    except (InputError, milp.SolverError):
        return None, 1000.0 * (time.perf_counter() - start), "failed"
    return x, 1000.0 * (time.perf_counter() - start), status


def _run_cell(payload) -> list:
    """All method rows for one (sample, radius) sweep cell."""
    rows = []
    eps = payload["epsilon"]
    eval_rng_seed = payload["eval_seed"]
    for method in payload["methods"]:
        if method == METHOD_SAA and payload["saa_solution"] is not None:
            x = np.asarray(payload["saa_solution"], dtype=float)
            solve_ms, status = payload["saa_ms"], payload["saa_status"]
        else:
            x, solve_ms, status = _solve_cell_method(method, payload, eps)
        if x is None:
            rows.append((payload["sample_id"], eps, method, math.nan,
                         math.nan, solve_ms, status, ()))
            continue
        objective = risk.cvar_discrete(payload["dist"], x, payload["alpha"])
        q90 = estimate_quantile(
            x, payload["instance"], level=0.9,
            n_draws=payload["mc_size"], seed=eval_rng_seed,
        )
        rows.append((payload["sample_id"], eps, method, objective, q90,
                     solve_ms, status, tuple(int(v) for v in x)))
    return rows


def run_experiment(
    kind: str,
    n: int = 100,
    n_samples: int = 30,
    samples: int = 10,
    alpha: float | None = None,
    epsilon_grid=None,
    q_norm: float | None = None,
    methods=None,
    seed=0,
    mc_size: int = 100_000,
    out_dir: str | None = None,
    jobs: int = 1,
    rowgen_rel_gap: float = 1e-4,
    rowgen_max_iter: int = 60,
    gap_tol: float = 0.0,
) -> SweepResult:
    """Full sweep: one instance, several samples, a radius grid, methods.

    Every cell draws its evaluation seed from a fixed spawn tree, so the
    output is a pure function of the arguments and identical for any jobs
    count.  Solver failures mark their row failed and the sweep continues.
    When out_dir is given, writes sweep.csv plus per-sample and aggregate
    quantile-versus-radius plots there.
    """
    config = default_config(kind)
    alpha = config["alpha"] if alpha is None else float(alpha)
    q_norm = config["q_norm"] if q_norm is None else float(q_norm)
    methods = tuple(config["methods"] if methods is None else methods)
    grid = tuple(
        default_epsilon_grid(kind) if epsilon_grid is None else
        (float(e) for e in epsilon_grid)
    )
    if samples < 1 or not grid:
        raise InputError("need at least one sample and one radius")
    for method in methods:
        if method not in (METHOD_SAA, METHOD_ROWGEN, METHOD_DISTORT):
            raise InputError(f"unknown method {method!r}")
    if any(e < 0 for e in grid):
        raise InputError("radii must be nonnegative")

    root = np.random.SeedSequence(seed)
    inst_ss, draw_ss, eval_ss = root.spawn(3)
    instance = generate_instance(n, inst_ss)
    problem = instance.feasible_set()
    support = instance.support()
    risk_spec = RiskSpec.from_alpha(alpha, n_samples)
    sample_seeds = draw_ss.spawn(samples)
    eval_seeds = [ss.spawn(len(grid)) for ss in eval_ss.spawn(samples)]

    payloads = []
    for sid in range(samples):
        dist = sample_costs(instance, n_samples, sample_seeds[sid])
        saa_solution = saa_ms = saa_status = None
        if METHOD_SAA in methods:
            saa_solution, saa_ms, saa_status = _solve_cell_method(
                METHOD_SAA,
                {"problem": problem, "dist": dist, "alpha": alpha,
                 "gap_tol": gap_tol},
                0.0,
            )
        for k, eps in enumerate(grid):
            payloads.append({
                "sample_id": sid,
                "epsilon": eps,
                "methods": methods,
                "instance": instance,
                "problem": problem,
                "support": support,
                "dist": dist,
                "alpha": alpha,
                "q_norm": q_norm,
                "risk_spec": risk_spec,
                "gap_tol": gap_tol,
                "rowgen_rel_gap": rowgen_rel_gap,
                "rowgen_max_iter": rowgen_max_iter,
                "mc_size": mc_size,
                "eval_seed": eval_seeds[sid][k],
                "saa_solution": saa_solution,
                "saa_ms": saa_ms,
                "saa_status": saa_status,
            })

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cell_rows = list(pool.map(_run_cell, payloads, chunksize=1))
    else:
        cell_rows = [_run_cell(p) for p in payloads]

    merged = {}
    for rows in cell_rows:
        for row in rows:
            merged[(row[0], row[1], row[2])] = row
    method_rank = {m: i for i, m in enumerate(methods)}
    ordered = sorted(merged, key=lambda k: (k[0], k[1], method_rank[k[2]]))
    records = tuple(SweepRecord(*merged[k]) for k in ordered)
    result = SweepResult(
        kind=kind,
        records=records,
        mc_size=mc_size,
        alpha=alpha,
        q_norm=q_norm,
        epsilon_grid=grid,
    )
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: SweepResult, out_dir: str) -> list:
    """Write sweep.csv and the quantile plots; returns the paths written."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "sweep.csv"]
    paths[0].write_text(result.to_csv_text())
    paths.extend(plot_quantiles(result, out))
    return paths


def plot_quantiles(result: SweepResult, out_dir) -> list:
    """One quantile-versus-radius figure per sample plus the average."""
    import pathlib

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = pathlib.Path(out_dir)
    by_sample = {}
    for rec in result.records:
        by_sample.setdefault(rec.sample_id, []).append(rec)
    methods = []
    for rec in result.records:
        if rec.method not in methods:
            methods.append(rec.method)
    paths = []

    def draw(ax, rows, title):
        for method in methods:
            pts = sorted(
                (r.epsilon, r.q90) for r in rows
                if r.method == method and not math.isnan(r.q90)
            )
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        marker=".", label=method)
        ax.set_xlabel("radius")
        ax.set_ylabel("0.9-quantile of the cost")
        ax.set_title(title)
        ax.legend()

    for sid in sorted(by_sample):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        draw(ax, by_sample[sid], f"sample {sid}")
        path = out / f"sample_{sid:02d}.png"
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)

    averaged = []
    for method in methods:
        for eps in result.epsilon_grid:
            vals = [
                r.q90 for r in result.records
                if r.method == method and r.epsilon == eps
                and not math.isnan(r.q90)
            ]
            if vals:
                averaged.append(SweepRecord(
                    sample_id=-1, epsilon=eps, method=method,
                    objective=math.nan, q90=float(np.mean(vals)),
                    solve_ms=0.0, status="", solution=(),
                ))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    draw(ax, averaged, "average over samples")
    path = out / "aggregate.png"
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)
    return paths


def generated_to_doc(instance: GeneratedInstance) -> dict:
    return {
        "type": "generated_knapsack",
        "weights": instance.weights.tolist(),
        "capacity": instance.capacity,
        "cost_low": instance.cost_low.tolist(),
        "cost_high": instance.cost_high.tolist(),
        "seed": instance.seed if isinstance(instance.seed, int) else None,
    }


def generated_from_doc(doc: dict) -> GeneratedInstance:
    if doc.get("type") != "generated_knapsack":
        raise InputError("not a generated-knapsack document")
    return GeneratedInstance(
        weights=np.asarray(doc["weights"], dtype=float),
        capacity=float(doc["capacity"]),
        cost_low=np.asarray(doc["cost_low"], dtype=float),
        cost_high=np.asarray(doc["cost_high"], dtype=float),
        seed=doc.get("seed"),
    )
