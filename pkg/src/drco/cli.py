"""Command-line front end: generation, solves, adversary queries, sweeps.

Every subcommand is a thin binding over the library modules; results are
printed as JSON (or written with --out).  Exit codes: 0 success, 1 bad
input, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import experiments, milp, problems, risk, unrestricted
from .distort import (
    TARGET_MAX_SUM,
    TARGET_NEAR_CEILING,
    build_plan,
    solve_distr_approx,
)
from .model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    InputError,
    RiskSpec,
    UnrestrictedSupport,
    support_from_doc,
    support_to_doc,
)
from .rowgen import solve_distr_rowgen
from .worst_case import certificate_to_doc, worst_distribution

OUT_DIR_ENV = "DRCO_OUT_DIR"

_Q_CHOICES = {"1": 1.0, "2": 2.0, "inf": math.inf}


class _Parser(argparse.ArgumentParser):
    """argparse front end that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, ".")


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out is None:
        print(text)
    else:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")


def _load_instance(path: str):
    """Returns (feasible set, generated instance or None, document)."""
    doc = _load_json(path)
    if doc.get("type") == "generated_knapsack":
        generated = experiments.generated_from_doc(doc)
        return generated.feasible_set(), generated, doc
    instance = problems.instance_from_doc(doc)
    return problems.encode(instance), None, doc


def _load_distribution(args, generated) -> EmpiricalDistribution:
    if getattr(args, "samples", None):
        doc = _load_json(args.samples)
        rows = doc["realizations"] if isinstance(doc, dict) else doc
        return EmpiricalDistribution(np.asarray(rows, dtype=float))
    if generated is None:
        raise InputError(
            "this instance has no cost law; provide --samples with realizations"
        )
    return experiments.sample_costs(
        generated, args.n_samples, args.sample_seed
    )


def _load_support(args, generated):
    if getattr(args, "support_file", None):
        return support_from_doc(_load_json(args.support_file))
    if getattr(args, "unrestricted", False) or generated is None:
        return None
    return generated.support()


def _parse_solution(text: str, n_items: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError(f"cannot parse the solution vector: {exc}") from exc
    x = np.asarray(values)
    if x.shape != (n_items,):
        raise InputError(
            f"solution has {x.size} entries but the instance has {n_items}"
        )
    return x


def _solution_list(x) -> list:
    return [int(round(float(v))) for v in x]


def _add_instance_args(sub, with_dist=True):
    sub.add_argument("--instance", required=True,
                     help="instance JSON (generated or structural)")
    if with_dist:
        sub.add_argument("--samples", default=None,
                         help="JSON file with cost realizations")
        sub.add_argument("--n-samples", type=int, default=30,
                         help="draw count when sampling from a cost law")
        sub.add_argument("--sample-seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="write the result JSON here")


def _add_ball_args(sub):
    sub.add_argument("--epsilon", type=float, required=True,
                     help="transport ball radius")
    sub.add_argument("--q", choices=sorted(_Q_CHOICES), default="inf",
                     help="ground norm order")
    sub.add_argument("--support-file", default=None,
                     help="support JSON; overrides the instance's own box")
    sub.add_argument("--unrestricted", action="store_true",
                     help="treat the support as the whole nonnegative orthant")


def _parser() -> _Parser:
    parser = _Parser(prog="drco",
                     description="robust risk minimization toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a random knapsack instance")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=None)

    cvar = subs.add_parser("solve-cvar", help="empirical risk minimization")
    _add_instance_args(cvar)
    cvar.add_argument("--alpha", type=float, required=True)
    cvar.add_argument("--gap-tol", type=float, default=0.0)

    distr = subs.add_parser("solve-distr",
                            help="worst-case risk over the transport ball")
    _add_instance_args(distr)
    distr.add_argument("--alpha", type=float, required=True)
    distr.add_argument("--gap-tol", type=float, default=0.0)
    _add_ball_args(distr)
    distr.add_argument("--method",
                       choices=("auto", "orthant", "two-solve", "rowgen"),
                       default="auto",
                       help="orthant ignores any bounds and solves over the "
                            "whole nonnegative orthant")
    distr.add_argument("--rel-gap", type=float, default=1e-6,
                       help="row generation stopping gap")
    distr.add_argument("--max-iter", type=int, default=100)

    worst = subs.add_parser("worst-dist",
                            help="worst distribution for a fixed solution")
    _add_instance_args(worst)
    worst.add_argument("--alpha", type=float, required=True)
    _add_ball_args(worst)
    worst.add_argument("--solution", required=True,
                       help="comma separated binary vector")

    approx = subs.add_parser("approx",
                             help="sample distortion approximation")
    _add_instance_args(approx)
    approx.add_argument("--alpha", type=float, required=True)
    approx.add_argument("--gap-tol", type=float, default=0.0)
    _add_ball_args(approx)
    approx.add_argument("--target",
                        choices=(TARGET_MAX_SUM, TARGET_NEAR_CEILING),
                        default=TARGET_MAX_SUM)

    reduce_p = subs.add_parser(
        "reduce", help="min-max selection as risk minimization"
    )
    reduce_p.add_argument("--instance", required=True,
                          help="selection instance JSON")
    reduce_p.add_argument("--scenarios", required=True,
                          help="JSON file with scenario cost rows")
    reduce_p.add_argument("--alpha", type=float, required=True)
    reduce_p.add_argument("--out", default=None)

    exp = subs.add_parser("experiment", help="comparison sweep")
    exp.add_argument("kind", choices=experiments.EXPERIMENT_KINDS)
    exp.add_argument("--n", type=int, default=100)
    exp.add_argument("--n-samples", type=int, default=30)
    exp.add_argument("--samples", type=int, default=10,
                     help="number of empirical distributions")
    exp.add_argument("--alpha", type=float, default=None)
    exp.add_argument("--epsilon-grid", default=None,
                     help="comma separated radii; default is the protocol grid")
    exp.add_argument("--q", choices=sorted(_Q_CHOICES), default=None)
    exp.add_argument("--methods", default=None,
                     help="comma separated subset of SAA,RowGen,Distort")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--mc-size", type=int, default=100_000)
    exp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    exp.add_argument("--rel-gap", type=float, default=1e-4)
    exp.add_argument("--max-iter", type=int, default=60)
    exp.add_argument("--out-dir", default=None)
    return parser


def _cmd_gen(args) -> int:
    instance = experiments.generate_instance(args.n, args.seed)
    out = args.out
    if out is None:
        out = os.path.join(_default_out_dir(), "instance.json")
    _emit(experiments.generated_to_doc(instance), out)
    print(out)
    return 0


def _cmd_solve_cvar(args) -> int:
    problem, generated, _ = _load_instance(args.instance)
    dist = _load_distribution(args, generated)
    report = risk.solve_cvar(problem, dist, args.alpha, gap_tol=args.gap_tol)
    if report.solution is None:
        raise milp.SolverError(f"risk solve ended {report.status}")
    _emit({
        "command": "solve-cvar",
        "alpha": args.alpha,
        "objective": report.objective,
        "solution": _solution_list(report.solution),
        "status": report.status,
        "wall_ms": report.wall_ms,
    }, args.out)
    return 0


def _pick_method(args, support, risk_spec, q: float) -> str:
    if args.method != "auto":
        return args.method
    if support is None or isinstance(support, UnrestrictedSupport):
        return "orthant"
    if (isinstance(support, BoxSupport) and q == 1.0
            and risk_spec.is_exact_fraction):
        return "two-solve"
    return "rowgen"


def _cmd_solve_distr(args) -> int:
    problem, generated, _ = _load_instance(args.instance)
    dist = _load_distribution(args, generated)
    support = _load_support(args, generated)
    q = _Q_CHOICES[args.q]
    spec = AmbiguitySpec(args.epsilon, q)
    risk_spec = RiskSpec.from_alpha(args.alpha, dist.n_samples)
    method = _pick_method(args, support, risk_spec, q)
    result = {
        "command": "solve-distr",
        "alpha": args.alpha,
        "epsilon": args.epsilon,
        "q": args.q,
        "method": method,
    }
    if method == "orthant":
        report = unrestricted.solve_distr_unrestricted(
            problem, dist, spec, args.alpha, gap_tol=args.gap_tol
        )
    elif method == "two-solve":
        if not isinstance(support, BoxSupport):
            raise InputError("the two-solve method needs a box support")
        if q != 1.0:
            raise InputError("the two-solve method needs the sum ground norm")
        report = unrestricted.solve_box_q1_two_solve(
            problem, dist, support.upper, args.epsilon, args.alpha,
            gap_tol=args.gap_tol,
        )
    elif method == "rowgen":
        if support is None:
            raise InputError(
                "row generation needs a bounded support; give --support-file "
                "or use an instance that carries cost intervals"
            )
        report, trace = solve_distr_rowgen(
            problem, dist, support, spec, risk_spec,
            rel_gap=args.rel_gap, max_iter=args.max_iter,
        )
        result["iterations"] = len(trace.iterations)
        result["stop_reason"] = trace.reason
    else:
        raise InputError(f"unknown method {method!r}")
    if report.solution is None:
        raise milp.SolverError(f"robust solve ended {report.status}")
    result.update({
        "objective": report.objective,
        "solution": _solution_list(report.solution),
        "status": report.status,
    })
    _emit(result, args.out)
    return 0


def _cmd_worst_dist(args) -> int:
    problem, generated, _ = _load_instance(args.instance)
    dist = _load_distribution(args, generated)
    support = _load_support(args, generated)
    if support is None:
        raise InputError(
            "the adversary needs a bounded support; give --support-file or "
            "use an instance that carries cost intervals"
        )
    x = _parse_solution(args.solution, problem.n_items)
    spec = AmbiguitySpec(args.epsilon, _Q_CHOICES[args.q])
    risk_spec = RiskSpec.from_alpha(args.alpha, dist.n_samples)
    cert = worst_distribution(x, dist, support, spec, risk_spec)
    doc = certificate_to_doc(cert)
    doc.update({
        "command": "worst-dist",
        "solution": _solution_list(x),
        "support": support_to_doc(support),
    })
    _emit(doc, args.out)
    return 0


def _cmd_approx(args) -> int:
    problem, generated, _ = _load_instance(args.instance)
    dist = _load_distribution(args, generated)
    support = _load_support(args, generated)
    if support is None:
        raise InputError(
            "sample distortion needs a bounded support; give --support-file "
            "or use an instance that carries cost intervals"
        )
    spec = AmbiguitySpec(args.epsilon, _Q_CHOICES[args.q])
    risk_spec = RiskSpec.from_alpha(args.alpha, dist.n_samples)
    x, ratio = solve_distr_approx(
        problem, dist, support, spec, risk_spec,
        gap_tol=args.gap_tol, target_strategy=args.target,
    )
    plan = build_plan(dist, support, spec, risk_spec,
                      target_strategy=args.target)
    _emit({
        "command": "approx",
        "alpha": args.alpha,
        "epsilon": args.epsilon,
        "q": args.q,
        "target": args.target,
        "solution": _solution_list(x),
        "certified_ratio": ratio,
        "move_factor": plan.factor,
    }, args.out)
    return 0


def _cmd_reduce(args) -> int:
    doc = _load_json(args.instance)
    instance = problems.instance_from_doc(doc)
    if not isinstance(instance, problems.RepSelectionInstance):
        raise InputError("the reduction starts from a selection instance")
    scen_doc = _load_json(args.scenarios)
    rows = scen_doc["scenarios"] if isinstance(scen_doc, dict) else scen_doc
    scenarios = np.asarray(rows, dtype=float)
    wide, dist, spike, tail, n_samples, value_map = (
        problems.reduce_minmax_rs_to_cvar_rs(instance, scenarios, args.alpha)
    )
    lead = value_map(0.0)
    _emit({
        "command": "reduce",
        "alpha": args.alpha,
        "instance": problems.instance_to_doc(wide),
        "realizations": dist.realizations.tolist(),
        "spike_cost": spike,
        "tail_count": tail,
        "n_samples": n_samples,
        "value_map": {"lead": lead, "slope": value_map(1.0) - lead},
    }, args.out)
    return 0


def _cmd_experiment(args) -> int:
    grid = None
    if args.epsilon_grid is not None:
        try:
            grid = tuple(float(v) for v in args.epsilon_grid.split(","))
        except ValueError as exc:
            raise InputError(f"cannot parse the radius grid: {exc}") from exc
    methods = None
    if args.methods is not None:
        methods = tuple(m.strip() for m in args.methods.split(","))
    out_dir = args.out_dir
    if out_dir is None:
        out_dir = os.path.join(_default_out_dir(), f"{args.kind}-sweep")
    result = experiments.run_experiment(
        args.kind,
        n=args.n,
        n_samples=args.n_samples,
        samples=args.samples,
        alpha=args.alpha,
        epsilon_grid=grid,
        q_norm=None if args.q is None else _Q_CHOICES[args.q],
        methods=methods,
        seed=args.seed,
        mc_size=args.mc_size,
        out_dir=out_dir,
        jobs=args.jobs,
        rowgen_rel_gap=args.rel_gap,
        rowgen_max_iter=args.max_iter,
    )
    failures = sum(1 for r in result.records if r.status == "failed")
    print(os.path.join(out_dir, "sweep.csv"))
    print(f"{len(result.records)} rows, {failures} failed")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "solve-cvar": _cmd_solve_cvar,
    "solve-distr": _cmd_solve_distr,
    "worst-dist": _cmd_worst_dist,
    "approx": _cmd_approx,
    "reduce": _cmd_reduce,
    "experiment": _cmd_experiment,
}


def dispatch(argv) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except milp.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
