"""Self-contained linear and mixed-binary programming core.

Dense two-phase simplex with a deterministic pivot order, plus a best-first
branch-and-bound driver for models whose discrete variables are all binary.
Everything downstream (risk evaluation, robust counterparts, row generation)
builds its models out of `LinearRow` / `LinearProgram` / `MixedModel` and
solves them here, so solver behaviour is reproducible bit-for-bit across runs.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_REACHED = "gap_reached"

LESS_EQUAL = "<="
GREATER_EQUAL = ">="
EQUAL = "=="
_RELATIONS = (LESS_EQUAL, GREATER_EQUAL, EQUAL)

# Feasibility / optimality tolerance of the simplex core.
FEAS_TOL = 1e-8
# Entries of a relaxation solution within this distance of an integer count
# as integral during branch and bound.
INT_TOL = 1e-6

_PIVOT_TOL = 1e-9
_ITER_CAP = 200_000
_DEGENERATE_STREAK = 100


class SolverError(RuntimeError):
    """Raised when the numerical core cannot certify a result."""


@dataclass(frozen=True, eq=False)
class LinearRow:
    """One linear constraint `coeffs @ x <rel> rhs`."""

    coeffs: np.ndarray
    rel: str
    rhs: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1:
            raise ValueError("constraint coefficients must be a vector")
        if not np.all(np.isfinite(coeffs)) or not np.isfinite(self.rhs):
            raise ValueError("constraint data must be finite")
        if self.rel not in _RELATIONS:
            raise ValueError(f"unknown relation {self.rel!r}")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "rhs", float(self.rhs))

    def satisfied_by(self, x: np.ndarray, tol: float = FEAS_TOL) -> bool:
        lhs = float(self.coeffs @ x)
        scale = 1.0 + abs(self.rhs) + float(np.abs(self.coeffs).sum())
        if self.rel == LESS_EQUAL:
            return lhs <= self.rhs + tol * scale
        if self.rel == GREATER_EQUAL:
            return lhs >= self.rhs - tol * scale
        return abs(lhs - self.rhs) <= tol * scale


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min costs @ x subject to rows, lower <= x <= upper."""

    costs: np.ndarray
    rows: tuple[LinearRow, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        n = costs.size
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError("bound arrays must match the cost vector length")
        if not np.all(np.isfinite(costs)):
            raise ValueError("objective must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds must not be NaN")
        if np.any(lower > upper + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        rows = tuple(self.rows)
        for row in rows:
            if row.coeffs.size != n:
                raise ValueError("constraint length does not match model")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def num_vars(self) -> int:
        return self.costs.size


@dataclass(frozen=True, eq=False)
class MixedModel:
    """A linear program plus the indices of its binary variables."""

    lp: LinearProgram
    binary_idx: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(j) for j in self.binary_idx)))
        n = self.lp.num_vars
        if idx and (idx[0] < 0 or idx[-1] >= n):
            raise ValueError("binary index out of range")
        object.__setattr__(self, "binary_idx", idx)


@dataclass
class SolveReport:
    """Outcome of a solve: status plus solution, bounds and counters."""

    status: str
    objective: float | None = None
    solution: np.ndarray | None = None
    gap_abs: float = 0.0
    gap_rel: float = 0.0
    nodes: int = 0
    cuts: int = 0
    wall_ms: float = 0.0
    dual_objective: float | None = None


# ---------------------------------------------------------------------------
# simplex


def _pivot_loop(T, robj, basis, allow):
    """Run simplex pivots until optimal or unbounded.

    T is the m x (K+1) tableau in canonical form for `basis`; robj holds the
    K reduced costs plus minus-the-objective in its last slot.  Dantzig's
    entering rule with an index tie-break is used until a long degenerate
    streak, after which Bland's rule takes over so cycling cannot occur.
    """
    m = T.shape[0]
    bland = False
    degenerate = 0
    for _ in range(_ITER_CAP):
        reduced = robj[:-1]
        if bland:
            candidates = np.flatnonzero((reduced < -FEAS_TOL) & allow)
            if candidates.size == 0:
                return OPTIMAL
            col = int(candidates[0])
        else:
            masked = np.where(allow, reduced, 0.0)
            col = int(np.argmin(masked))
            if masked[col] >= -FEAS_TOL:
                return OPTIMAL
        column = T[:, col]
        positive = column > _PIVOT_TOL
        if not positive.any():
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[positive] = T[positive, -1] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12)
        leave = int(ties[np.argmin(basis[ties])])
        if best <= 1e-10:
            degenerate += 1
            if degenerate > _DEGENERATE_STREAK:
                bland = True
        else:
            degenerate = 0
        pivot = T[leave, col]
        prow = T[leave] / pivot
        T -= np.outer(column, prow)
        T[leave] = prow
        robj -= robj[col] * prow
        basis[leave] = col
        # keep the right-hand side clean against accumulated roundoff
        rhs = T[:, -1]
        rhs[(rhs < 0.0) & (rhs > -1e-11)] = 0.0
    raise SolverError("simplex iteration cap exceeded")


def _standardize(lp: LinearProgram, lower: np.ndarray, upper: np.ndarray):
    """Rewrite the LP over nonnegative variables with equality rows.

    Returns (columns, const, A, b, senses, var_map) where var_map recovers the
    original variables: each entry is ("fixed", v), ("shift", col, lb),
    ("negate", col, ub) or ("free", pos_col, neg_col).
    """
    n = lp.num_vars
    var_map = []
    ncols = 0
    extra_upper = []  # (col, width) rows y_col <= width
    for j in range(n):
        lo, hi = lower[j], upper[j]
        if lo > hi + 1e-12:
            return None  # empty box
        if np.isfinite(lo) and np.isfinite(hi) and hi - lo <= 1e-12:
            var_map.append(("fixed", 0.5 * (lo + hi)))
        elif np.isfinite(lo):
            var_map.append(("shift", ncols, lo))
            if np.isfinite(hi):
                extra_upper.append((ncols, hi - lo))
            ncols += 1
        elif np.isfinite(hi):
            var_map.append(("negate", ncols, hi))
            ncols += 1
        else:
            var_map.append(("free", ncols, ncols + 1))
            ncols += 2

    costs = np.zeros(ncols)
    const = 0.0
    for j, entry in enumerate(var_map):
        cj = lp.costs[j]
        if entry[0] == "fixed":
            const += cj * entry[1]
        elif entry[0] == "shift":
            costs[entry[1]] += cj
            const += cj * entry[2]
        elif entry[0] == "negate":
            costs[entry[1]] -= cj
            const += cj * entry[2]
        else:
            costs[entry[1]] += cj
            costs[entry[2]] -= cj

    raw_rows = []
    for row in lp.rows:
        a = np.zeros(ncols)
        rhs = row.rhs
        for j, entry in enumerate(var_map):
            aj = row.coeffs[j]
            if aj == 0.0:
                continue
            if entry[0] == "fixed":
                rhs -= aj * entry[1]
            elif entry[0] == "shift":
                a[entry[1]] += aj
                rhs -= aj * entry[2]
            elif entry[0] == "negate":
                a[entry[1]] -= aj
                rhs -= aj * entry[2]
            else:
                a[entry[1]] += aj
                a[entry[2]] -= aj
        raw_rows.append((a, row.rel, rhs))
    for col, width in extra_upper:
        a = np.zeros(ncols)
        a[col] = 1.0
        raw_rows.append((a, LESS_EQUAL, width))

    kept = []
    for a, rel, rhs in raw_rows:
        if np.abs(a).max(initial=0.0) <= 1e-14:
            scale = 1.0 + abs(rhs)
            ok = (
                (rel == LESS_EQUAL and 0.0 <= rhs + FEAS_TOL * scale)
                or (rel == GREATER_EQUAL and 0.0 >= rhs - FEAS_TOL * scale)
                or (rel == EQUAL and abs(rhs) <= FEAS_TOL * scale)
            )
            if not ok:
                return None
            continue
        kept.append((a, rel, rhs))
    return costs, const, kept, var_map, ncols


def solve_lp(
    lp: LinearProgram,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
) -> SolveReport:
    """Solve a linear program with the two-phase dense simplex.

    `lower` / `upper` optionally override the model bounds, which lets branch
    and bound tighten variables without rebuilding constraint rows.
    """
    start = time.perf_counter()
    lo = lp.lower if lower is None else np.asarray(lower, dtype=float)
    hi = lp.upper if upper is None else np.asarray(upper, dtype=float)
    std = _standardize(lp, lo, hi)
    if std is None:
        return SolveReport(status=INFEASIBLE, wall_ms=_ms(start))
    costs, const, kept_rows, var_map, ncols = std

    if ncols == 0:
        # every variable fixed; rows already checked during standardization
        x = _recover(var_map, np.zeros(0), lp.num_vars)
        return SolveReport(
            status=OPTIMAL,
            objective=const,
            solution=x,
            dual_objective=const,
            wall_ms=_ms(start),
        )

    m = len(kept_rows)
    nslack = sum(1 for _, rel, _ in kept_rows if rel != EQUAL)
    A = np.zeros((m, ncols + nslack))
    b = np.zeros(m)
    slack_at = 0
    slack_sign = np.zeros(m)
    for i, (a, rel, rhs) in enumerate(kept_rows):
        A[i, :ncols] = a
        b[i] = rhs
        if rel != EQUAL:
            sign = 1.0 if rel == LESS_EQUAL else -1.0
            A[i, ncols + slack_at] = sign
            slack_sign[i] = sign
            slack_at += 1
    negative = b < 0
    A[negative] *= -1.0
    b[negative] = -b[negative]
    slack_sign[negative] *= -1.0

    # rows whose slack column is +1 start with that slack basic, the rest get
    # an artificial variable for phase one
    total = ncols + nslack
    basis = np.full(m, -1, dtype=int)
    art_rows = []
    slack_at = 0
    for i, (_, rel, _) in enumerate(kept_rows):
        if rel != EQUAL:
            if slack_sign[i] > 0.0:
                basis[i] = ncols + slack_at
            slack_at += 1
        if basis[i] < 0:
            art_rows.append(i)
    nart = len(art_rows)
    Afull = np.hstack([A, np.zeros((m, nart))]) if nart else A
    for k, i in enumerate(art_rows):
        Afull[i, total + k] = 1.0
        basis[i] = total + k

    T = np.hstack([Afull, b[:, None]])
    keep_rows_mask = np.ones(m, dtype=bool)
    if nart:
        c1 = np.zeros(total + nart)
        c1[total:] = 1.0
        robj = np.concatenate([c1, [0.0]])
        for i in range(m):
            robj -= c1[basis[i]] * T[i]
        allow = np.ones(total + nart, dtype=bool)
        status = _pivot_loop(T, robj, basis, allow)
        if status != OPTIMAL or -robj[-1] > FEAS_TOL * (1.0 + np.abs(b).max(initial=0.0)):
            return SolveReport(status=INFEASIBLE, wall_ms=_ms(start))
        # drive artificials out of the basis; rows that cannot pivot are redundant
        for i in range(m):
            if basis[i] >= total:
                pivots = np.flatnonzero(np.abs(T[i, :total]) > 1e-9)
                if pivots.size:
                    col = int(pivots[0])
                    prow = T[i] / T[i, col]
                    T -= np.outer(T[:, col], prow)
                    T[i] = prow
                    basis[i] = col
                else:
                    keep_rows_mask[i] = False
        if not keep_rows_mask.all():
            T = T[keep_rows_mask]
            basis = basis[keep_rows_mask]
        T = np.hstack([T[:, :total], T[:, -1:]])

    c2 = np.concatenate([costs, np.zeros(nslack)])
    robj = np.concatenate([c2, [0.0]])
    for i in range(T.shape[0]):
        robj -= c2[basis[i]] * T[i]
    allow = np.ones(total, dtype=bool)
    status = _pivot_loop(T, robj, basis, allow)
    if status == UNBOUNDED:
        return SolveReport(status=UNBOUNDED, wall_ms=_ms(start))

    y = np.zeros(total)
    y[basis] = T[:, -1]
    x = _recover(var_map, y, lp.num_vars)
    objective = float(lp.costs @ x)

    # independent certificate: solve B^T dual = c_B against the untouched
    # standard-form matrix, then price the right-hand side
    dual_objective = None
    rows_kept = np.flatnonzero(keep_rows_mask)
    B = A[np.ix_(rows_kept, basis)]
    try:
        dual = np.linalg.solve(B.T, c2[basis])
        dual_objective = float(dual @ b[rows_kept]) + const
    except np.linalg.LinAlgError:
        pass

    return SolveReport(
        status=OPTIMAL,
        objective=objective,
        solution=x,
        dual_objective=dual_objective,
        wall_ms=_ms(start),
    )


def _recover(var_map, y, n):
    x = np.zeros(n)
    for j, entry in enumerate(var_map):
        if entry[0] == "fixed":
            x[j] = entry[1]
        elif entry[0] == "shift":
            x[j] = entry[2] + y[entry[1]]
        elif entry[0] == "negate":
            x[j] = entry[2] - y[entry[1]]
        else:
            x[j] = y[entry[1]] - y[entry[2]]
    return x


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


# ---------------------------------------------------------------------------
# branch and bound


def _clamped_binary_bounds(model: MixedModel):
    lo = model.lp.lower.copy()
    hi = model.lp.upper.copy()
    for j in model.binary_idx:
        lo[j] = max(lo[j], 0.0)
        hi[j] = min(hi[j], 1.0)
    return lo, hi


def _fractional(x: np.ndarray, binary_idx) -> tuple[int, float]:
    """Most fractional binary: (index, fractionality), ties at lowest index."""
    best_j, best_f = -1, 0.0
    for j in binary_idx:
        f = abs(x[j] - round(x[j]))
        if f > best_f + 1e-15:
            best_j, best_f = j, f
    return best_j, best_f


def _binary_value(lo_j: float, hi_j: float, preferred: float) -> float | None:
    """Pick a {0,1} value inside the box [lo_j, hi_j], preferring `preferred`."""
    for v in (preferred, 1.0 - preferred):
        if lo_j - 1e-12 <= v <= hi_j + 1e-12:
            return v
    return None


def _try_incumbent(lp, lo, hi, binary_idx, x_relax):
    """Fix binaries at their rounded values and resolve the continuous part."""
    lo2, hi2 = lo.copy(), hi.copy()
    for j in binary_idx:
        v = _binary_value(lo[j], hi[j], 1.0 if x_relax[j] >= 0.5 else 0.0)
        if v is None:
            return None
        lo2[j] = hi2[j] = v
    res = solve_lp(lp, lo2, hi2)
    if res.status != OPTIMAL:
        return None
    return res


def _dive(lp, lo, hi, binary_idx, x_root):
    """Depth-first rounding dive used to seed the incumbent."""
    lo, hi = lo.copy(), hi.copy()
    x = x_root
    for _ in range(len(binary_idx) + 1):
        j, frac = _fractional(x, binary_idx)
        if frac <= INT_TOL:
            return _try_incumbent(lp, lo, hi, binary_idx, x)
        lo_j, hi_j = lo[j], hi[j]
        v = _binary_value(lo_j, hi_j, 1.0 if x[j] >= 0.5 else 0.0)
        if v is None:
            return None
        lo[j] = hi[j] = v
        res = solve_lp(lp, lo, hi)
        if res.status != OPTIMAL:
            alt = _binary_value(lo_j, hi_j, 1.0 - v)
            if alt is None or alt == v:
                return None
            lo[j] = hi[j] = alt
            res = solve_lp(lp, lo, hi)
            if res.status != OPTIMAL:
                return None
        x = res.solution
    return None


def solve_mixed(
    model: MixedModel,
    gap_tol: float = 0.0,
    max_nodes: int = 500_000,
) -> SolveReport:
    """Best-first branch and bound over the binary variables.

    Nodes are ordered by their parent relaxation bound with a FIFO tie-break,
    branching picks the most fractional binary, and with `gap_tol = 0` search
    continues until optimality is proven exactly (modulo the 1e-9 LP noise
    floor).  A positive `gap_tol` allows stopping once the incumbent is within
    that absolute gap of the global lower bound.
    """
    start = time.perf_counter()
    lp = model.lp
    lo0, hi0 = _clamped_binary_bounds(model)
    root = solve_lp(lp, lo0, hi0)
    if root.status in (INFEASIBLE, UNBOUNDED):
        return SolveReport(status=root.status, nodes=1, wall_ms=_ms(start))

    incumbent = None  # (objective, solution)
    if model.binary_idx:
        seeded = _dive(lp, lo0, hi0, model.binary_idx, root.solution)
        if seeded is not None:
            incumbent = (seeded.objective, seeded.solution)

    prune_slack = max(gap_tol, 1e-9)
    heap = [(root.objective, 0, lo0, hi0)]
    seq = 1
    nodes = 0
    global_lb = root.objective
    budget_hit = False
    while heap:
        bound, _, lo, hi = heapq.heappop(heap)
        global_lb = bound
        if incumbent is not None and bound >= incumbent[0] - prune_slack:
            # best-first order: every remaining node is at least as bad
            global_lb = incumbent[0] if gap_tol == 0.0 else bound
            heap.clear()
            break
        if nodes >= max_nodes:
            budget_hit = True
            break
        nodes += 1
        res = solve_lp(lp, lo, hi)
        if res.status != OPTIMAL:
            continue
        value = res.objective
        if incumbent is not None and value >= incumbent[0] - prune_slack:
            continue
        j, frac = _fractional(res.solution, model.binary_idx)
        if frac <= INT_TOL:
            cand = _try_incumbent(lp, lo, hi, model.binary_idx, res.solution)
            if cand is not None and (
                incumbent is None or cand.objective < incumbent[0] - 1e-12
            ):
                incumbent = (cand.objective, cand.solution)
            continue
        for v in (0.0, 1.0):
            lo2, hi2 = lo.copy(), hi.copy()
            if v == 0.0:
                hi2[j] = 0.0
            else:
                lo2[j] = 1.0
            heapq.heappush(heap, (value, seq, lo2, hi2))
            seq += 1

    wall = _ms(start)
    if incumbent is None:
        if budget_hit:
            return SolveReport(status=GAP_REACHED, nodes=nodes, wall_ms=wall)
        return SolveReport(status=INFEASIBLE, nodes=nodes, wall_ms=wall)
    if not heap and not budget_hit:
        global_lb = incumbent[0]
    gap = max(0.0, incumbent[0] - global_lb)
    status = GAP_REACHED if budget_hit and gap > gap_tol else OPTIMAL
    return SolveReport(
        status=status,
        objective=incumbent[0],
        solution=incumbent[1],
        gap_abs=gap,
        gap_rel=gap / max(1.0, abs(incumbent[0])),
        nodes=nodes,
        wall_ms=wall,
    )


def resolve_with_added_rows(
    model: MixedModel,
    new_rows,
    gap_tol: float = 0.0,
    max_nodes: int = 500_000,
) -> SolveReport:
    """Solve `model` with extra rows appended.

    Semantically identical to building the augmented model from scratch; the
    report's cut counter records how many rows were appended.
    """
    new_rows = tuple(new_rows)
    lp = replace(model.lp, rows=model.lp.rows + new_rows)
    report = solve_mixed(MixedModel(lp=lp, binary_idx=model.binary_idx),
                         gap_tol=gap_tol, max_nodes=max_nodes)
    report.cuts = len(new_rows)
    return report


def dump_model_text(model: MixedModel | LinearProgram) -> str:
    """Plain-text LP-format dump of a model, for debugging."""
    lp = model.lp if isinstance(model, MixedModel) else model
    binaries = set(model.binary_idx) if isinstance(model, MixedModel) else set()
    lines = ["Minimize", " obj: " + _linear_text(lp.costs)]
    lines.append("Subject To")
    for i, row in enumerate(lp.rows):
        op = {LESS_EQUAL: "<=", GREATER_EQUAL: ">=", EQUAL: "="}[row.rel]
        lines.append(f" c{i}: {_linear_text(row.coeffs)} {op} {row.rhs:g}")
    lines.append("Bounds")
    for j in range(lp.num_vars):
        if j in binaries:
            continue
        lo, hi = lp.lower[j], lp.upper[j]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:g}"
        hi_s = "+inf" if not np.isfinite(hi) else f"{hi:g}"
        lines.append(f" {lo_s} <= x{j} <= {hi_s}")
    if binaries:
        lines.append("Binary")
        lines.append(" " + " ".join(f"x{j}" for j in sorted(binaries)))
    lines.append("End")
    return "\n".join(lines) + "\n"


def _linear_text(coeffs: np.ndarray) -> str:
    terms = []
    for j, c in enumerate(coeffs):
        if c == 0.0:
            continue
        sign = "-" if c < 0 else ("+" if terms else "")
        terms.append(f"{sign} {abs(c):g} x{j}" if terms else f"{sign}{abs(c):g} x{j}")
    return " ".join(terms) if terms else "0"
