"""Adversary: worst cost distribution in a transport ball around the samples.

For a fixed solution x and risk level equal to an exact sample fraction, the
worst-case risk is the best way to split a total transport budget across a
subset of realizations whose costs get raised toward the support ceiling.
Candidate subsets are enumerated exactly up to a size threshold; beyond it a
mixed-binary linearization picks the subset.  Closed forms cover the
unrestricted support and the box / sum-norm case.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import milp, risk
from .milp import LinearProgram, LinearRow, MixedModel
from .model import (
    AmbiguitySpec,
    BoxSupport,
    EmpiricalDistribution,
    InputError,
    PolytopeSupport,
    RiskSpec,
    Support,
    UnrestrictedSupport,
    ensure_samples_in_support,
)

# exact subset enumeration while C(N, l) stays at or below this
MAX_ENUM_SUBSETS = 200_000

_FW_MAX_ITER = 10_000
_FW_GAP = 1e-6


@dataclass(frozen=True, eq=False)
class WorstCaseCertificate:
    """Worst distribution found for one solution, with audit fields."""

    distribution: EmpiricalDistribution
    value: float
    active_subset: tuple[int, ...]
    budget_used: float


def count_norm_term(k: float, q: float) -> float:
    """Dual-norm size of a binary vector with k ones: k^(1/q') with q' dual to q."""
    k = float(k)
    if k <= 0.0:
        return 0.0
    if q == 1.0:
        return 1.0  # sup-norm of a nonzero binary vector
    if q == math.inf:
        return k
    return k ** (1.0 - 1.0 / q)


def solution_norm_term(x: np.ndarray, q: float) -> float:
    """Dual-norm size of a binary solution vector."""
    return count_norm_term(np.asarray(x, dtype=float).sum(), q)


def tail_scale(alpha: float, n_samples: int) -> float:
    """Growth factor of the regularizer: N below 1/N, else 1/alpha."""
    if alpha < 1.0 / n_samples:
        return float(n_samples)
    return 1.0 / alpha


def worst_value_unrestricted(
    x: np.ndarray, dist: EmpiricalDistribution, spec: AmbiguitySpec, alpha: float
) -> float:
    """Worst-case risk over the nonnegative orthant: a norm-regularized risk."""
    base = risk.cvar_discrete(dist, x, alpha)
    gain = tail_scale(alpha, dist.n_samples)
    return base + gain * spec.epsilon * solution_norm_term(x, spec.q)


def closed_form_box_q1(
    x: np.ndarray,
    dist: EmpiricalDistribution,
    b: np.ndarray,
    epsilon: float,
    tail_count: int,
) -> float:
    """Box support with the sum ground norm: min of cap and shifted risk.

    Valid when the risk level is exactly tail_count / N and all samples sit
    inside [0, b]; the support's lower bounds never matter because the
    adversary only raises costs.
    """
    b = np.asarray(b, dtype=float)
    n_samples = dist.n_samples
    tail_count = int(tail_count)
    if not 1 <= tail_count <= n_samples:
        raise InputError("tail count must lie in 1..N")
    if float(epsilon) < 0:
        raise InputError("radius must be nonnegative")
    if b.shape != (dist.n_items,):
        raise InputError("upper bound vector has the wrong length")
    if np.any(dist.realizations > b + 1e-9 * (1 + np.abs(b))):
        raise InputError("samples exceed the box upper bounds")
    if np.any(dist.realizations < -1e-9):
        raise InputError("samples must be nonnegative")
    x = np.asarray(x, dtype=float)
    cap = float(b @ x)
    alpha = tail_count / n_samples
    base = risk.cvar_discrete(dist, x, alpha)
    return min(cap, base + n_samples * float(epsilon) / tail_count)


# ---------------------------------------------------------------------------
# inner lifts on a box support


def _selected_caps(x, subset, dist, box):
    """Per-realization headroom on the selected coordinates, clipped at 0."""
    sel = np.flatnonzero(np.asarray(x) > 0.5)
    caps = []
    for i in subset:
        caps.append(np.clip(box.upper[sel] - dist.realizations[i][sel], 0.0, None))
    return sel, caps


def _lift_box_q1(caps, budget):
    """Greedy fill in (realization, coordinate) order; gain is min(budget, headroom)."""
    deltas = []
    remaining = budget
    gain = 0.0
    for c in caps:
        d = np.zeros_like(c)
        for j in range(c.size):
            if remaining <= 0.0:
                break
            step = min(c[j], remaining)
            d[j] = step
            remaining -= step
            gain += step
        deltas.append(d)
    return deltas, gain


def _lift_box_qinf(caps, budget):
    """Water-fill a shared budget across realizations by marginal slope.

    Each realization's gain at per-realization level t is sum(min(t, cap_j)),
    a concave piecewise-linear function whose slope counts the caps above t.
    Always advancing the realization with the steepest current slope (ties at
    the lowest position) is exact for this separable concave objective.
    """
    levels = [0.0] * len(caps)
    sorted_caps = [np.sort(c[c > 0.0]) for c in caps]
    ptrs = [0] * len(caps)
    heap = [(-float(sc.size), i) for i, sc in enumerate(sorted_caps) if sc.size]
    heapq.heapify(heap)
    remaining = budget
    while heap and remaining > 1e-15:
        neg_slope, i = heapq.heappop(heap)
        sc = sorted_caps[i]
        current = sc.size - ptrs[i]
        if current != -neg_slope:
            # stale entry from an earlier push; reinsert at the true slope
            if current > 0:
                heapq.heappush(heap, (-float(current), i))
            continue
        next_cap = float(sc[ptrs[i]])
        step = min(next_cap - levels[i], remaining)
        levels[i] += step
        remaining -= step
        if levels[i] >= next_cap - 1e-12:
            while ptrs[i] < sc.size and sc[ptrs[i]] <= levels[i] + 1e-12:
                ptrs[i] += 1
            if sc.size - ptrs[i] > 0:
                heapq.heappush(heap, (-float(sc.size - ptrs[i]), i))
    deltas = [np.minimum(levels[i], caps[i]) for i in range(len(caps))]
    gain = float(sum(d.sum() for d in deltas))
    return deltas, gain


class _LevelGain:
    """Water-level evaluation of max sum(delta) over the Euclidean ball.

    For one realization with caps c and budget t, the maximizer of
    sum(delta) over {0 <= delta <= c, ||delta||_2 <= t} is delta_j =
    min(c_j, theta) with theta the level at which the ball is used up.
    Sorting the caps gives a closed form per segment.
    """

    def __init__(self, caps: np.ndarray):
        c = np.sort(caps[caps > 0.0])
        self.caps = c
        self.k = c.size
        self.prefix = np.concatenate([[0.0], np.cumsum(c)])
        self.prefix_sq = np.concatenate([[0.0], np.cumsum(c**2)])
        # squared budget consumed when the water level reaches cap r
        self.usage_at = np.array(
            [self.prefix_sq[r] + (self.k - r) * (c[r] ** 2) for r in range(self.k)]
        )
        self.full_gain = float(self.prefix[self.k])
        self.full_budget = math.sqrt(self.prefix_sq[self.k]) if self.k else 0.0

    def level(self, t: float) -> float:
        if self.k == 0 or t <= 0.0:
            return 0.0
        b = t * t
        if b >= self.prefix_sq[self.k]:
            return float(self.caps[-1])
        r = int(np.searchsorted(self.usage_at, b, side="right"))
        return math.sqrt((b - self.prefix_sq[r]) / (self.k - r))

    def gain(self, t: float) -> float:
        if self.k == 0 or t <= 0.0:
            return 0.0
        if t >= self.full_budget:
            return self.full_gain
        theta = self.level(t)
        r = int(np.searchsorted(self.caps, theta, side="right"))
        return float(self.prefix[r] + (self.k - r) * theta)

    def slope(self, t: float) -> float:
        if self.k == 0 or t >= self.full_budget - 1e-15:
            return 0.0
        if t <= 0.0:
            return math.sqrt(self.k)
        return t / self.level(t)


def _lift_box_q2(caps, budget):
    """Frank-Wolfe over the split of the budget across realizations."""
    gains = [_LevelGain(c) for c in caps]
    m = len(gains)
    if m == 0 or budget <= 0.0:
        return [np.zeros_like(c) for c in caps], 0.0
    t = np.full(m, budget / m)
    for _ in range(_FW_MAX_ITER):
        grad = np.array([g.slope(t[i]) for i, g in enumerate(gains)])
        j = int(np.argmax(grad))
        if grad[j] <= 1e-15:
            break
        value = float(sum(g.gain(t[i]) for i, g in enumerate(gains)))
        gap = budget * grad[j] - float(grad @ t)
        if gap <= _FW_GAP * (1.0 + abs(value)):
            break
        s = np.zeros(m)
        s[j] = budget
        direction = s - t
        lo_eta, hi_eta = 0.0, 1.0
        for _ in range(70):
            m1 = lo_eta + (hi_eta - lo_eta) / 3.0
            m2 = hi_eta - (hi_eta - lo_eta) / 3.0
            f1 = sum(g.gain(v) for g, v in zip(gains, t + m1 * direction))
            f2 = sum(g.gain(v) for g, v in zip(gains, t + m2 * direction))
            if f1 < f2:
                lo_eta = m1
            else:
                hi_eta = m2
        t = t + 0.5 * (lo_eta + hi_eta) * direction
    deltas = []
    for i, g in enumerate(gains):
        theta = g.level(min(t[i], g.full_budget))
        deltas.append(np.minimum(caps[i], theta))
    gain = float(sum(d.sum() for d in deltas))
    return deltas, gain


def inner_lift(
    x: np.ndarray,
    subset,
    dist: EmpiricalDistribution,
    support: BoxSupport,
    budget: float,
    q: float,
) -> tuple[np.ndarray, float]:
    """Best raise of the subset's costs on selected coordinates, box support.

    Returns (deltas, gain) with deltas an N x n array that is zero outside
    the subset rows and unselected columns.
    """
    if not isinstance(support, BoxSupport):
        raise InputError("inner lift requires a box support")
    subset = tuple(int(i) for i in subset)
    x = np.asarray(x, dtype=float)
    sel, caps = _selected_caps(x, subset, dist, support)
    budget = float(budget)
    if q == 1.0:
        per_row, gain = _lift_box_q1(caps, budget)
    elif q == math.inf:
        per_row, gain = _lift_box_qinf(caps, budget)
    elif q == 2.0:
        per_row, gain = _lift_box_q2(caps, budget)
    else:
        raise InputError("norm order must be 1, 2 or inf")
    deltas = np.zeros_like(dist.realizations)
    for row, i in enumerate(subset):
        deltas[i, sel] = per_row[row]
    return deltas, float(gain)


# ---------------------------------------------------------------------------
# inner lifts on a polytope support (raising selected coordinates only)


def _polytope_lift_lp(x, subset, dist, support, budget, q):
    """LP lift for sum or sup ground norms on a polytope support."""
    sel = np.flatnonzero(np.asarray(x) > 0.5)
    m = len(subset)
    k = sel.size
    if k == 0 or m == 0:
        return [np.zeros(0) for _ in subset], 0.0, sel
    # variables: deltas (m*k) >= 0, then per-realization norm bounds (m) if q=inf
    extra = m if q == math.inf else 0
    nv = m * k + extra
    costs = np.zeros(nv)
    costs[: m * k] = -1.0  # maximize total raise
    rows = []
    A, h = support.normals, support.offsets
    for r, i in enumerate(subset):
        base_slack = h - A @ dist.realizations[i]
        for row_idx in range(A.shape[0]):
            a = np.zeros(nv)
            a[r * k : (r + 1) * k] = A[row_idx, sel]
            rows.append(LinearRow(a, milp.LESS_EQUAL, float(base_slack[row_idx])))
    if q == 1.0:
        a = np.zeros(nv)
        a[: m * k] = 1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, budget))
    else:
        for r in range(m):
            for jj in range(k):
                a = np.zeros(nv)
                a[r * k + jj] = 1.0
                a[m * k + r] = -1.0
                rows.append(LinearRow(a, milp.LESS_EQUAL, 0.0))
        a = np.zeros(nv)
        a[m * k :] = 1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, budget))
    lp = LinearProgram(costs, tuple(rows), np.zeros(nv), np.full(nv, np.inf))
    res = milp.solve_lp(lp)
    if res.status != milp.OPTIMAL:
        raise milp.SolverError(f"polytope lift LP ended {res.status}")
    sol = res.solution
    per_row = [sol[r * k : (r + 1) * k].clip(min=0.0) for r in range(m)]
    gain = float(sum(d.sum() for d in per_row))
    return per_row, gain, sel


def _polytope_lift_q2(x, subset, dist, support, budget):
    """Cutting-plane lift for the Euclidean ground norm on a polytope.

    The per-realization norm bound t_r >= ||delta_r||_2 is approximated from
    below by linear cuts t_r >= u @ delta_r with unit vectors u, starting from
    the coordinate directions and refining at the current maximizer until no
    violation above 1e-8 remains, so the final value is exact to tolerance.
    """
    sel = np.flatnonzero(np.asarray(x) > 0.5)
    m = len(subset)
    k = sel.size
    if k == 0 or m == 0:
        return [np.zeros(0) for _ in subset], 0.0, sel
    A, h = support.normals, support.offsets
    cuts = [[np.eye(k)[j] for j in range(k)] for _ in range(m)]
    for _ in range(300):
        nv = m * k + m
        costs = np.zeros(nv)
        costs[: m * k] = -1.0
        rows = []
        for r, i in enumerate(subset):
            base_slack = h - A @ dist.realizations[i]
            for row_idx in range(A.shape[0]):
                a = np.zeros(nv)
                a[r * k : (r + 1) * k] = A[row_idx, sel]
                rows.append(LinearRow(a, milp.LESS_EQUAL, float(base_slack[row_idx])))
            for u in cuts[r]:
                a = np.zeros(nv)
                a[r * k : (r + 1) * k] = u
                a[m * k + r] = -1.0
                rows.append(LinearRow(a, milp.LESS_EQUAL, 0.0))
        a = np.zeros(nv)
        a[m * k :] = 1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, budget))
        lp = LinearProgram(costs, tuple(rows), np.zeros(nv), np.full(nv, np.inf))
        res = milp.solve_lp(lp)
        if res.status != milp.OPTIMAL:
            raise milp.SolverError(f"polytope lift LP ended {res.status}")
        sol = res.solution
        violated = False
        for r in range(m):
            d = sol[r * k : (r + 1) * k]
            norm = float(np.linalg.norm(d))
            bound = float(sol[m * k + r])
            if norm > bound + 1e-8:
                cuts[r].append(d / norm)
                violated = True
        if not violated:
            per_row = [sol[r * k : (r + 1) * k].clip(min=0.0) for r in range(m)]
            gain = float(sum(d.sum() for d in per_row))
            return per_row, gain, sel
    raise milp.SolverError("polytope Euclidean lift did not converge")


def _polytope_lift(x, subset, dist, support, budget, q):
    if q == 2.0:
        per_row, gain, sel = _polytope_lift_q2(x, subset, dist, support, budget)
    else:
        per_row, gain, sel = _polytope_lift_lp(x, subset, dist, support, budget, q)
    deltas = np.zeros_like(dist.realizations)
    for row, i in enumerate(subset):
        deltas[i, sel] = per_row[row]
    return deltas, gain


# ---------------------------------------------------------------------------
# subset search


def _norm(vec: np.ndarray, q: float) -> float:
    if q == 1.0:
        return float(np.abs(vec).sum())
    if q == math.inf:
        return float(np.abs(vec).max(initial=0.0))
    return float(np.linalg.norm(vec))


def _certificate(dist, x, deltas, subset, value, q):
    lifted = EmpiricalDistribution(dist.realizations + deltas)
    budget_used = float(sum(_norm(deltas[i], q) for i in range(dist.n_samples)))
    return WorstCaseCertificate(
        distribution=lifted,
        value=float(value),
        active_subset=tuple(int(i) for i in subset),
        budget_used=budget_used,
    )


def _lift_for(x, subset, dist, support, budget, q):
    if isinstance(support, BoxSupport):
        return inner_lift(x, subset, dist, support, budget, q)
    return _polytope_lift(x, list(subset), dist, support, budget, q)


def _single_gains(x, dist, support, budget, q):
    """Per-realization gain with the whole budget, used to prune subsets."""
    out = np.empty(dist.n_samples)
    for i in range(dist.n_samples):
        _, gain = _lift_for(x, (i,), dist, support, budget, q)
        out[i] = gain
    return out


def _enumerate_subsets(x, dist, support, spec, tail_count):
    n_samples = dist.n_samples
    budget = n_samples * spec.epsilon
    base = dist.costs(x)
    singles = _single_gains(x, dist, support, budget, spec.q)
    best_value = -np.inf
    best = None
    for subset in itertools.combinations(range(n_samples), tail_count):
        idx = list(subset)
        bound = (base[idx].sum() + singles[idx].sum()) / tail_count
        if bound <= best_value + 1e-12:
            continue
        deltas, gain = _lift_for(x, subset, dist, support, budget, spec.q)
        value = (base[idx].sum() + gain) / tail_count
        if value > best_value + 1e-12:
            best_value = value
            best = (subset, deltas)
    subset, deltas = best
    return deltas, subset, best_value


def _mip_subset(x, dist, support, spec, tail_count):
    """Pick the lifted subset with a mixed-binary linearization, then re-lift.

    Variables: y_i selection binaries, v_i linearized selected costs, and the
    raise variables of the chosen ground norm.  Only the subset choice is kept
    from the solve; the exact lift is recomputed for that subset.
    """
    if spec.q == 2.0:
        raise InputError(
            "Euclidean ground norm beyond the enumeration threshold is not "
            "supported; lower N or switch the norm order"
        )
    n_samples = dist.n_samples
    budget = n_samples * spec.epsilon
    x = np.asarray(x, dtype=float)
    sel = np.flatnonzero(x > 0.5)
    k = sel.size
    base = dist.costs(x)
    if isinstance(support, BoxSupport):
        caps = np.clip(support.upper[sel] - dist.realizations[:, sel], 0.0, None)
        big_m = float(support.upper[sel].sum()) if k else 0.0
    else:
        caps = None
        big_m = float(support.coordinate_maxima[sel].sum()) if k else 0.0
    # layout: y (N) | v (N) | d (N*k) | s (N if q=inf)
    extra = n_samples if spec.q == math.inf else 0
    nv = 2 * n_samples + n_samples * k + extra
    costs_vec = np.zeros(nv)
    costs_vec[n_samples : 2 * n_samples] = -1.0 / tail_count
    d0 = 2 * n_samples
    rows = []
    a = np.zeros(nv)
    a[:n_samples] = 1.0
    rows.append(LinearRow(a, milp.EQUAL, float(tail_count)))
    for i in range(n_samples):
        a = np.zeros(nv)
        a[n_samples + i] = 1.0
        a[i] = -big_m
        rows.append(LinearRow(a, milp.LESS_EQUAL, 0.0))
        a = np.zeros(nv)
        a[n_samples + i] = 1.0
        a[d0 + i * k : d0 + (i + 1) * k] = -1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, float(base[i])))
    if isinstance(support, PolytopeSupport):
        A, h = support.normals, support.offsets
        for i in range(n_samples):
            slack = h - A @ dist.realizations[i]
            for r in range(A.shape[0]):
                a = np.zeros(nv)
                a[d0 + i * k : d0 + (i + 1) * k] = A[r, sel]
                rows.append(LinearRow(a, milp.LESS_EQUAL, float(slack[r])))
    if spec.q == 1.0:
        a = np.zeros(nv)
        a[d0 : d0 + n_samples * k] = 1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, budget))
    else:
        s0 = d0 + n_samples * k
        for i in range(n_samples):
            for jj in range(k):
                a = np.zeros(nv)
                a[d0 + i * k + jj] = 1.0
                a[s0 + i] = -1.0
                rows.append(LinearRow(a, milp.LESS_EQUAL, 0.0))
        a = np.zeros(nv)
        a[s0:] = 1.0
        rows.append(LinearRow(a, milp.LESS_EQUAL, budget))
    lower = np.zeros(nv)
    upper = np.full(nv, np.inf)
    upper[:n_samples] = 1.0
    if isinstance(support, BoxSupport) and k:
        for i in range(n_samples):
            upper[d0 + i * k : d0 + (i + 1) * k] = caps[i]
    model = MixedModel(
        lp=LinearProgram(costs_vec, tuple(rows), lower, upper),
        binary_idx=tuple(range(n_samples)),
    )
    res = milp.solve_mixed(model)
    if res.status != milp.OPTIMAL:
        raise milp.SolverError(f"subset selection model ended {res.status}")
    subset = tuple(int(i) for i in np.flatnonzero(res.solution[:n_samples] > 0.5))
    deltas, gain = _lift_for(x, subset, dist, support, budget, spec.q)
    value = (base[list(subset)].sum() + gain) / tail_count
    return deltas, subset, value


def worst_distribution(
    x: np.ndarray,
    dist: EmpiricalDistribution,
    support: Support,
    spec: AmbiguitySpec,
    risk_spec: RiskSpec,
) -> WorstCaseCertificate:
    """Worst distribution in the transport ball for a fixed solution.

    Requires the risk level to be an exact sample fraction and a bounded
    support; the returned certificate carries the lifted distribution, its
    risk value, the lifted subset, and the transport budget actually used.
    """
    if isinstance(support, UnrestrictedSupport):
        raise InputError(
            "worst distributions need a bounded support; use "
            "worst_value_unrestricted for the nonnegative orthant"
        )
    if not risk_spec.is_exact_fraction:
        tail = risk_spec.tail_count
        raise InputError(
            f"risk level must be an exact fraction of the sample count; "
            f"round alpha to {tail}/{risk_spec.n_samples}"
        )
    if risk_spec.n_samples != dist.n_samples:
        raise InputError("risk spec sample count does not match the distribution")
    ensure_samples_in_support(dist, support)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x - np.round(x)) > 1e-6):
        raise InputError("solution must be binary")
    x = np.round(x)
    tail_count = risk_spec.tail_count
    alpha = tail_count / dist.n_samples

    if spec.epsilon == 0.0:
        order = np.argsort(-dist.costs(x), kind="stable")
        subset = tuple(sorted(int(i) for i in order[:tail_count]))
        value = risk.cvar_discrete(dist, x, alpha)
        return WorstCaseCertificate(
            distribution=dist, value=value, active_subset=subset, budget_used=0.0
        )

    if math.comb(dist.n_samples, tail_count) <= MAX_ENUM_SUBSETS:
        deltas, subset, value = _enumerate_subsets(x, dist, support, spec, tail_count)
    else:
        deltas, subset, value = _mip_subset(x, dist, support, spec, tail_count)

    cert = _certificate(dist, x, deltas, subset, value, spec.q)
    _check_certificate(cert, x, dist, support, spec, alpha)
    return cert


def _check_certificate(cert, x, dist, support, spec, alpha):
    budget = dist.n_samples * spec.epsilon
    if cert.budget_used > budget + 1e-6:
        raise milp.SolverError("certificate exceeds the transport budget")
    ensure_samples_in_support(cert.distribution, support, tol=1e-6)
    check = risk.cvar_discrete(cert.distribution, x, alpha)
    if abs(check - cert.value) > 1e-6 * (1.0 + abs(check)):
        raise milp.SolverError(
            "certificate value disagrees with its distribution's risk"
        )


def certificate_to_doc(cert: WorstCaseCertificate) -> dict:
    return {
        "distribution": cert.distribution.realizations.tolist(),
        "value": cert.value,
        "active_subset": list(cert.active_subset),
        "budget_used": cert.budget_used,
    }


def certificate_from_doc(doc: dict) -> WorstCaseCertificate:
    return WorstCaseCertificate(
        distribution=EmpiricalDistribution(doc["distribution"]),
        value=float(doc["value"]),
        active_subset=tuple(int(i) for i in doc["active_subset"]),
        budget_used=float(doc["budget_used"]),
    )
