"""Domain types: cost samples, support sets, ambiguity and risk parameters.

Every object validates its data on construction and is immutable afterwards,
so instances can be shared freely between solver calls and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import milp
from .milp import LinearProgram, LinearRow, MixedModel


class InputError(ValueError):
    """Rejected input; the message says what to fix."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Equally weighted cost samples, one row per realization."""

    realizations: np.ndarray

    def __post_init__(self):
        r = np.array(self.realizations, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
            raise InputError("realizations must be a nonempty N x n matrix")
        if not np.all(np.isfinite(r)):
            raise InputError("realizations must be finite")
        object.__setattr__(self, "realizations", _freeze(r))

    @property
    def n_samples(self) -> int:
        return self.realizations.shape[0]

    @property
    def n_items(self) -> int:
        return self.realizations.shape[1]

    def costs(self, x: np.ndarray) -> np.ndarray:
        """Per-realization cost of the solution x."""
        return self.realizations @ np.asarray(x, dtype=float)

    def mean(self) -> np.ndarray:
        return self.realizations.mean(axis=0)


@dataclass(frozen=True)
class UnrestrictedSupport:
    """The full nonnegative orthant."""

    n_items: int

    def __post_init__(self):
        if int(self.n_items) < 1:
            raise InputError("support needs at least one coordinate")
        object.__setattr__(self, "n_items", int(self.n_items))

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        point = np.asarray(point, dtype=float)
        return point.shape == (self.n_items,) and bool(np.all(point >= -tol))


@dataclass(frozen=True, eq=False)
class BoxSupport:
    """Axis-aligned box inside the nonnegative orthant."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise InputError("box bounds must be two vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if np.any(lo < 0):
            raise InputError("box must lie in the nonnegative orthant")
        if np.any(lo > hi):
            raise InputError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", _freeze(lo))
        object.__setattr__(self, "upper", _freeze(hi))

    @property
    def n_items(self) -> int:
        return self.lower.size

    @property
    def coordinate_maxima(self) -> np.ndarray:
        return self.upper

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n_items,):
            return False
        scale = 1.0 + float(np.abs(self.upper).max(initial=0.0))
        return bool(
            np.all(point >= self.lower - tol * scale)
            and np.all(point <= self.upper + tol * scale)
        )


@dataclass(frozen=True, eq=False)
class PolytopeSupport:
    """Bounded polyhedron {p >= 0 : normals @ p <= offsets}.

    Nonemptiness and boundedness are certified at construction by linear
    programs; the per-coordinate maxima found on the way are kept because the
    sample-distortion solver needs them.
    """

    normals: np.ndarray
    offsets: np.ndarray
    coordinate_maxima: np.ndarray = None

    def __post_init__(self):
        A = np.array(self.normals, dtype=float)
        h = np.array(self.offsets, dtype=float)
        if A.ndim != 2 or h.ndim != 1 or A.shape[0] != h.size:
            raise InputError("polytope needs a matrix of normals and matching offsets")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(h))):
            raise InputError("polytope data must be finite")
        object.__setattr__(self, "normals", _freeze(A))
        object.__setattr__(self, "offsets", _freeze(h))
        n = A.shape[1]
        rows = tuple(
            LinearRow(A[i], milp.LESS_EQUAL, h[i]) for i in range(A.shape[0])
        )
        maxima = np.empty(n)
        for j in range(n):
            costs = np.zeros(n)
            costs[j] = -1.0
            res = milp.solve_lp(
                LinearProgram(costs, rows, np.zeros(n), np.full(n, np.inf))
            )
            if res.status == milp.INFEASIBLE:
                raise InputError("polytope support is empty")
            if res.status != milp.OPTIMAL:
                raise InputError(
                    "polytope support is unbounded; add rows capping every coordinate"
                )
            maxima[j] = -res.objective
        object.__setattr__(self, "coordinate_maxima", _freeze(maxima))

    @property
    def n_items(self) -> int:
        return self.normals.shape[1]

    def rows(self) -> tuple[LinearRow, ...]:
        return tuple(
            LinearRow(self.normals[i], milp.LESS_EQUAL, self.offsets[i])
            for i in range(self.normals.shape[0])
        )

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n_items,):
            return False
        if np.any(point < -tol):
            return False
        slack = self.offsets - self.normals @ point
        scale = 1.0 + float(np.abs(self.offsets).max(initial=0.0))
        return bool(np.all(slack >= -tol * scale))


Support = UnrestrictedSupport | BoxSupport | PolytopeSupport


def is_bounded(support: Support) -> bool:
    return not isinstance(support, UnrestrictedSupport)


def ensure_samples_in_support(
    dist: EmpiricalDistribution, support: Support, tol: float = 1e-7
) -> None:
    """Raise InputError naming every sample that falls outside the support."""
    if dist.n_items != support.n_items:
        raise InputError(
            f"samples have {dist.n_items} coordinates, support has {support.n_items}"
        )
    outside = [
        i
        for i in range(dist.n_samples)
        if not support.contains(dist.realizations[i], tol=tol)
    ]
    if outside:
        raise InputError(
            f"samples {outside} lie outside the support; "
            "clip them or widen the support"
        )


@dataclass(frozen=True)
class AmbiguitySpec:
    """Transport-ball parameters: radius and ground-norm order."""

    epsilon: float
    q: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps < 0:
            raise InputError("radius must be finite and nonnegative")
        q = float(self.q)
        if q not in (1.0, 2.0, math.inf):
            raise InputError("norm order must be 1, 2 or inf")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "q", q)

    @property
    def dual_q(self) -> float:
        if self.q == 1.0:
            return math.inf
        if self.q == math.inf:
            return 1.0
        return 2.0


def risk_bracket(alpha: float, n_samples: int) -> tuple[int, bool]:
    """Tail count for averaging the largest costs, and exactness of alpha.

    Returns (tail_count, is_exact) where tail_count is the smallest integer l
    with alpha <= l / n_samples, and is_exact says whether alpha equals
    l / n_samples up to a 1e-9 absolute tolerance.
    """
    alpha = float(alpha)
    n_samples = int(n_samples)
    if not 0.0 < alpha <= 1.0:
        raise InputError("risk level must lie in (0, 1]")
    if n_samples < 1:
        raise InputError("need at least one sample")
    t = alpha * n_samples
    tail = int(math.ceil(t - 1e-9))
    tail = max(1, min(tail, n_samples))
    return tail, abs(t - tail) <= 1e-9


@dataclass(frozen=True)
class RiskSpec:
    """Risk level together with its tail bracket for a given sample count."""

    alpha: float
    n_samples: int
    tail_count: int
    is_exact_fraction: bool

    @classmethod
    def from_alpha(cls, alpha: float, n_samples: int) -> "RiskSpec":
        tail, exact = risk_bracket(alpha, n_samples)
        return cls(float(alpha), int(n_samples), tail, exact)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Binary feasible region {x in {0,1}^n : rows hold}.

    Construction runs one feasibility solve so that an empty region is
    rejected immediately rather than deep inside a sweep.
    """

    n_items: int
    rows: tuple[LinearRow, ...]
    tag: str = "generic"

    def __post_init__(self):
        n = int(self.n_items)
        if n < 1:
            raise InputError("feasible set needs at least one item")
        rows = tuple(self.rows)
        for row in rows:
            if row.coeffs.size != n:
                raise InputError("constraint length does not match item count")
        object.__setattr__(self, "n_items", n)
        object.__setattr__(self, "rows", rows)
        probe = milp.solve_mixed(self._model(np.zeros(n)))
        if probe.status != milp.OPTIMAL:
            raise InputError("feasible set contains no binary point")

    def _model(self, costs: np.ndarray) -> MixedModel:
        lp = LinearProgram(
            np.asarray(costs, dtype=float),
            self.rows,
            np.zeros(self.n_items),
            np.ones(self.n_items),
        )
        return MixedModel(lp=lp, binary_idx=tuple(range(self.n_items)))

    def deterministic_model(self, costs: np.ndarray) -> MixedModel:
        """min costs @ x over the feasible binaries, as a solver model."""
        return self._model(costs)

    def contains(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_items,):
            return False
        if np.any(np.abs(x - np.round(x)) > tol):
            return False
        return all(row.satisfied_by(np.round(x)) for row in self.rows)


# ---------------------------------------------------------------------------
# JSON fragments for the pieces owned by this module


def support_to_doc(support: Support) -> dict:
    if isinstance(support, UnrestrictedSupport):
        return {"type": "unrestricted", "n": support.n_items}
    if isinstance(support, BoxSupport):
        return {
            "type": "box",
            "lower": support.lower.tolist(),
            "upper": support.upper.tolist(),
        }
    return {
        "type": "polytope",
        "normals": support.normals.tolist(),
        "offsets": support.offsets.tolist(),
    }


def support_from_doc(doc: dict) -> Support:
    kind = doc.get("type")
    if kind == "unrestricted":
        return UnrestrictedSupport(n_items=int(doc["n"]))
    if kind == "box":
        return BoxSupport(lower=doc["lower"], upper=doc["upper"])
    if kind == "polytope":
        return PolytopeSupport(normals=doc["normals"], offsets=doc["offsets"])
    raise InputError(f"unknown support type {kind!r}")


def q_to_doc(q: float) -> object:
    return "inf" if q == math.inf else (int(q) if float(q).is_integer() else q)


def q_from_doc(value: object) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise InputError(f"unknown norm order {value!r}")
    return float(value)
