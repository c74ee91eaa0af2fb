"""Concrete problem families: knapsack, representatives selection, DAG paths.

Each family carries its own validation, a linear encoding into a FeasibleSet,
and a deterministic solver (per-group minimum, topological relaxation, or a
mixed-binary solve for the knapsack).  The module also houses the reduction
from min-max selection to risk minimization and the layered-graph view of a
selection instance.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import milp
from .milp import LinearRow
from .model import EmpiricalDistribution, FeasibleSet, InputError


@dataclass(frozen=True, eq=False)
class KnapsackInstance:
    """Covering knapsack: pick items whose total weight reaches the demand."""

    weights: np.ndarray
    capacity: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "capacity", float(self.capacity))
        if weights.ndim != 1 or weights.size == 0:
            raise InputError("weights must be a nonempty vector")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InputError("weights must be nonnegative and finite")
        if self.capacity < 0:
            raise InputError("capacity must be nonnegative")
        if weights.sum() < self.capacity:
            raise InputError("total weight falls short of the capacity")

    @property
    def n_items(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class RepSelectionInstance:
    """Pick exactly one item from each group of a partition of the items."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(j) for j in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise InputError("every group must be nonempty")
        flat = sorted(j for g in groups for j in g)
        if flat != list(range(len(flat))):
            raise InputError("groups must partition the item indices exactly")

    @property
    def n_items(self) -> int:
        return sum(len(g) for g in self.groups)


@dataclass(frozen=True, eq=False)
class DagShortestPathInstance:
    """Arc-indexed acyclic graph; costs attach to arcs by list position."""

    n_vertices: int
    arcs: tuple[tuple[int, int], ...]
    source: int
    sink: int

    def __post_init__(self):
        arcs = tuple((int(a), int(b)) for a, b in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "n_vertices", int(self.n_vertices))
        object.__setattr__(self, "source", int(self.source))
        object.__setattr__(self, "sink", int(self.sink))
        m = self.n_vertices
        if m < 2 or not 0 <= self.source < m or not 0 <= self.sink < m:
            raise InputError("source and sink must be distinct valid vertices")
        if self.source == self.sink:
            raise InputError("source and sink must be distinct valid vertices")
        for a, b in arcs:
            if not (0 <= a < m and 0 <= b < m):
                raise InputError("arc endpoint out of range")
        if self.topological_order() is None:
            raise InputError("the arc list contains a cycle")
        reached = {self.source}
        frontier = deque([self.source])
        out = {}
        for a, b in arcs:
            out.setdefault(a, []).append(b)
        while frontier:
            v = frontier.popleft()
            for w in out.get(v, ()):
                if w not in reached:
                    reached.add(w)
                    frontier.append(w)
        if self.sink not in reached:
            raise InputError("the sink is unreachable from the source")

    @property
    def n_items(self) -> int:
        return len(self.arcs)

    def topological_order(self) -> list[int] | None:
        indeg = [0] * self.n_vertices
        out = {}
        for a, b in self.arcs:
            indeg[b] += 1
            out.setdefault(a, []).append(b)
        queue = deque(v for v in range(self.n_vertices) if indeg[v] == 0)
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in out.get(v, ()):
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        return order if len(order) == self.n_vertices else None


Instance = KnapsackInstance | RepSelectionInstance | DagShortestPathInstance


def encode(instance: Instance) -> FeasibleSet:
    """Linear-row encoding whose binary points are exactly the solutions."""
    if isinstance(instance, KnapsackInstance):
        row = LinearRow(
            instance.weights.copy(), milp.GREATER_EQUAL, instance.capacity
        )
        return FeasibleSet(instance.n_items, (row,), tag="knapsack")
    if isinstance(instance, RepSelectionInstance):
        n = instance.n_items
        rows = []
        for group in instance.groups:
            coeffs = np.zeros(n)
            coeffs[list(group)] = 1.0
            rows.append(LinearRow(coeffs, milp.EQUAL, 1.0))
        return FeasibleSet(n, tuple(rows), tag="selection")
    if isinstance(instance, DagShortestPathInstance):
        n = instance.n_items
        rows = []
        for v in range(instance.n_vertices):
            coeffs = np.zeros(n)
            for j, (a, b) in enumerate(instance.arcs):
                if a == v:
                    coeffs[j] += 1.0
                if b == v:
                    coeffs[j] -= 1.0
            if v == instance.source:
                rhs = 1.0
            elif v == instance.sink:
                rhs = -1.0
            else:
                rhs = 0.0
            if np.any(coeffs != 0.0) or rhs != 0.0:
                rows.append(LinearRow(coeffs, milp.EQUAL, rhs))
        return FeasibleSet(n, tuple(rows), tag="path")
    raise InputError(f"unknown instance type {type(instance).__name__}")


def solve_det(instance: Instance, costs) -> tuple[np.ndarray, float]:
    """Minimize a fixed cost vector over the instance's solutions."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (instance.n_items,):
        raise InputError("cost vector length does not match the instance")
    if isinstance(instance, RepSelectionInstance):
        x = np.zeros(instance.n_items)
        for group in instance.groups:
            members = list(group)
            x[members[int(np.argmin(costs[members]))]] = 1.0
        return x, float(costs @ x)
    if isinstance(instance, DagShortestPathInstance):
        return _shortest_path(instance, costs)
    report = milp.solve_mixed(encode(instance).deterministic_model(costs))
    if report.status != milp.OPTIMAL:
        raise milp.SolverError(f"knapsack solve ended {report.status}")
    x = np.round(report.solution[: instance.n_items])
    return x, float(costs @ x)


def _shortest_path(instance, costs):
    value = [math.inf] * instance.n_vertices
    pred_arc = [-1] * instance.n_vertices
    value[instance.source] = 0.0
    out = {}
    for j, (a, b) in enumerate(instance.arcs):
        out.setdefault(a, []).append((j, b))
    for v in instance.topological_order():
        if value[v] == math.inf:
            continue
        for j, w in out.get(v, ()):
            cand = value[v] + costs[j]
            if cand < value[w]:
                value[w] = cand
                pred_arc[w] = j
    x = np.zeros(instance.n_items)
    v = instance.sink
    while v != instance.source:
        j = pred_arc[v]
        x[j] = 1.0
        v = instance.arcs[j][0]
    return x, float(value[instance.sink])


def reduce_minmax_rs_to_cvar_rs(
    rs: RepSelectionInstance, scenarios, alpha: float
) -> tuple:
    """Rebuild a min-max selection instance as a risk minimization.

    Appends one forced item, pads the scenarios with zero cost on it, and
    adds repeated spike realizations that charge the forced item a large
    constant.  At the given risk level the risk of any solution is an affine
    image of its worst scenario cost; the returned value_map applies that
    image.  Returns (instance, distribution, spike_cost, tail_count,
    n_samples, value_map).
    """
    scenarios = np.asarray(scenarios, dtype=float)
    if scenarios.ndim != 2 or scenarios.shape[1] != rs.n_items:
        raise InputError("scenarios must be a K x n array matching the instance")
    if scenarios.shape[0] < 1:
        raise InputError("at least one scenario is required")
    if np.any(scenarios < 0):
        raise InputError("scenario costs must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise InputError("the reduction needs a risk level strictly inside (0, 1)")
    n = rs.n_items
    n_scen = scenarios.shape[0]
    tail_count = math.ceil(n_scen * alpha / (1.0 - alpha) - 1e-9)
    n_samples = n_scen + tail_count - 1
    if not (tail_count - 1) / n_samples < alpha <= tail_count / n_samples + 1e-12:
        raise milp.SolverError("risk level fell outside its derived bracket")
    spike = float(np.abs(scenarios).sum())
    wide = RepSelectionInstance(rs.groups + ((n,),))
    padded = np.hstack([scenarios, np.zeros((n_scen, 1))])
    spike_row = np.zeros((1, n + 1))
    spike_row[0, n] = spike
    rows = np.vstack([padded] + [spike_row] * (tail_count - 1))
    dist = EmpiricalDistribution(rows)

    def value_map(v: float) -> float:
        lead = (tail_count - 1) * spike / (alpha * n_samples)
        return lead + (1.0 - (tail_count - 1) / (alpha * n_samples)) * v

    return wide, dist, spike, tail_count, n_samples, value_map


def rs_to_shortest_path(rs: RepSelectionInstance) -> DagShortestPathInstance:
    """Layered graph whose source-sink paths are the selections.

    Layer boundaries are vertices 0..group count; item j becomes the arc at
    position j crossing its group's layer, so arc costs and item costs share
    indices.
    """
    layer_of = {}
    for g, group in enumerate(rs.groups):
        for j in group:
            layer_of[j] = g
    arcs = tuple(
        (layer_of[j], layer_of[j] + 1) for j in range(rs.n_items)
    )
    return DagShortestPathInstance(
        n_vertices=len(rs.groups) + 1,
        arcs=arcs,
        source=0,
        sink=len(rs.groups),
    )


def instance_to_doc(instance: Instance) -> dict:
    if isinstance(instance, KnapsackInstance):
        return {
            "type": "knapsack",
            "weights": instance.weights.tolist(),
            "capacity": instance.capacity,
        }
    if isinstance(instance, RepSelectionInstance):
        return {"type": "selection", "groups": [list(g) for g in instance.groups]}
    if isinstance(instance, DagShortestPathInstance):
        return {
            "type": "path",
            "n_vertices": instance.n_vertices,
            "arcs": [list(a) for a in instance.arcs],
            "source": instance.source,
            "sink": instance.sink,
        }
    raise InputError(f"unknown instance type {type(instance).__name__}")


def instance_from_doc(doc: dict) -> Instance:
    kind = doc.get("type")
    if kind == "knapsack":
        return KnapsackInstance(np.asarray(doc["weights"], dtype=float),
                                float(doc["capacity"]))
    if kind == "selection":
        return RepSelectionInstance(tuple(tuple(g) for g in doc["groups"]))
    if kind == "path":
        return DagShortestPathInstance(
            n_vertices=int(doc["n_vertices"]),
            arcs=tuple((int(a), int(b)) for a, b in doc["arcs"]),
            source=int(doc["source"]),
            sink=int(doc["sink"]),
        )
    raise InputError(f"unknown instance document type {kind!r}")
