"""8-connected traversability graph, cost perturbation, and path weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .map_model import TAU_MIN, GridMap

# Row-major neighbor order, so neighbor ids come out ascending.
OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    dtype=np.int64,
)


class PathError(ValueError):
    """Raised for paths that are not simple, adjacency-consistent walks."""


@dataclass(frozen=True, eq=False)
class TravGraph:
    """Grid graph over traversable cells.

    Vertex ids number the traversable cells in row-major order. ``cost[u]`` is
    ``(kappa / tau_u) ** 2`` and an edge ``(u, v)`` weighs ``cost[u] + cost[v]``.
    ``neighbors`` is an ``(n, 8)`` table padded with ``-1``.
    """

    shape: tuple[int, int]
    kappa: float
    cells: np.ndarray
    vertex_of: np.ndarray
    cost: np.ndarray
    neighbors: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.cost)

    @property
    def cost_floor(self) -> float:
        """Cost of a perfectly traversable cell (tau = 1)."""
        return self.kappa**2

    @cached_property
    def adjacency(self) -> list[list[int]]:
        return [[int(v) for v in row if v >= 0] for row in self.neighbors]

    @cached_property
    def degree(self) -> np.ndarray:
        return (self.neighbors >= 0).sum(axis=1)

    def vertex(self, cell: Sequence[int]) -> int:
        """Vertex id of a ``(row, col)`` cell; raises if the cell is blocked."""
        r, c = int(cell[0]), int(cell[1])
        h, w = self.shape
        if not (0 <= r < h and 0 <= c < w):
            raise KeyError(f"cell {(r, c)} outside a {h}x{w} map")
        v = int(self.vertex_of[r, c])
        if v < 0:
            raise KeyError(f"cell {(r, c)} is not traversable")
        return v

    def is_adjacent(self, u: int, v: int) -> bool:
        return u != v and bool(np.any(self.neighbors[u] == v))

    def edge_weight(self, u: int, v: int) -> float:
        if not self.is_adjacent(u, v):
            raise KeyError(f"no edge between {u} and {v}")
        return float(self.cost[u] + self.cost[v])

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected edge list ``(u, v, weight)`` with ``u < v``."""
        src = np.repeat(np.arange(self.n_vertices), self.neighbors.shape[1])
        dst = self.neighbors.ravel()
        keep = dst > src
        u, v = src[keep], dst[keep]
        return u, v, self.cost[u] + self.cost[v]

    def same_topology(self, other: "TravGraph") -> bool:
        return self.shape == other.shape and np.array_equal(self.vertex_of, other.vertex_of)

    def with_costs(self, cost: np.ndarray) -> "TravGraph":
        """A graph with the same topology and new vertex costs."""
        cost = np.array(cost, dtype=np.float64)
        if cost.shape != self.cost.shape:
            raise ValueError("cost vector does not match the vertex set")
        cost.setflags(write=False)
        return TravGraph(self.shape, self.kappa, self.cells, self.vertex_of, cost, self.neighbors)

    def cell_values(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Scatter a per-vertex array onto the grid."""
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.cells[:, 0], self.cells[:, 1]] = values
        return out


@dataclass(frozen=True)
class VarianceField:
    """Per-cell perturbation variances.

    ``var_cost`` is in cost units and is what the planner-side analysis uses.
    ``var_tau`` (traversability units) is filled in when the field came from
    the channel model. Both are indexed ``[row, col]``; blocked cells may hold
    NaN since the delta-method map is undefined there.
    """

    var_cost: np.ndarray
    var_tau: Optional[np.ndarray] = None

    def __post_init__(self):
        vc = np.array(self.var_cost, dtype=np.float64)
        if vc.ndim != 2:
            raise ValueError("var_cost must be a 2-D per-cell array")
        if np.any(vc[~np.isnan(vc)] < 0):
            raise ValueError("negative variance in field")
        vc.setflags(write=False)
        object.__setattr__(self, "var_cost", vc)
        if self.var_tau is not None:
            vt = np.array(self.var_tau, dtype=np.float64)
            if vt.shape != vc.shape:
                raise ValueError("var_tau and var_cost shapes differ")
            if np.any(vt[~np.isnan(vt)] < 0):
                raise ValueError("negative variance in field")
            vt.setflags(write=False)
            object.__setattr__(self, "var_tau", vt)

    @classmethod
    def constant(cls, shape: tuple[int, int], var_cost: float) -> "VarianceField":
        return cls(np.full(shape, float(var_cost)))

    def scaled(self, s: float) -> "VarianceField":
        vt = None if self.var_tau is None else self.var_tau * s
        return VarianceField(self.var_cost * s, vt)

    def on_vertices(self, graph: TravGraph) -> np.ndarray:
        """Per-vertex cost variances; raises if any vertex is uncovered."""
        if self.var_cost.shape != graph.shape:
            raise ValueError(
                f"field shape {self.var_cost.shape} does not match graph {graph.shape}"
            )
        v = self.var_cost[graph.cells[:, 0], graph.cells[:, 1]]
        if not np.all(np.isfinite(v)):
            raise ValueError("variance field does not cover every vertex")
        return v


def build_graph(grid: GridMap, kappa: float = 1.0) -> TravGraph:
    """Vertices for every traversable cell, edges to the 8 neighbors."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    free = ~grid.nontraversable_mask
    n = int(free.sum())
    if n == 0:
        raise ValueError("map has no traversable cells")
    h, w = grid.shape
    vertex_of = np.full((h, w), -1, dtype=np.int64)
    vertex_of[free] = np.arange(n)
    cells = np.argwhere(free).astype(np.int64)

    rr = cells[:, 0:1] + OFFSETS[None, :, 0]
    cc = cells[:, 1:2] + OFFSETS[None, :, 1]
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    nbr = np.full((n, len(OFFSETS)), -1, dtype=np.int64)
    nbr[inside] = vertex_of[rr[inside], cc[inside]]

    tau = grid.tau[free]
    cost = (kappa / tau) ** 2
    for a in (vertex_of, cells, cost, nbr):
        a.setflags(write=False)
    return TravGraph((h, w), float(kappa), cells, vertex_of, cost, nbr)


def cost_variance_from_tau(tau, var_tau, kappa: float = 1.0, tau_min: float = TAU_MIN):
    """Delta-method cost variance ``(dc/dtau)^2 * var_tau = 4 kappa^4 / tau^6 * var_tau``."""
    tau_arr = np.asarray(tau, dtype=np.float64)
    var_arr = np.asarray(var_tau, dtype=np.float64)
    if np.any(tau_arr < tau_min):
        raise ValueError(f"tau below tau_min={tau_min}: delta method undefined")
    if np.any(var_arr < 0):
        raise ValueError("var_tau must be non-negative")
    out = 4.0 * kappa**4 / tau_arr**6 * var_arr
    return float(out) if out.ndim == 0 else out


def apply_perturbation(graph: TravGraph, field: VarianceField, seed: int) -> TravGraph:
    """Add independent Gaussian cost noise and floor at ``kappa**2``."""
    var = field.on_vertices(graph)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(graph.n_vertices) * np.sqrt(var)
    return graph.with_costs(np.maximum(graph.cost + eps, graph.cost_floor))


def validate_path(graph: TravGraph, vertices: Sequence[int]) -> None:
    if len(vertices) == 0:
        raise PathError("empty path")
    if len(set(vertices)) != len(vertices):
        raise PathError("path repeats a vertex")
    n = graph.n_vertices
    for v in vertices:
        if not 0 <= v < n:
            raise PathError(f"vertex {v} not in graph")
    for a, b in zip(vertices, vertices[1:]):
        if not graph.is_adjacent(a, b):
            raise PathError(f"vertices {a} and {b} are not adjacent")


def path_weight(graph: TravGraph, vertices: Sequence[int], *, check: bool = True) -> float:
    """Vertex-sum weight, accumulated from the source end."""
    if check:
        validate_path(graph, vertices)
    total = 0.0
    cost = graph.cost
    for v in vertices:
        total += float(cost[v])
    return total


def write_edges_csv(graph: TravGraph, path) -> None:
    u, v, w = graph.edges()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "weight"])
        for a, b, x in zip(u.tolist(), v.tolist(), w.tolist()):
            writer.writerow([a, b, repr(x)])


def write_vertices_csv(graph: TravGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "row", "col", "cost"])
        for i, ((r, c), x) in enumerate(zip(graph.cells.tolist(), graph.cost.tolist())):
            writer.writerow([i, r, c, repr(x)])
