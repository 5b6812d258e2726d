"""Shortest paths on a :class:`TravGraph` under the vertex-sum cost.

A path's weight is the sum of its vertex costs. Dijkstra pops ``(dist, id)``
pairs and, among equally short predecessors, keeps the one with the smallest
id, so the returned vertex sequence is fully determined by the costs.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .trav_graph import TravGraph, path_weight


class UnreachableError(RuntimeError):
    """Target cannot be reached from the source."""


class EnumerationGuardError(ValueError):
    """Exhaustive enumeration refused on a graph that is too large."""


@dataclass(frozen=True)
class Path:
    vertices: tuple[int, ...]
    total_weight: float

    def __len__(self) -> int:
        return len(self.vertices)

    @classmethod
    def from_vertices(cls, graph: TravGraph, vertices) -> "Path":
        vs = tuple(int(v) for v in vertices)
        return cls(vs, path_weight(graph, vs))

    def cells(self, graph: TravGraph) -> np.ndarray:
        return graph.cells[list(self.vertices)]


def _trace(pred, source: int, target: int) -> list[int]:
    out = [target]
    while out[-1] != source:
        out.append(int(pred[out[-1]]))
    out.reverse()
    return out


def dijkstra(graph: TravGraph, source: int, target: int) -> Path:
    """Minimum vertex-sum path from ``source`` to ``target``."""
    n = graph.n_vertices
    if not (0 <= source < n and 0 <= target < n):
        raise KeyError("source or target is not a vertex of the graph")
    cost = graph.cost.tolist()
    adj = graph.adjacency
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[source] = cost[source]
    heap = [(dist[source], source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        for v in adj[u]:
            if done[v]:
                continue
            nd = d + cost[v]
            dv = dist[v]
            if nd < dv:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == dv and u < pred[v]:
                pred[v] = u
    if not done[target]:
        raise UnreachableError(f"vertex {target} unreachable from {source}")
    vertices = _trace(pred, source, target)
    # recompute from the source end so the weight matches path_weight exactly
    return Path(tuple(vertices), path_weight(graph, vertices, check=False))


def shortest_path_batch(
    graph: TravGraph, costs: np.ndarray, source: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vertex-sum distances and predecessors for many cost vectors at once.

    ``costs`` has shape ``(trials, n_vertices)``. Bellman-Ford style sweeps run
    to the fixed point, which equals the Dijkstra distances bit-for-bit since
    float addition of a positive cost is monotone. Predecessors follow the same
    smallest-id tie rule as :func:`dijkstra`. Unreached vertices get ``inf``
    distance and predecessor ``-1``.
    """
    costs = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    trials, n = costs.shape
    if n != graph.n_vertices:
        raise ValueError("cost matrix does not match the vertex set")
    nbr = np.where(graph.neighbors < 0, n, graph.neighbors)
    dist = np.full((trials, n + 1), np.inf)
    dist[:, source] = costs[:, source]
    for _ in range(n):
        best = dist[:, nbr].min(axis=2) + costs
        best[:, source] = costs[:, source]
        if np.array_equal(best, dist[:, :n]):
            break
        dist[:, :n] = best
    through = dist[:, nbr] + costs[:, :, None]
    tight = (through == dist[:, :n, None]) & (graph.neighbors >= 0)[None]
    first = tight.argmax(axis=2)
    pred = np.where(tight.any(axis=2), graph.neighbors[np.arange(n)[None, :], first], -1)
    pred[:, source] = -1
    return dist[:, :n], pred


def matches_path(pred: np.ndarray, path: Path) -> np.ndarray:
    """Per-trial flag: does the predecessor tree reproduce ``path`` exactly?"""
    vs = path.vertices
    ok = np.ones(pred.shape[0], dtype=bool)
    for a, b in zip(vs, vs[1:]):
        ok &= pred[:, b] == a
    return ok


def enumerate_simple_paths(
    graph: TravGraph,
    source: int,
    target: int,
    max_vertices: Optional[int] = None,
    *,
    max_graph_vertices: int = 20,
    override: bool = False,
) -> list[Path]:
    """Every simple source-target path with at most ``max_vertices`` vertices.

    Sorted by weight, then lexicographically by vertex sequence. Refuses
    graphs above ``max_graph_vertices`` unless ``override`` is set; callers
    that override should bound ``max_vertices``.
    """
    n = graph.n_vertices
    if n > max_graph_vertices and not override:
        raise EnumerationGuardError(
            f"graph has {n} vertices (> {max_graph_vertices}); pass override=True"
        )
    limit = n if max_vertices is None else min(max_vertices, n)
    cost = graph.cost.tolist()
    adj = graph.adjacency
    found: list[Path] = []
    if limit < 1:
        return found

    stack = [source]
    on_path = [False] * n
    on_path[source] = True

    def dfs(u: int, w: float) -> None:
        if u == target:
            found.append(Path(tuple(stack), w))
            return
        if len(stack) >= limit:
            return
        for v in adj[u]:
            if on_path[v]:
                continue
            on_path[v] = True
            stack.append(v)
            dfs(v, w + cost[v])
            stack.pop()
            on_path[v] = False

    dfs(source, 0.0 + cost[source])
    found.sort(key=lambda p: (p.total_weight, p.vertices))
    return found


def write_path_csv(graph: TravGraph, path: Path, fname) -> None:
    with open(fname, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "vertex", "row", "col"])
        for i, (v, (r, c)) in enumerate(zip(path.vertices, path.cells(graph).tolist())):
            writer.writerow([i, v, r, c])
