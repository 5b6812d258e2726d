"""Survival probability of the planned path under Gaussian cost noise.

Weight gaps are taken as ``W(candidate) - W(best)``, which is non-negative for
the optimum, so every pairwise survival probability is at least one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .planner import Path, UnreachableError, dijkstra, matches_path, shortest_path_batch
from .trav_graph import TravGraph, VarianceField

XI_MAX = 1.0 / math.sqrt(2.0 * math.pi * math.e)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(z):
    return np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def _check_nonneg(**kw) -> None:
    for name, x in kw.items():
        if x < 0 or math.isnan(x):
            raise ValueError(f"{name} must be non-negative, got {x}")


def standardized_gap(delta_w: float, var_star: float, var_j: float) -> float:
    _check_nonneg(delta_w=delta_w, var_star=var_star, var_j=var_j)
    total = var_star + var_j
    if total > 0:
        return delta_w / math.sqrt(total)
    return math.inf if delta_w > 0 else 0.0


def p_correct_pair(delta_w: float, var_star: float, var_j: float) -> float:
    """P(best path still beats candidate j) = Phi(gap / sd)."""
    z = standardized_gap(delta_w, var_star, var_j)
    return 1.0 if math.isinf(z) else float(ndtr(z))


def sensitivity_xi(delta_w: float, var_star: float, var_j: float) -> float:
    """Sensitivity ``|z| * phi(z)``; peaks at ``1/sqrt(2*pi*e)`` for ``|z| = 1``."""
    z = standardized_gap(delta_w, var_star, var_j)
    return 0.0 if math.isinf(z) else abs(z) * float(_pdf(z))


@dataclass(frozen=True)
class PathStats:
    delta_w: float
    var_star: float
    var_j: float
    z: float
    xi: float

    @classmethod
    def from_gap(cls, delta_w: float, var_star: float, var_j: float) -> "PathStats":
        z = standardized_gap(delta_w, var_star, var_j)
        xi = sensitivity_xi(delta_w, var_star, var_j)
        return cls(float(delta_w), float(var_star), float(var_j), z, xi)

    @property
    def p_correct(self) -> float:
        return p_correct_pair(self.delta_w, self.var_star, self.var_j)


def q_accuracy(stats: Iterable[PathStats]) -> float:
    """Product of pairwise survival probabilities (independence approximation)."""
    q = 1.0
    for s in stats:
        q *= s.p_correct
    return q


def q_term_derivative(stats: Sequence[PathStats], j: int) -> float:
    """d Phi(z_j) / d var_j for the j-th factor alone."""
    s = stats[j]
    total = s.var_star + s.var_j
    if total <= 0 or math.isinf(s.z):
        return 0.0
    return -0.5 * s.z / total * float(_pdf(s.z))


def q_full_derivative(stats: Sequence[PathStats], j: int) -> float:
    """d Q / d var_j through the j-th factor, other factors held fixed."""
    rest = 1.0
    for i, s in enumerate(stats):
        if i != j:
            rest *= s.p_correct
    return rest * q_term_derivative(stats, j)


def prop1_optimal_variance(delta_w: float, var_star: float) -> Optional[float]:
    """Candidate variance that puts ``|z|`` at 1, or ``None`` if none is positive."""
    _check_nonneg(delta_w=delta_w, var_star=var_star)
    v = delta_w**2 - var_star
    return v if v > 0 else None


def fd_sensitivity_argmax(
    delta_w: float,
    var_star: float,
    *,
    h: float = 1e-4,
    rel_step: float = 1e-3,
    lo: float = 1e-6,
    hi: Optional[float] = None,
    normalized: bool = False,
) -> float:
    """Grid argmax over ``var_j`` of the forward-difference sensitivity.

    The raw sensitivity is ``|f(v + h) - f(v)| / h`` with
    ``f(v) = Phi(delta_w / sqrt(var_star + v))``. With ``normalized=True`` it is
    multiplied by ``2 (var_star + v)``, which recovers ``|z| phi(z)``. The grid
    is geometric with ratio ``1 + rel_step`` on ``[lo, hi]``.
    """
    _check_nonneg(delta_w=delta_w, var_star=var_star)
    if hi is None:
        hi = 10.0 * max(delta_w**2, 1.0)
    n = int(math.ceil(math.log(hi / lo) / math.log1p(rel_step))) + 1
    v = lo * (1.0 + rel_step) ** np.arange(n)

    def f(x):
        return ndtr(delta_w / np.sqrt(var_star + x))

    sens = np.abs(f(v + h) - f(v)) / h
    if normalized:
        sens = 2.0 * (var_star + v) * sens
    return float(v[np.argmax(sens)])


def path_variance(
    field: VarianceField,
    graph: TravGraph,
    path: Path,
    *,
    exact_vs: Optional[Path] = None,
) -> float:
    """Summed cost variance along ``path``.

    By default every vertex counts. With ``exact_vs`` only vertices not shared
    with that other path count, since shared noise cancels in the gap.
    """
    return _path_var(field.on_vertices(graph), path, exact_vs)


def _path_var(var: np.ndarray, path: Path, exact_vs: Optional[Path]) -> float:
    vs = path.vertices
    if exact_vs is not None:
        shared = set(exact_vs.vertices)
        vs = [v for v in vs if v not in shared]
    return float(sum(var[v] for v in vs))


def path_stats(
    graph: TravGraph,
    field: VarianceField,
    best: Path,
    candidate: Path,
    *,
    exact: bool = False,
) -> PathStats:
    return _path_stats(field.on_vertices(graph), best, candidate, exact)


def _path_stats(var: np.ndarray, best: Path, candidate: Path, exact: bool) -> PathStats:
    dw = max(candidate.total_weight - best.total_weight, 0.0)
    if exact:
        vs = _path_var(var, best, candidate)
        vj = _path_var(var, candidate, best)
    else:
        vs = _path_var(var, best, None)
        vj = _path_var(var, candidate, None)
    return PathStats.from_gap(dw, vs, vj)


def analytic_q(
    graph: TravGraph,
    field: VarianceField,
    best: Path,
    candidates: Iterable[Path],
    *,
    exact: bool = False,
) -> float:
    """Q over ``candidates`` (the best path itself is skipped if present)."""
    var = field.on_vertices(graph)
    stats = [
        _path_stats(var, best, c, exact)
        for c in candidates
        if c.vertices != best.vertices
    ]
    return q_accuracy(stats)


@dataclass(frozen=True)
class MCEstimate:
    accuracy: float
    stderr: float
    ci_low: float
    ci_high: float
    trials: int
    hits: int


def wilson_interval(hits: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be >= 1")
    p = hits / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@lru_cache(maxsize=4)
def _normal_block(first_seed: int, count: int, n: int) -> np.ndarray:
    # row i is the draw of seed first_seed + i; reused across noise scales
    out = np.empty((count, n))
    for i in range(count):
        out[i] = np.random.default_rng(first_seed + i).standard_normal(n)
    out.setflags(write=False)
    return out


def perturbed_costs(graph: TravGraph, var: np.ndarray, seeds: Sequence[int]) -> np.ndarray:
    """Stack of perturbed cost vectors, row i identical to ``apply_perturbation`` with ``seeds[i]``."""
    seeds = list(seeds)
    n = graph.n_vertices
    if seeds and seeds == list(range(seeds[0], seeds[0] + len(seeds))):
        z = _normal_block(int(seeds[0]), len(seeds), n)
    else:
        z = np.array([np.random.default_rng(s).standard_normal(n) for s in seeds]).reshape(-1, n)
    out = graph.cost + z * np.sqrt(var)
    np.maximum(out, graph.cost_floor, out=out)
    return out


def mc_planning_accuracy(
    graph: TravGraph,
    field: VarianceField,
    source: int,
    target: int,
    trials: int,
    seed: int,
    *,
    chunk: int = 4096,
) -> MCEstimate:
    """Fraction of perturbed replans that return exactly the noiseless path.

    Trial ``i`` perturbs costs with seed ``seed + i`` (the same draw that
    :func:`apply_perturbation` would make) and replans.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    best = dijkstra(graph, source, target)
    var = field.on_vertices(graph)
    hits = 0
    for start in range(0, trials, chunk):
        seeds = range(seed + start, seed + min(trials, start + chunk))
        costs = perturbed_costs(graph, var, seeds)
        dist, pred = shortest_path_batch(graph, costs, source)
        if not np.all(np.isfinite(dist[:, target])):
            raise UnreachableError(f"vertex {target} unreachable from {source}")
        hits += int(matches_path(pred, best).sum())
    p = hits / trials
    lo, hi = wilson_interval(hits, trials)
    return MCEstimate(p, math.sqrt(p * (1 - p) / trials), lo, hi, trials, hits)
