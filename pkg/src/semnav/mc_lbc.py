"""Fidelity allocation from Monte-Carlo local betweenness centrality (LBC).

Self-avoiding random walks from source to target pick each next vertex with
probability proportional to ``1 / (w(u, v) + iota)``. Every completed walk is
scored by its sensitivity ``xi`` against the current best path; walks with
``xi >= h`` add one to the LBC count of each vertex they visit. Region scores
are summed counts, and a sigmoid turns them into per-region sparsification
ratios. An offline full-map pass is reused across epochs and refreshed by
sampling only inside a window around the current path and the changed cells.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .map_model import GridMap
from .planner import Path, dijkstra
from .robustness import sensitivity_xi
from .trav_graph import TravGraph, VarianceField, validate_path

log = logging.getLogger(__name__)

LBC_MAGIC = "SEMNAV-LBC"
LBC_VERSION = 1

ONLINE_STREAM = 0
OFFLINE_STREAM = 1


@dataclass(frozen=True)
class AllocParams:
    n_samples: int = 2000
    h: float = 0.05
    iota: float = 1e-6
    varrho: Optional[float] = None  # None: 4 / reference score
    r_c: int = 3
    r: int = 2
    psi_h_scale: Optional[float] = None  # None: 1 / n_regions
    delta_min: float = 0.05
    delta_max: float = 0.95
    include_best: bool = True
    batch_size: int = 1024
    max_attempts: Optional[int] = None  # None: 10 * n_samples
    max_steps: Optional[int] = None  # None: number of sampleable vertices
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.iota <= 0:
            raise ValueError("iota must be positive")
        if self.varrho is not None and self.varrho <= 0:
            raise ValueError("varrho must be positive")
        if self.r_c < 0 or self.r < 0:
            raise ValueError("radii must be non-negative")
        if not 0 <= self.delta_min <= self.delta_max <= 1:
            raise ValueError("need 0 <= delta_min <= delta_max <= 1")
        if self.batch_size < 1 or self.workers < 1:
            raise ValueError("batch_size and workers must be >= 1")

    @classmethod
    def unbiased(cls, **kw) -> "AllocParams":
        """No best-path inclusion and an unscaled sigmoid reference."""
        return cls(include_best=False, psi_h_scale=1.0, **kw)


def transition_probs(
    graph: TravGraph,
    u: int,
    visited,
    iota: float = 1e-6,
    allowed: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Next-step distribution over unvisited neighbors of ``u``.

    Returns ``(neighbors, probabilities)``; both are empty at a dead end.
    """
    nbr = graph.neighbors[u]
    nbr = nbr[nbr >= 0]
    if allowed is not None:
        nbr = nbr[allowed[nbr]]
    seen = set(int(v) for v in visited)
    nbr = np.array([v for v in nbr if int(v) not in seen], dtype=np.int64)
    if nbr.size == 0:
        return nbr, np.empty(0)
    inv = 1.0 / (graph.cost[u] + graph.cost[nbr] + iota)
    return nbr, inv / inv.sum()


def _walk_batch(
    graph: TravGraph,
    source: int,
    target: int,
    iota: float,
    rng: np.random.Generator,
    n_walkers: int,
    max_steps: int,
    allowed: Optional[np.ndarray] = None,
) -> list[np.ndarray]:
    """Run ``n_walkers`` walks in lockstep; return the successful ones in walker order."""
    n = graph.n_vertices
    if source == target:
        return [np.array([source], dtype=np.int64) for _ in range(n_walkers)]
    nbr = graph.neighbors
    safe = np.where(nbr < 0, 0, nbr)
    ok = nbr >= 0
    if allowed is not None:
        ok &= allowed[safe]
    inv = np.where(ok, 1.0 / (graph.cost[:, None] + graph.cost[safe] + iota), 0.0)

    visited = np.zeros((n_walkers, n), dtype=bool)
    visited[:, source] = True
    trail = np.full((n_walkers, max_steps + 1), -1, dtype=np.int64)
    trail[:, 0] = source
    length = np.ones(n_walkers, dtype=np.int64)
    success = np.zeros(n_walkers, dtype=bool)
    alive = np.arange(n_walkers)
    pos = np.full(n_walkers, source, dtype=np.int64)

    for _ in range(max_steps):
        if alive.size == 0:
            break
        p = pos[alive]
        cand = safe[p]
        wts = inv[p] * ~visited[alive[:, None], cand]
        cum = np.cumsum(wts, axis=1)
        tot = cum[:, -1]
        live = tot > 0
        if not live.all():
            alive, p, cand, wts, cum, tot = (
                alive[live], p[live], cand[live], wts[live], cum[live], tot[live]
            )
            if alive.size == 0:
                break
        r = rng.random(alive.size) * tot
        choice = (cum <= r[:, None]).sum(axis=1)
        # guard against r rounding up to tot
        last = wts.shape[1] - 1 - np.argmax(wts[:, ::-1] > 0, axis=1)
        choice = np.minimum(choice, last)
        nxt = cand[np.arange(alive.size), choice]
        visited[alive, nxt] = True
        pos[alive] = nxt
        trail[alive, length[alive]] = nxt
        length[alive] += 1
        reached = nxt == target
        success[alive[reached]] = True
        alive = alive[~reached]

    return [trail[i, : length[i]].copy() for i in np.flatnonzero(success)]


def sample_path(
    graph: TravGraph,
    source: int,
    target: int,
    iota: float,
    seed: int,
    max_steps: int,
    allowed: Optional[np.ndarray] = None,
) -> Optional[Path]:
    """One weighted self-avoiding walk; ``None`` on a dead end or step cap."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = np.random.default_rng(seed)
    got = _walk_batch(graph, source, target, iota, rng, 1, max_steps, allowed)
    if not got:
        return None
    return Path.from_vertices(graph, got[0])


@dataclass
class BatchResult:
    index: int
    counts: np.ndarray  # per vertex
    psi_h: int
    n_used: int
    n_attempts: int
    n_qualifying: int
    best_counted: bool


@dataclass
class LbcIncrement:
    """Counts contributed by one sampling pass, laid out on the grid."""

    counts: np.ndarray  # (H, W) int64
    psi_h: int
    n_success: int
    n_attempts: int
    n_batches: int
    n_qualifying: int
    n_best_batches: int

    @property
    def failure_rate(self) -> float:
        return 1.0 - self.n_success / self.n_attempts if self.n_attempts else 0.0

    @classmethod
    def zeros(cls, shape) -> "LbcIncrement":
        return cls(np.zeros(shape, dtype=np.int64), 0, 0, 0, 0, 0, 0)


def _score_batch(
    graph: TravGraph,
    paths: Sequence[np.ndarray],
    best: Path,
    best_var: float,
    var: np.ndarray,
    h: float,
) -> tuple[np.ndarray, int, int]:
    counts = np.zeros(graph.n_vertices, dtype=np.int64)
    psi_h = 0
    n_q = 0
    best_arr = np.asarray(best.vertices)
    for p in paths:
        if p.size == best_arr.size and np.array_equal(p, best_arr):
            continue
        dw = max(float(graph.cost[p].sum()) - best.total_weight, 0.0)
        xi = sensitivity_xi(dw, best_var, float(var[p].sum()))
        if xi >= h:
            counts[p] += 1
            psi_h += p.size
            n_q += 1
    return counts, psi_h, n_q


def _run_batch(args) -> tuple[int, list[np.ndarray], int]:
    graph, source, target, iota, seed, stream, b, size, max_steps, allowed = args
    rng = np.random.default_rng([seed, stream, b])
    return b, _walk_batch(graph, source, target, iota, rng, size, max_steps, allowed), size


def sample_batches(
    graph: TravGraph,
    source: int,
    target: int,
    n_samples: int,
    iota: float,
    seed: int,
    *,
    stream: int = ONLINE_STREAM,
    allowed: Optional[np.ndarray] = None,
    batch_size: int = 1024,
    max_attempts: Optional[int] = None,
    max_steps: Optional[int] = None,
    workers: int = 1,
) -> list[tuple[int, list[np.ndarray], int]]:
    """Successful walks grouped by batch, truncated to ``n_samples`` in total.

    Batch ``b`` draws from ``default_rng([seed, stream, b])``. Batches are
    consumed in index order whatever ``workers`` is, so results do not depend
    on the worker count.
    """
    if max_attempts is None:
        max_attempts = 10 * n_samples
    if max_steps is None:
        max_steps = int(allowed.sum()) if allowed is not None else graph.n_vertices
    out = []
    need = n_samples
    attempts = 0
    b = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        while need > 0 and attempts < max_attempts:
            jobs = []
            for _ in range(workers):
                size = min(batch_size, max_attempts - attempts - sum(j[7] for j in jobs))
                if size <= 0:
                    break
                jobs.append((graph, source, target, iota, seed, stream, b, size, max_steps, allowed))
                b += 1
            if not jobs:
                break
            results = pool.map(_run_batch, jobs) if pool else map(_run_batch, jobs)
            for idx, paths, size in results:
                if need <= 0:
                    break
                attempts += size
                used = paths[:need]
                need -= len(used)
                out.append((idx, used, size))
    finally:
        if pool:
            pool.shutdown()
    return out


def lbc_batches(
    graph: TravGraph,
    source: int,
    target: int,
    n_samples: int,
    h: float,
    iota: float,
    seed: int,
    field: VarianceField,
    window: Optional["UpdateWindow"] = None,
    *,
    include_best: bool = True,
    best: Optional[Path] = None,
    stream: int = ONLINE_STREAM,
    batch_size: int = 1024,
    max_attempts: Optional[int] = None,
    max_steps: Optional[int] = None,
    workers: int = 1,
    check_paths: bool = False,
) -> list[BatchResult]:
    """Per-batch LBC increments; :func:`merge_batches` sums them."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    allowed = None
    if window is not None:
        allowed = window.vertex_mask
        if not (allowed[source] and allowed[target]):
            raise ValueError("source and target must lie inside the update window")
    if best is None:
        best = dijkstra(graph, source, target)
    var = field.on_vertices(graph)
    best_idx = list(best.vertices)
    best_var = float(var[best_idx].sum())

    batches = sample_batches(
        graph, source, target, n_samples, iota, seed,
        stream=stream, allowed=allowed, batch_size=batch_size,
        max_attempts=max_attempts, max_steps=max_steps, workers=workers,
    )
    out = []
    for idx, paths, size in batches:
        if check_paths:
            for p in paths:
                validate_path(graph, p.tolist())
                if allowed is not None and not allowed[p].all():
                    raise AssertionError("walk left the update window")
        counts, psi_h, n_q = _score_batch(graph, paths, best, best_var, var, h)
        counted = include_best and bool(paths)
        if counted:
            counts[best_idx] += 1
            psi_h += len(best_idx)
        out.append(BatchResult(idx, counts, psi_h, len(paths), size, n_q, counted))
    return out


def merge_batches(graph: TravGraph, batches: Sequence[BatchResult]) -> LbcIncrement:
    total = np.zeros(graph.n_vertices, dtype=np.int64)
    inc = LbcIncrement.zeros(graph.shape)
    for b in batches:
        total += b.counts
        inc.psi_h += b.psi_h
        inc.n_qualifying += b.n_qualifying
        inc.n_success += b.n_used
        inc.n_attempts += b.n_attempts
        inc.n_batches += 1
        inc.n_best_batches += int(b.best_counted)
    inc.counts = _to_grid(graph, total)
    return inc


def compute_lbc(
    graph: TravGraph,
    source: int,
    target: int,
    n_samples: int,
    h: float,
    iota: float,
    seed: int,
    field: VarianceField,
    window: Optional["UpdateWindow"] = None,
    **kw,
) -> LbcIncrement:
    """One LBC sampling pass, optionally restricted to ``window``.

    ``n_samples`` counts completed walks; dead ends are discarded and show up
    in ``failure_rate``. With ``include_best`` the best path's vertices are
    counted once per batch that contributed a walk: the best path enters every
    factor of the accuracy product yet scores ``xi = 0`` against itself.
    Keyword options are those of :func:`lbc_batches`.
    """
    batches = lbc_batches(graph, source, target, n_samples, h, iota, seed, field, window, **kw)
    inc = merge_batches(graph, batches)
    if inc.n_success < n_samples:
        log.info(
            "LBC pass stopped at %d/%d walks after %d attempts",
            inc.n_success, n_samples, inc.n_attempts,
        )
    return inc


def _to_grid(graph: TravGraph, per_vertex: np.ndarray) -> np.ndarray:
    out = np.zeros(graph.shape, dtype=np.int64)
    out[graph.cells[:, 0], graph.cells[:, 1]] = per_vertex
    return out


def region_scores(psi: np.ndarray, grid: GridMap) -> np.ndarray:
    """Sum of per-cell LBC counts inside each region."""
    psi = np.asarray(psi)
    if psi.shape != grid.shape:
        raise ValueError(f"LBC grid {psi.shape} does not match map {grid.shape}")
    return np.bincount(grid.region_of.ravel(), weights=psi.ravel(), minlength=grid.n_regions)


def delta_allocation(
    psi_k,
    psi_h: float,
    varrho: float,
    delta_min: float = 0.05,
    delta_max: float = 0.95,
):
    """``1 / (1 + exp(varrho * (psi_h - psi_k)))`` clamped to ``[delta_min, delta_max]``."""
    if varrho <= 0:
        raise ValueError("varrho must be positive")
    raw = expit(varrho * (np.asarray(psi_k, dtype=np.float64) - psi_h))
    out = np.clip(raw, delta_min, delta_max)
    return float(out) if out.ndim == 0 else out


@dataclass
class UpdateWindow:
    corridor: np.ndarray  # (H, W) bool
    frontier: np.ndarray  # (H, W) bool
    window: np.ndarray  # (H, W) bool
    r_c: int
    r: int
    vertex_mask: np.ndarray = field(repr=False)  # per vertex of the graph

    @property
    def size(self) -> int:
        return int(self.vertex_mask.sum())

    @classmethod
    def full(cls, graph: TravGraph) -> "UpdateWindow":
        cells = graph.vertex_of >= 0
        empty = np.zeros(graph.shape, dtype=bool)
        return cls(cells.copy(), empty, cells.copy(), 0, 0, np.ones(graph.n_vertices, dtype=bool))


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    square = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=square)


def compute_window(
    graph_t: TravGraph,
    graph_prev: TravGraph,
    current_best: Path,
    r_c: int,
    r: int,
) -> UpdateWindow:
    """Corridor around the path plus changed cells, dilated by ``r`` (Chebyshev)."""
    if not graph_t.same_topology(graph_prev):
        raise ValueError("graphs at consecutive epochs must share their topology")
    if r_c < 0 or r < 0:
        raise ValueError("radii must be non-negative")
    vertex_cells = graph_t.vertex_of >= 0
    on_path = np.zeros(graph_t.shape, dtype=bool)
    pc = current_best.cells(graph_t)
    on_path[pc[:, 0], pc[:, 1]] = True
    corridor = _dilate(on_path, r_c) & vertex_cells
    changed = graph_t.cost != graph_prev.cost
    frontier = np.zeros(graph_t.shape, dtype=bool)
    fc = graph_t.cells[changed]
    frontier[fc[:, 0], fc[:, 1]] = True
    window = _dilate(corridor | frontier, r) & vertex_cells
    vmask = window[graph_t.cells[:, 0], graph_t.cells[:, 1]]
    return UpdateWindow(corridor, frontier, window, r_c, r, vmask)


@dataclass
class LbcState:
    psi_off: np.ndarray
    psi_on: np.ndarray
    psi_h_off: int
    psi_h_on: int
    h: float
    region_scores: np.ndarray
    psi_ref: float
    varrho: float
    delta: np.ndarray

    @property
    def psi_working(self) -> np.ndarray:
        return self.psi_off + self.psi_on

    @property
    def psi_h(self) -> int:
        return self.psi_h_off + self.psi_h_on


@dataclass
class Allocation:
    delta: np.ndarray
    state: LbcState
    window: UpdateWindow
    best: Path
    online: LbcIncrement


def lbc_offline(
    graph_prev: TravGraph,
    source: int,
    target: int,
    params: AllocParams,
    field: VarianceField,
) -> LbcIncrement:
    """Full-map pass on the prior snapshot, stored and reused across epochs."""
    return compute_lbc(
        graph_prev, source, target, params.n_samples, params.h, params.iota,
        params.seed, field, None,
        include_best=params.include_best, stream=OFFLINE_STREAM,
        batch_size=params.batch_size, max_attempts=params.max_attempts,
        max_steps=params.max_steps, workers=params.workers,
    )


def finish_allocation(
    grid: GridMap,
    psi_off: np.ndarray,
    psi_h_off: int,
    online: LbcIncrement,
    params: AllocParams,
) -> LbcState:
    """Working counts, region scores, and per-region ratios."""
    psi_on = online.counts
    working = psi_off + psi_on
    scores = region_scores(working, grid)
    psi_h = psi_h_off + online.psi_h
    scale = params.psi_h_scale if params.psi_h_scale is not None else 1.0 / grid.n_regions
    ref = scale * psi_h
    if params.varrho is not None:
        varrho = params.varrho
    else:
        varrho = 4.0 / ref if ref > 0 else 1.0
    delta = np.asarray(
        delta_allocation(scores, ref, varrho, params.delta_min, params.delta_max),
        dtype=np.float64,
    ).reshape(grid.n_regions)
    return LbcState(
        psi_off, psi_on, psi_h_off, online.psi_h, params.h, scores, ref, varrho, delta
    )


def allocate(
    graph_t: TravGraph,
    graph_prev: TravGraph,
    grid: GridMap,
    source: int,
    target: int,
    params: AllocParams,
    field: VarianceField,
    offline: Optional[LbcIncrement] = None,
    *,
    window: Optional[UpdateWindow] = None,
) -> Allocation:
    """One decision epoch: replan, window, sample, merge with offline counts, map to ratios.

    ``field`` supplies the cost variances used to score walks (the field in
    force before this allocation takes effect). Pass ``window`` to override
    the corridor/frontier window.
    """
    if graph_t.shape != grid.shape:
        raise ValueError("graph and map shapes differ")
    best = dijkstra(graph_t, source, target)
    if window is None:
        window = compute_window(graph_t, graph_prev, best, params.r_c, params.r)
    online = compute_lbc(
        graph_t, source, target, params.n_samples, params.h, params.iota,
        params.seed, field, window,
        include_best=params.include_best, best=best, stream=ONLINE_STREAM,
        batch_size=params.batch_size, max_attempts=params.max_attempts,
        max_steps=params.max_steps, workers=params.workers,
    )
    if offline is None:
        offline = LbcIncrement.zeros(grid.shape)
    state = finish_allocation(grid, offline.counts, offline.psi_h, online, params)
    return Allocation(state.delta, state, window, best, online)


def full_recompute(
    graph: TravGraph,
    grid: GridMap,
    source: int,
    target: int,
    params: AllocParams,
    field: VarianceField,
) -> LbcState:
    """From-scratch full-map pass and allocation (no offline counts, no window)."""
    online = compute_lbc(
        graph, source, target, params.n_samples, params.h, params.iota,
        params.seed, field, None,
        include_best=params.include_best, stream=ONLINE_STREAM,
        batch_size=params.batch_size, max_attempts=params.max_attempts,
        max_steps=params.max_steps, workers=params.workers,
    )
    return finish_allocation(grid, np.zeros(grid.shape, dtype=np.int64), 0, online, params)


def save_lbc(inc: LbcIncrement, path, *, h: float) -> None:
    """Persist offline counts: text header then per-cell counts, row-major."""
    hgt, wid = inc.counts.shape
    lines = [
        f"{LBC_MAGIC} {LBC_VERSION}",
        f"height {hgt}",
        f"width {wid}",
        f"h {h!r}",
        f"psi_h {inc.psi_h}",
        f"stats {inc.n_success} {inc.n_attempts} {inc.n_batches} "
        f"{inc.n_qualifying} {inc.n_best_batches}",
    ]
    lines += [" ".join(str(int(x)) for x in row) for row in inc.counts]
    FilePath(path).write_text("\n".join(lines) + "\n")


def load_lbc(path) -> tuple[LbcIncrement, float]:
    lines = [ln for ln in FilePath(path).read_text().splitlines() if ln.strip()]
    try:
        magic, ver = lines[0].split()
        if magic != LBC_MAGIC or int(ver) != LBC_VERSION:
            raise ValueError(f"not a version-{LBC_VERSION} LBC file")
        hgt = int(lines[1].split()[1])
        wid = int(lines[2].split()[1])
        h = float(lines[3].split()[1])
        psi_h = int(lines[4].split()[1])
        stats = [int(x) for x in lines[5].split()[1:]]
        counts = np.array([[int(x) for x in ln.split()] for ln in lines[6:]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed LBC file ({exc})") from None
    if counts.shape != (hgt, wid):
        raise ValueError(f"{path}: expected {hgt}x{wid} counts, got {counts.shape}")
    return LbcIncrement(counts, psi_h, *stats), h


def write_region_csv(state: LbcState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "score", "delta"])
        for k, (s, d) in enumerate(zip(state.region_scores.tolist(), state.delta.tolist())):
            writer.writerow([k, repr(float(s)), repr(float(d))])
