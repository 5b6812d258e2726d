"""Ground maps as traversability fields with a UAV region partition."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

TAU_MIN = 0.05
MAGIC = "SEMNAV-GRIDMAP"
FORMAT_VERSION = 1


class MapFormatError(ValueError):
    """Raised when a map file cannot be parsed."""


class MapRangeError(MapFormatError):
    """Raised when a traversability value lies outside [0, 1]."""


def _tile_edges(n: int, k: int) -> np.ndarray:
    # first n % k tiles take the extra cell
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def _region_index(height: int, width: int, rows: int, cols: int) -> np.ndarray:
    r_edges = _tile_edges(height, rows)
    c_edges = _tile_edges(width, cols)
    tile_r = np.searchsorted(r_edges, np.arange(height), side="right") - 1
    tile_c = np.searchsorted(c_edges, np.arange(width), side="right") - 1
    return (tile_r[:, None] * cols + tile_c[None, :]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class GridMap:
    """Per-cell traversability with a rectangular region tiling.

    ``tau`` is indexed ``[row, col]``. Cells with ``tau < tau_min`` are
    non-traversable. Region indices are row-major over a ``rows x cols``
    balanced tiling. Arrays are made read-only on construction.
    """

    tau: np.ndarray
    rows: int = 1
    cols: int = 1
    tau_min: float = TAU_MIN
    region_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tau = np.array(self.tau, dtype=np.float64)
        if tau.ndim != 2 or min(tau.shape) < 1:
            raise ValueError(f"tau must be a non-empty 2-D array, got shape {tau.shape}")
        if not np.all(np.isfinite(tau)) or tau.min() < 0.0 or tau.max() > 1.0:
            raise MapRangeError("traversability values must lie in [0, 1]")
        if not 0.0 < self.tau_min <= 1.0:
            raise ValueError(f"tau_min must lie in (0, 1], got {self.tau_min}")
        h, w = tau.shape
        if self.rows < 1 or self.cols < 1 or self.rows > h or self.cols > w:
            raise ValueError(
                f"cannot tile a {h}x{w} map into {self.rows}x{self.cols} regions"
            )
        tau.setflags(write=False)
        region = _region_index(h, w, self.rows, self.cols)
        region.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "region_of", region)

    @property
    def height(self) -> int:
        return self.tau.shape[0]

    @property
    def width(self) -> int:
        return self.tau.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tau.shape

    @property
    def n_regions(self) -> int:
        return self.rows * self.cols

    @property
    def nontraversable_mask(self) -> np.ndarray:
        return self.tau < self.tau_min

    def with_tau(self, tau: np.ndarray) -> "GridMap":
        """Same tiling and threshold, new traversability values."""
        return GridMap(tau, rows=self.rows, cols=self.cols, tau_min=self.tau_min)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.tau_min == other.tau_min
            and self.tau.shape == other.tau.shape
            and np.array_equal(self.tau, other.tau)
        )

    __hash__ = None


def partition_regions(grid: GridMap, rows: int, cols: int) -> GridMap:
    """Re-tile ``grid`` into ``rows x cols`` balanced rectangular regions."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if rows > grid.height or cols > grid.width:
        raise ValueError(
            f"more tiles than cells: {rows}x{cols} tiles on a {grid.height}x{grid.width} map"
        )
    return GridMap(grid.tau, rows=rows, cols=cols, tau_min=grid.tau_min)


def _box_blur(a: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        a = ndimage.uniform_filter(a, size=3, mode="nearest")
    return a


def generate_map(
    seed: int,
    width: int,
    height: int,
    obstacle_density: float,
    smoothing_passes: int,
    *,
    tau_min: float = TAU_MIN,
) -> GridMap:
    """Synthetic map: clustered obstacles from thresholded smooth noise.

    The lowest ``obstacle_density`` fraction of a blurred noise field becomes
    obstacles (tau = 0); everything else starts at tau = 1. The tau field is
    then box-blurred ``smoothing_passes`` times so free cells next to obstacles
    get harder to cross, while obstacle cells stay at zero.
    """
    if width < 2 or height < 2:
        raise ValueError(f"map must be at least 2x2, got {width}x{height}")
    if not 0.0 <= obstacle_density <= 1.0:
        raise ValueError(f"obstacle_density must lie in [0, 1], got {obstacle_density}")
    if smoothing_passes < 0:
        raise ValueError("smoothing_passes must be >= 0")

    rng = np.random.default_rng(seed)
    blobs = _box_blur(rng.random((height, width)), 3)
    n_obstacles = int(round(obstacle_density * width * height))
    obstacle = np.zeros(width * height, dtype=bool)
    if n_obstacles:
        order = np.argsort(blobs, axis=None, kind="stable")
        obstacle[order[:n_obstacles]] = True
    obstacle = obstacle.reshape(height, width)

    tau = np.where(obstacle, 0.0, 1.0)
    tau = _box_blur(tau, smoothing_passes)
    tau[obstacle] = 0.0
    return GridMap(np.clip(tau, 0.0, 1.0), tau_min=tau_min)


def gap_corridor_map(
    seed: int,
    size: int = 64,
    *,
    gap_width: int = 3,
    wall_thickness: int = 2,
    terrain_floor: float = 0.45,
    terrain_passes: int = 4,
    tau_min: float = TAU_MIN,
) -> tuple[GridMap, tuple[int, int], tuple[int, int]]:
    """Map split by a wall with one narrow gap and one far detour gap.

    Free terrain has smooth traversability in ``[terrain_floor, 1]``. Returns
    ``(map, source_cell, target_cell)`` with source left of the wall and
    target right of it, so every reasonable route threads the main gap.
    """
    if size < 16:
        raise ValueError("gap_corridor_map needs size >= 16")
    rng = np.random.default_rng(seed)
    terrain = _box_blur(rng.random((size, size)), terrain_passes)
    lo, hi = terrain.min(), terrain.max()
    terrain = (terrain - lo) / (hi - lo) if hi > lo else np.ones_like(terrain)
    tau = terrain_floor + (1.0 - terrain_floor) * terrain

    wall_col = int(rng.integers(size * 2 // 5, size * 3 // 5))
    gap_row = int(rng.integers(size // 4, 3 * size // 4 - gap_width))
    # detour gap hugs whichever border is farther from the main gap
    detour_row = 1 if gap_row > size // 2 else size - 1 - gap_width
    wall = np.zeros((size, size), dtype=bool)
    wall[:, wall_col : wall_col + wall_thickness] = True
    wall[gap_row : gap_row + gap_width, wall_col : wall_col + wall_thickness] = False
    wall[detour_row : detour_row + gap_width, wall_col : wall_col + wall_thickness] = False
    tau[wall] = 0.0

    src_row = int(rng.integers(size // 4, 3 * size // 4))
    dst_row = int(rng.integers(size // 4, 3 * size // 4))
    source = (src_row, int(rng.integers(1, size // 6)))
    target = (dst_row, size - 1 - int(rng.integers(1, size // 6)))
    return GridMap(tau, tau_min=tau_min), source, target


def save_map(grid: GridMap, path) -> None:
    """Write ``grid`` in the text format read by :func:`load_map`."""
    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"width {grid.width}",
        f"height {grid.height}",
        f"rows {grid.rows}",
        f"cols {grid.cols}",
        f"tau_min {grid.tau_min!r}",
    ]
    for row in grid.tau:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_map(path) -> GridMap:
    """Parse a map file; raises :class:`MapFormatError` on any defect."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MapFormatError(f"{path}: empty map file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise MapFormatError(f"{path}: missing '{MAGIC}' header")
    if head[1] != str(FORMAT_VERSION):
        raise MapFormatError(f"{path}: unsupported format version {head[1]}")

    keys = ("width", "height", "rows", "cols", "tau_min")
    if len(lines) < 1 + len(keys):
        raise MapFormatError(f"{path}: truncated header")
    header = {}
    for ln, key in zip(lines[1 : 1 + len(keys)], keys):
        parts = ln.split()
        if len(parts) != 2 or parts[0] != key:
            raise MapFormatError(f"{path}: expected '{key} <value>', got {ln!r}")
        header[key] = parts[1]
    try:
        width, height = int(header["width"]), int(header["height"])
        rows, cols = int(header["rows"]), int(header["cols"])
        tau_min = float(header["tau_min"])
    except ValueError as exc:
        raise MapFormatError(f"{path}: bad header value ({exc})") from None

    body = lines[1 + len(keys) :]
    if len(body) != height:
        raise MapFormatError(f"{path}: expected {height} rows, found {len(body)}")
    try:
        values = [[float(tok) for tok in ln.split()] for ln in body]
    except ValueError as exc:
        raise MapFormatError(f"{path}: non-numeric tau entry ({exc})") from None
    if any(len(r) != width for r in values):
        raise MapFormatError(f"{path}: every row must hold {width} values")
    tau = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(tau)) or tau.min() < 0.0 or tau.max() > 1.0:
        raise MapRangeError(f"{path}: tau entries must lie in [0, 1]")
    try:
        return GridMap(tau, rows=rows, cols=cols, tau_min=tau_min)
    except MapRangeError:
        raise
    except ValueError as exc:
        raise MapFormatError(f"{path}: {exc}") from None


def save_mask_csv(grid: GridMap, path) -> None:
    """Non-traversable mask as 0/1 CSV, one map row per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid.nontraversable_mask.astype(int):
            writer.writerow(row.tolist())
