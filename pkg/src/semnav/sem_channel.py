"""Parametric stand-in for the semantic transceiver plus physical channel.

Region ``k`` transmitted at sparsification ratio ``delta_k`` and SNR ``snr_db``
receives traversability noise with variance

    sigma0_sq * (1 + beta * (1 - delta_k)) * 10 ** (-snr_db / 10) * g_k

where ``g_k`` is 1 on AWGN and ``1 / max(gamma_k, gamma_floor)`` with a
unit-mean exponential ``gamma_k`` per region on Rayleigh fading. A calibration
table, when supplied, replaces the first three factors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import exp1

from .map_model import GridMap
from .trav_graph import VarianceField, cost_variance_from_tau

KINDS = ("awgn", "rayleigh")

# substream tags, so fading and noise draws never share a stream
_FADING = 1
_NOISE = 2


@dataclass(frozen=True)
class CalibrationTable:
    """Measured ``sigma_tau_sq`` on a full ``delta x snr_db`` grid."""

    deltas: np.ndarray
    snrs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.deltas), len(self.snrs)):
            raise ValueError("calibration values must form a full delta x snr grid")
        if np.any(self.values < 0):
            raise ValueError("calibration variances must be non-negative")

    @classmethod
    def from_csv(cls, path) -> "CalibrationTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty calibration table")
        try:
            pts = {(float(r["delta"]), float(r["snr_db"])): float(r["sigma_tau_sq"]) for r in rows}
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: bad calibration row ({exc})") from None
        deltas = np.array(sorted({d for d, _ in pts}))
        snrs = np.array(sorted({s for _, s in pts}))
        if len(pts) != len(deltas) * len(snrs):
            raise ValueError(f"{path}: calibration points do not form a full grid")
        values = np.array([[pts[(d, s)] for s in snrs] for d in deltas])
        return cls(deltas, snrs, values)

    def lookup(self, delta: np.ndarray, snr_db: float) -> np.ndarray:
        delta = np.asarray(delta, dtype=np.float64)
        d = np.clip(delta, self.deltas[0], self.deltas[-1])
        s = np.clip(snr_db, self.snrs[0], self.snrs[-1])
        if len(self.deltas) == 1 or len(self.snrs) == 1:
            # degenerate axis: interpolate along the other one only
            if len(self.snrs) == 1 and len(self.deltas) == 1:
                return np.full(d.shape, self.values[0, 0])
            if len(self.snrs) == 1:
                return np.interp(d, self.deltas, self.values[:, 0])
            return np.full(d.shape, np.interp(s, self.snrs, self.values[0]))
        interp = RegularGridInterpolator((self.deltas, self.snrs), self.values)
        pts = np.stack([d.ravel(), np.full(d.size, s)], axis=1)
        return interp(pts).reshape(d.shape)


@dataclass(frozen=True)
class ChannelProfile:
    kind: str = "awgn"
    sigma0_sq: float = 0.05
    beta: float = 2.0
    gamma_floor: float = 0.05
    calibration: Optional[CalibrationTable] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma0_sq < 0 or self.beta < 0:
            raise ValueError("sigma0_sq and beta must be non-negative")
        if not 0 < self.gamma_floor <= 1:
            raise ValueError("gamma_floor must lie in (0, 1]")

    def mean_gain(self) -> float:
        """E[g_k]: 1 on AWGN, E[1/max(gamma, floor)] on Rayleigh."""
        if self.kind == "awgn":
            return 1.0
        f = self.gamma_floor
        return float(exp1(f) + (1.0 - math.exp(-f)) / f)

    def region_gains(self, n_regions: int, seed: int) -> np.ndarray:
        if self.kind == "awgn":
            return np.ones(n_regions)
        gamma = np.random.default_rng([seed, _FADING]).exponential(1.0, n_regions)
        return 1.0 / np.maximum(gamma, self.gamma_floor)

    def base_variance(self, delta: np.ndarray, snr_db: float) -> np.ndarray:
        """Variance before fading, per region."""
        delta = np.asarray(delta, dtype=np.float64)
        if self.calibration is not None:
            return self.calibration.lookup(delta, snr_db)
        return self.sigma0_sq * (1.0 + self.beta * (1.0 - delta)) * 10.0 ** (-snr_db / 10.0)


def _check_delta(grid: GridMap, delta) -> np.ndarray:
    d = np.broadcast_to(np.asarray(delta, dtype=np.float64), (grid.n_regions,)).copy()
    if np.any(~(d > 0)) or np.any(d > 1):
        raise ValueError("every delta_k must lie in (0, 1]")
    return d


def tau_variance(
    grid: GridMap,
    delta,
    snr_db: float,
    profile: ChannelProfile,
    seed: int,
    *,
    expected: bool = False,
) -> np.ndarray:
    """Per-cell traversability noise variance.

    With ``expected=True`` the Rayleigh gain is replaced by its mean, giving
    the field a planner would use before the fading realization is known.
    """
    d = _check_delta(grid, delta)
    per_region = profile.base_variance(d, snr_db)
    if expected:
        per_region = per_region * profile.mean_gain()
    else:
        per_region = per_region * profile.region_gains(grid.n_regions, seed)
    return per_region[grid.region_of]


def variance_field(
    grid: GridMap,
    delta,
    snr_db: float,
    profile: ChannelProfile,
    seed: int,
    *,
    kappa: float = 1.0,
    expected: bool = False,
) -> VarianceField:
    """Traversability and delta-method cost variances for every cell.

    Blocked cells carry NaN cost variance.
    """
    var_tau = tau_variance(grid, delta, snr_db, profile, seed, expected=expected)
    free = ~grid.nontraversable_mask
    var_cost = np.full(grid.shape, np.nan)
    var_cost[free] = cost_variance_from_tau(
        grid.tau[free], var_tau[free], kappa, tau_min=grid.tau_min
    )
    return VarianceField(var_cost, var_tau)


def noise_draw(grid: GridMap, seed: int) -> np.ndarray:
    """Standard normal draw per cell, shared by every fidelity setting for a seed."""
    return np.random.default_rng([seed, _NOISE]).standard_normal(grid.shape)


def transmit_map(
    grid: GridMap,
    delta,
    snr_db: float,
    profile: ChannelProfile,
    seed: int,
) -> GridMap:
    """Received map: ``clip(tau + N(0, sigma_tau^2), 0, 1)`` cell by cell.

    The same seed yields the same standard-normal draw whatever ``delta`` is,
    so comparisons between allocations share their noise.
    """
    var_tau = tau_variance(grid, delta, snr_db, profile, seed)
    tau_hat = np.clip(grid.tau + np.sqrt(var_tau) * noise_draw(grid, seed), 0.0, 1.0)
    return grid.with_tau(tau_hat)
