"""
Initial water seeds from local point density.

Each cell is tested against a binomial model of how many occupied cells a
window of N cells should hold on land, B(N, p) with p the scene occupancy
(halved by default to absorb density imbalance from flight-line overlap).
A cell whose window holds fewer occupied cells than the lower confidence
bound N*p - Z*sqrt(N*p*(1-p)) is a water seed. Windows are clipped at the
grid border and the bound is evaluated with the clipped N.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage, special, stats

from .errors import EmptySceneError
from .raster import BitMask, check_same_grid, occupancy_counts


@dataclass(frozen=True)
class SeedParams:
    window_side: int = 9
    z_score: float = 2.0
    density_halving: bool = True
    building_buffer_radius: float = 10.0
    exact_binomial: bool = False
    density_denominator: Literal["extent", "hull"] = "extent"

    def __post_init__(self):
        if self.window_side < 3 or self.window_side % 2 == 0:
            raise ValueError(f"window_side must be odd and >= 3, got {self.window_side}")
        if not self.z_score > 0:
            raise ValueError(f"z_score must be positive, got {self.z_score}")
        if self.building_buffer_radius < 0:
            raise ValueError("building_buffer_radius must be >= 0")
        if self.density_denominator not in ("extent", "hull"):
            raise ValueError(f"unknown density_denominator {self.density_denominator!r}")

    @property
    def window_cells(self) -> int:
        return self.window_side * self.window_side


@dataclass(frozen=True)
class DensityStats:
    p_global: float
    p_test: float
    threshold_real: float
    window_cells: int
    occupied_cells: int
    denominator_cells: int

    def as_dict(self) -> dict:
        return {
            "p_global": self.p_global,
            "p_test": self.p_test,
            "threshold_real": self.threshold_real,
            "window_cells": self.window_cells,
            "occupied_cells": self.occupied_cells,
            "denominator_cells": self.denominator_cells,
        }


def normal_lower_bound(n, p: float, z: float):
    """N*p - Z*sqrt(N*p*(1-p)); ``n`` may be an array."""
    n = np.asarray(n, dtype=np.float64)
    return n * p - z * np.sqrt(n * p * (1.0 - p))


def exact_binomial_quantile(n: int, p: float, z: float) -> int:
    """Largest k with P[B(n, p) <= k] <= Phi(-z), or -1 if none."""
    alpha = special.ndtr(-z)
    cdf = stats.binom.cdf(np.arange(n + 1), n, p)
    return int(np.count_nonzero(cdf <= alpha)) - 1


def density_stats(occ: BitMask, params: SeedParams = SeedParams()) -> DensityStats:
    counts = occupancy_counts(occ)
    if counts.occupied == 0:
        raise EmptySceneError("empty scene: no cell holds a LiDAR return")
    denom = counts.total_cells if params.density_denominator == "extent" else counts.hull_cells
    p_global = counts.occupied / denom
    p_test = p_global / 2 if params.density_halving else p_global
    n = params.window_cells
    return DensityStats(
        p_global=p_global,
        p_test=p_test,
        threshold_real=float(normal_lower_bound(n, p_test, params.z_score)),
        window_cells=n,
        occupied_cells=counts.occupied,
        denominator_cells=denom,
    )


def max_water_counts(stats_: DensityStats, params: SeedParams) -> np.ndarray:
    """Lookup table: largest window count still classified water, per N_w.

    Index is the effective (clipped) window size. ``count < bound`` for the
    real-valued bound is the same as ``count <= ceil(bound) - 1``.
    """
    n_w = np.arange(params.window_cells + 1)
    if params.exact_binomial:
        lut = np.array(
            [exact_binomial_quantile(int(n), stats_.p_test, params.z_score) if n else -1 for n in n_w]
        )
    else:
        lut = np.ceil(normal_lower_bound(n_w, stats_.p_test, params.z_score)).astype(np.int64) - 1
    return lut.astype(np.int64)


def window_counts(bits: np.ndarray, window_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Occupied-cell count and clipped window size for every cell."""
    half = window_side // 2
    n_rows, n_cols = bits.shape
    r = np.arange(n_rows)
    c = np.arange(n_cols)
    r0, r1 = np.maximum(r - half, 0), np.minimum(r + half + 1, n_rows)
    c0, c1 = np.maximum(c - half, 0), np.minimum(c + half + 1, n_cols)

    csum = np.zeros((n_rows + 1, n_cols), dtype=np.int32)
    np.cumsum(bits, axis=0, dtype=np.int32, out=csum[1:])
    band = csum[r1] - csum[r0]
    del csum
    rsum = np.zeros((n_rows, n_cols + 1), dtype=np.int32)
    np.cumsum(band, axis=1, dtype=np.int32, out=rsum[:, 1:])
    del band
    counts = rsum[:, c1] - rsum[:, c0]
    sizes = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return counts, sizes


def classify_seeds(
    occ: BitMask, stats_: DensityStats, params: SeedParams = SeedParams(), *, threads: int = 1
) -> BitMask:
    """Water seed mask from occupancy.

    With ``threads > 1`` the grid is split into row bands with a halo of
    half a window; the result does not depend on the band layout.
    """
    lut = max_water_counts(stats_, params)
    bits = occ.bits
    n_rows = bits.shape[0]
    half = params.window_side // 2

    def run(r0, r1):
        lo, hi = max(r0 - half, 0), min(r1 + half, n_rows)
        counts, _ = window_counts(bits[lo:hi], params.window_side)
        sizes = _clipped_sizes(r0, r1, bits.shape, params.window_side)
        return r0, counts[r0 - lo : r1 - lo] <= lut[sizes]

    out = np.empty(bits.shape, dtype=bool)
    if threads <= 1 or n_rows < 2 * params.window_side:
        out[:] = run(0, n_rows)[1]
    else:
        step = math.ceil(n_rows / threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for r0, part in pool.map(lambda r: run(r, min(r + step, n_rows)), range(0, n_rows, step)):
                out[r0 : r0 + len(part)] = part
    return BitMask(occ.georef, out)


def _clipped_sizes(lo, hi, shape, window_side):
    n_rows, n_cols = shape
    half = window_side // 2
    r = np.arange(lo, hi)
    c = np.arange(n_cols)
    rh = np.minimum(r + half + 1, n_rows) - np.maximum(r - half, 0)
    cw = np.minimum(c + half + 1, n_cols) - np.maximum(c - half, 0)
    return rh[:, None] * cw[None, :]


def apply_building_buffer(seeds: BitMask, buildings: BitMask, radius: float) -> BitMask:
    """Clear seeds within ``radius`` metres of any building cell centre."""
    check_same_grid(seeds.georef, buildings.georef)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if not buildings.bits.any():
        return BitMask(seeds.georef, seeds.bits.copy())

    cell = seeds.georef.cell_size
    reach = int(math.floor(radius / cell))
    rows = np.flatnonzero(buildings.bits.any(axis=1))
    cols = np.flatnonzero(buildings.bits.any(axis=0))
    n_rows, n_cols = buildings.bits.shape
    r0, r1 = max(rows[0] - reach, 0), min(rows[-1] + reach + 1, n_rows)
    c0, c1 = max(cols[0] - reach, 0), min(cols[-1] + reach + 1, n_cols)

    window = (slice(r0, r1), slice(c0, c1))
    # squared distance in cells, compared against (radius/cell)^2
    dist = ndimage.distance_transform_edt(~buildings.bits[window])
    limit = (radius / cell) ** 2
    blocked = dist * dist <= limit * (1 + 1e-12)

    out = seeds.bits.copy()
    out[window] &= ~blocked
    return BitMask(seeds.georef, out)
