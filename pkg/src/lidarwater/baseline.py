"""
NDWI thresholding baselines.

Water is high NDWI = (G - NIR) / (G + NIR). Two reference maps are tuned
against a truth mask: one threshold for the whole scene (global optimum) and
one threshold per tile (local optimum). Both search an explicit uniform grid
of thresholds and maximise overall accuracy; ties go to the larger
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BitMask, RasterGrid, check_same_grid, tile_slices


@dataclass(frozen=True)
class ThresholdSearch:
    t_min: float = -1.0
    t_max: float = 1.0
    steps: int = 201

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be < t_max")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.steps)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    oa: float


@dataclass(eq=False)
class LocalThresholdMap:
    mask: BitMask
    thresholds: dict[int, float | None]  # tile id -> threshold (None: tile all nodata)


def ndwi(green: RasterGrid, nir: RasterGrid) -> RasterGrid:
    check_same_grid(green.georef, nir.georef)
    g, n = green.values, nir.values
    total = g + n
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (g - n) / total
    out[np.isnan(g) | np.isnan(n) | (total == 0)] = np.nan
    return RasterGrid(green.georef, out, green.nodata)


def threshold_map(index: RasterGrid, t: float) -> BitMask:
    with np.errstate(invalid="ignore"):
        return BitMask(index.georef, index.values >= t)


def _best_threshold(values: np.ndarray, truth: np.ndarray, thresholds: np.ndarray):
    valid = ~np.isnan(values)
    if not valid.any():
        return None
    water = np.sort(values[valid & truth])
    land = np.sort(values[valid & ~truth])
    n_truth = int(np.count_nonzero(truth))
    n_land = truth.size - n_truth
    tp = water.size - np.searchsorted(water, thresholds, side="left")
    fp = land.size - np.searchsorted(land, thresholds, side="left")
    correct = tp + (n_land - fp)
    best = len(thresholds) - 1 - int(np.argmax(correct[::-1]))
    return float(thresholds[best]), int(correct[best]) / truth.size


def optimal_threshold(
    index: RasterGrid, truth: BitMask, search: ThresholdSearch = ThresholdSearch()
) -> ThresholdResult:
    """Grid threshold maximising overall accuracy against ``truth``.

    Nodata cells count as predicted non-water.
    """
    check_same_grid(index.georef, truth.georef)
    found = _best_threshold(index.values, truth.bits, search.grid())
    if found is None:
        raise ValueError("NDWI raster is entirely nodata")
    return ThresholdResult(*found)


def local_optimal_map(
    index: RasterGrid,
    truth: BitMask,
    n_tiles_x: int,
    n_tiles_y: int,
    search: ThresholdSearch = ThresholdSearch(),
) -> LocalThresholdMap:
    """Per-tile optimal thresholds, stitched into one mask."""
    check_same_grid(index.georef, truth.georef)
    grid = search.grid()
    out = np.zeros(index.georef.shape, dtype=bool)
    thresholds: dict[int, float | None] = {}
    for tile in tile_slices(index.georef.shape, n_tiles_x, n_tiles_y):
        window = (tile.rows, tile.cols)
        values = index.values[window]
        found = _best_threshold(values, truth.bits[window], grid)
        if found is None:
            thresholds[tile.tile_id] = None
            continue
        t = found[0]
        thresholds[tile.tile_id] = t
        with np.errstate(invalid="ignore"):
            out[window] = values >= t
    return LocalThresholdMap(BitMask(index.georef, out), thresholds)
