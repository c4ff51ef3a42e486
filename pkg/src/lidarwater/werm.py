"""
Water elevation-based region merging (WERM).

Seed cells are grouped into connected segments. Every segment that is large
enough and has at least one elevation observation gets a representative
water level (a low nearest-rank percentile of its DSM values). The DSM is
sliced to the cells within +/- ``elevation_range`` of that level, and every
slice region connected to the segment is merged into the water mask.
Merging only ever adds cells, and the whole procedure is repeated
``passes`` times with segments and levels recomputed in between.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import BitMask, RasterGrid, check_same_grid

# integer slack when turning real-valued ranks and areas into counts
_EPS = 1e-9


@dataclass(frozen=True)
class WermParams:
    elevation_range: float = 0.10
    min_area: float = 500.0
    percentile: float = 0.10
    passes: int = 2
    connectivity: int = 8

    def __post_init__(self):
        if not self.elevation_range > 0:
            raise ValueError("elevation_range must be > 0")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if not 0 < self.percentile < 1:
            raise ValueError("percentile must lie in (0, 1)")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")

    def min_cells(self, cell_size: float) -> int:
        return max(0, math.ceil(self.min_area / (cell_size * cell_size) - _EPS))


@dataclass(eq=False)
class WaterSegment:
    id: int
    cell_count: int
    area: float
    elevation: float | None
    bbox: tuple[int, int, int, int]  # row_min, col_min, row_max, col_max (inclusive)
    cells: np.ndarray = field(repr=False)  # flat (row-major) cell indices


def structure_for(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError("connectivity must be 4 or 8")


def nearest_rank_index(m: int, percentile: float) -> int:
    """1-based rank ceil(percentile * m), never below 1."""
    return max(1, math.ceil(percentile * m - _EPS))


def segment_elevation(values, percentile: float = 0.10) -> float | None:
    """Nearest-rank percentile of the non-NaN values; None if there are none."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = np.sort(v[~np.isnan(v)])
    if v.size == 0:
        return None
    return float(v[nearest_rank_index(v.size, percentile) - 1])


def label_segments(
    mask: BitMask,
    connectivity: int = 8,
    dsm: RasterGrid | None = None,
    percentile: float = 0.10,
) -> tuple[np.ndarray, list[WaterSegment]]:
    """Connected components of ``mask`` with per-segment statistics.

    Returns the label grid (0 = background, labels 1..n) and the segments in
    label order. Elevations are None when no DSM is given.
    """
    labels, n = ndimage.label(mask.bits, structure=structure_for(connectivity))
    if n == 0:
        return labels, []
    if dsm is not None:
        check_same_grid(mask.georef, dsm.georef)

    n_cols = mask.georef.n_cols
    area_per_cell = mask.georef.cell_area
    elevations = _percentiles_by_label(labels, n, dsm, percentile) if dsm is not None else [None] * n

    segments = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        rr, cc = np.nonzero(labels[sl] == i)
        rr += sl[0].start
        cc += sl[1].start
        cells = rr * n_cols + cc
        segments.append(
            WaterSegment(
                id=i,
                cell_count=int(cells.size),
                area=cells.size * area_per_cell,
                elevation=elevations[i - 1],
                bbox=(sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1),
                cells=cells,
            )
        )
    return labels, segments


def _percentiles_by_label(labels, n, dsm, percentile) -> list[float | None]:
    flat_labels = labels.ravel()
    vals = dsm.values.ravel()
    sel = (flat_labels > 0) & ~np.isnan(vals)
    lab = flat_labels[sel]
    v = vals[sel]
    order = np.lexsort((v, lab))
    lab, v = lab[order], v[order]
    counts = np.bincount(lab, minlength=n + 1)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    out: list[float | None] = []
    for i in range(1, n + 1):
        m = int(counts[i])
        out.append(None if m == 0 else float(v[starts[i] + nearest_rank_index(m, percentile) - 1]))
    return out


def grow_segment(
    segment: WaterSegment,
    dsm_values: np.ndarray,
    elevation_range: float,
    connectivity: int,
) -> tuple[tuple[slice, slice], np.ndarray]:
    """Slice-connected region of one segment.

    The slice is {|dsm - w| <= elevation_range} united with the segment's own
    cells (which conduct even when they have no elevation). Work is done in
    a window around the segment that widens until the grown region no longer
    touches a window edge that is not also a grid edge.
    """
    w = segment.elevation
    n_rows, n_cols = dsm_values.shape
    structure = structure_for(connectivity)
    r_min, c_min, r_max, c_max = segment.bbox
    seg_r, seg_c = np.divmod(segment.cells, n_cols)
    margin = 32
    while True:
        r0, r1 = max(r_min - margin, 0), min(r_max + margin + 1, n_rows)
        c0, c1 = max(c_min - margin, 0), min(c_max + margin + 1, n_cols)
        sub = dsm_values[r0:r1, c0:c1]
        with np.errstate(invalid="ignore"):
            conduct = np.abs(sub - w) <= elevation_range
        seed = np.zeros(conduct.shape, dtype=bool)
        seed[seg_r - r0, seg_c - c0] = True
        conduct |= seed
        lab, _ = ndimage.label(conduct, structure=structure)
        keep = np.zeros(lab.max() + 1, dtype=bool)
        keep[np.unique(lab[seed])] = True
        keep[0] = False
        grown = keep[lab]
        if not (
            (r0 > 0 and grown[0].any())
            or (r1 < n_rows and grown[-1].any())
            or (c0 > 0 and grown[:, 0].any())
            or (c1 < n_cols and grown[:, -1].any())
        ):
            return (slice(r0, r1), slice(c0, c1)), grown
        margin *= 4


def eligible(segment: WaterSegment, params: WermParams, cell_size: float) -> bool:
    return segment.elevation is not None and segment.cell_count >= params.min_cells(cell_size)


def werm_pass(
    water: BitMask,
    segments: list[WaterSegment],
    dsm: RasterGrid,
    params: WermParams = WermParams(),
    *,
    threads: int = 1,
) -> BitMask:
    """One merging pass. The output is a superset of ``water``."""
    check_same_grid(water.georef, dsm.georef)
    cell = water.georef.cell_size
    todo = [s for s in segments if eligible(s, params, cell)]
    out = water.bits.copy()

    def grow(seg):
        return grow_segment(seg, dsm.values, params.elevation_range, params.connectivity)

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(grow, todo))
    else:
        results = [grow(s) for s in todo]
    for window, grown in results:
        out[window] |= grown
    return BitMask(water.georef, out)


def run_werm(
    seeds: BitMask,
    dsm: RasterGrid,
    params: WermParams = WermParams(),
    *,
    threads: int = 1,
) -> tuple[BitMask, list[WaterSegment]]:
    """Apply ``params.passes`` merging passes and return the final mask and segments."""
    water = seeds
    for _ in range(params.passes):
        _, segments = label_segments(water, params.connectivity, dsm, params.percentile)
        water = werm_pass(water, segments, dsm, params, threads=threads)
    _, segments = label_segments(water, params.connectivity, dsm, params.percentile)
    return water, segments
