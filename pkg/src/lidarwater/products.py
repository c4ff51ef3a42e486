"""
Output products: water elevation raster, hydro-flattened DEM, segment report.

The segment report is JSON Lines, one object per segment, largest area
first (ties by id), keys in a fixed order:

    {"id": 3, "cell_count": 1200, "area_m2": 300.0, "elevation_m": 98.01,
     "bbox": {"row_min": .., "col_min": .., "row_max": .., "col_max": ..,
              "x_min": .., "y_min": .., "x_max": .., "y_max": ..}}

``elevation_m`` is null for a segment without any DSM observation. The
world-coordinate bbox is the outer edge of the cells, not their centres.
"""

from __future__ import annotations

import json

import numpy as np

from .raster import DEFAULT_NODATA, GridGeoref, RasterGrid
from .werm import WaterSegment


def water_elevation_raster(
    segments: list[WaterSegment], georef: GridGeoref, nodata: float = DEFAULT_NODATA
) -> RasterGrid:
    out = np.full(georef.n_rows * georef.n_cols, np.nan)
    for seg in segments:
        if seg.elevation is not None:
            out[seg.cells] = seg.elevation
    return RasterGrid(georef, out.reshape(georef.shape), nodata)


def hydro_flatten(dsm: RasterGrid, segments: list[WaterSegment]) -> RasterGrid:
    """Replace every water cell by its segment's level; land cells untouched."""
    flat = dsm.values.copy().ravel()
    for seg in segments:
        if seg.elevation is not None:
            flat[seg.cells] = seg.elevation
    return RasterGrid(dsm.georef, flat.reshape(dsm.georef.shape), dsm.nodata)


def segment_records(segments: list[WaterSegment], georef: GridGeoref) -> list[dict]:
    ordered = sorted(segments, key=lambda s: (-s.cell_count, s.id))
    cs = georef.cell_size
    records = []
    for s in ordered:
        r0, c0, r1, c1 = s.bbox
        records.append(
            {
                "id": s.id,
                "cell_count": s.cell_count,
                "area_m2": s.area,
                "elevation_m": s.elevation,
                "bbox": {
                    "row_min": r0,
                    "col_min": c0,
                    "row_max": r1,
                    "col_max": c1,
                    "x_min": georef.x_origin + c0 * cs,
                    "y_min": georef.y_origin + (georef.n_rows - r1 - 1) * cs,
                    "x_max": georef.x_origin + (c1 + 1) * cs,
                    "y_max": georef.y_origin + (georef.n_rows - r0) * cs,
                },
            }
        )
    return records


def segment_report(segments: list[WaterSegment], georef: GridGeoref) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in segment_records(segments, georef))


def parse_segment_report(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]

