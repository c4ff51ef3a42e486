"""
Raster data model, DSM construction and ESRI ASCII grid I/O.

Rows are stored north-first: row 0 is the top of the grid, so the centre of
cell (row, col) is at

    x = x_origin + (col + 0.5) * cell_size
    y = y_origin + (n_rows - row - 0.5) * cell_size

with (x_origin, y_origin) the lower-left corner. In memory, nodata cells of a
``RasterGrid`` are NaN; the ``nodata`` sentinel is only used on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import AsciiGridFormatError, EmptyCloudError, GeorefMismatchError
from .ingest import PointCloudBounds, PointSource, _iter_chunks, scan_bounds

Aggregator = Literal["min", "max", "mean"]
DEFAULT_NODATA = -9999.0


@dataclass(frozen=True)
class GridGeoref:
    x_origin: float
    y_origin: float
    cell_size: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.n_rows}x{self.n_cols}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def cell_area(self) -> float:
        return self.cell_size * self.cell_size

    @property
    def x_max(self) -> float:
        return self.x_origin + self.n_cols * self.cell_size

    @property
    def y_max(self) -> float:
        return self.y_origin + self.n_rows * self.cell_size

    def cell_center(self, row, col):
        x = self.x_origin + (np.asarray(col) + 0.5) * self.cell_size
        y = self.y_origin + (self.n_rows - np.asarray(row) - 0.5) * self.cell_size
        return x, y

    def cell_index(self, x, y):
        """Return (row, col) integer arrays; may fall outside the grid."""
        col = np.floor((np.asarray(x) - self.x_origin) / self.cell_size).astype(np.int64)
        row = self.n_rows - 1 - np.floor(
            (np.asarray(y) - self.y_origin) / self.cell_size
        ).astype(np.int64)
        return row, col

    @classmethod
    def from_bounds(cls, bounds: PointCloudBounds, cell_size: float) -> "GridGeoref":
        """Bounding box snapped outward to whole multiples of ``cell_size``."""
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        x0 = math.floor(bounds.min_x / cell_size) * cell_size
        y0 = math.floor(bounds.min_y / cell_size) * cell_size
        if x0 > bounds.min_x:
            x0 -= cell_size
        if y0 > bounds.min_y:
            y0 -= cell_size
        n_cols = int(math.floor((bounds.max_x - x0) / cell_size)) + 1
        n_rows = int(math.floor((bounds.max_y - y0) / cell_size)) + 1
        return cls(x0, y0, cell_size, n_cols, n_rows)


@dataclass(eq=False)
class RasterGrid:
    georef: GridGeoref
    values: np.ndarray
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.georef.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.georef.shape}")
        if np.isinf(self.values).any():
            raise ValueError("raster values must be finite or NaN (nodata)")

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @classmethod
    def empty(cls, georef: GridGeoref, nodata: float = DEFAULT_NODATA) -> "RasterGrid":
        return cls(georef, np.full(georef.shape, np.nan), nodata)

    def copy(self) -> "RasterGrid":
        return RasterGrid(self.georef, self.values.copy(), self.nodata)


@dataclass(eq=False)
class BitMask:
    georef: GridGeoref
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != self.georef.shape:
            raise ValueError(f"mask shape {self.bits.shape} != grid {self.georef.shape}")

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def issubset(self, other: "BitMask") -> bool:
        check_same_grid(self.georef, other.georef)
        return not np.any(self.bits & ~other.bits)

    def __or__(self, other: "BitMask") -> "BitMask":
        check_same_grid(self.georef, other.georef)
        return BitMask(self.georef, self.bits | other.bits)

    def __and__(self, other: "BitMask") -> "BitMask":
        check_same_grid(self.georef, other.georef)
        return BitMask(self.georef, self.bits & other.bits)

    def __invert__(self) -> "BitMask":
        return BitMask(self.georef, ~self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.georef == other.georef and np.array_equal(self.bits, other.bits)

    @classmethod
    def zeros(cls, georef: GridGeoref) -> "BitMask":
        return cls(georef, np.zeros(georef.shape, dtype=bool))


def check_same_grid(a: GridGeoref, b: GridGeoref) -> None:
    if a != b:
        raise GeorefMismatchError(f"grids are not co-registered: {a} vs {b}")


# ---------------------------------------------------------------------------
# DSM
# ---------------------------------------------------------------------------


def build_dsm(
    points,
    cell_size: float = 0.5,
    aggregator: Aggregator = "max",
    *,
    georef: GridGeoref | None = None,
    nodata: float = DEFAULT_NODATA,
) -> RasterGrid:
    """Rasterize points into a digital surface model.

    Parameters
    ----------
    points : ndarray (n, 3), PointSource, or iterable of chunks
        A ``PointSource`` is streamed twice when ``georef`` is not given
        (bounds pass, then binning pass); anything else is materialized.
    cell_size : float
        Grid resolution in metres.
    aggregator : {"min", "max", "mean"}
        Per-cell reducer over point elevations.
    georef : GridGeoref, optional
        Use this grid instead of the snapped point bounds. Every point must
        fall inside it.

    Returns
    -------
    RasterGrid
        Cells without any point are nodata.
    """
    if aggregator not in ("min", "max", "mean"):
        raise ValueError(f"unknown aggregator {aggregator!r}")

    if isinstance(points, PointSource):
        source = points
    else:
        arrays = list(_iter_chunks(points))
        xyz = np.concatenate(arrays) if arrays else np.empty((0, 3))
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        source = None

    if georef is None:
        bounds = source.bounds() if source is not None else scan_bounds([xyz])
        georef = GridGeoref.from_bounds(bounds, cell_size)
    elif not math.isclose(georef.cell_size, cell_size):
        raise ValueError(f"georef cell_size {georef.cell_size} != requested {cell_size}")

    n_cells = georef.n_rows * georef.n_cols
    counts = np.zeros(n_cells, dtype=np.int64)
    if aggregator == "max":
        acc = np.full(n_cells, -np.inf)
    elif aggregator == "min":
        acc = np.full(n_cells, np.inf)
    else:
        acc = np.zeros(n_cells)

    total = 0
    for chunk in (source.chunks() if source is not None else [xyz]):
        if len(chunk) == 0:
            continue
        row, col = georef.cell_index(chunk[:, 0], chunk[:, 1])
        outside = (row < 0) | (row >= georef.n_rows) | (col < 0) | (col >= georef.n_cols)
        if outside.any():
            raise ValueError(f"{int(outside.sum())} points fall outside the raster extent")
        flat = row * georef.n_cols + col
        z = chunk[:, 2]
        counts += np.bincount(flat, minlength=n_cells)
        if aggregator == "max":
            np.maximum.at(acc, flat, z)
        elif aggregator == "min":
            np.minimum.at(acc, flat, z)
        else:
            acc += np.bincount(flat, weights=z, minlength=n_cells)
        total += len(chunk)

    if total == 0:
        raise EmptyCloudError("cannot build a DSM from an empty point stream")

    with np.errstate(invalid="ignore", divide="ignore"):
        if aggregator == "mean":
            acc = acc / counts
    acc[counts == 0] = np.nan
    return RasterGrid(georef, acc.reshape(georef.shape), nodata)


def occupancy(dsm: RasterGrid) -> BitMask:
    """Cells holding at least one return."""
    return BitMask(dsm.georef, ~np.isnan(dsm.values))


class OccupancyCounts(NamedTuple):
    occupied: int
    total_cells: int
    hull_cells: int  # cells inside the bounding box of occupied rows/cols


def occupancy_counts(occ: BitMask) -> OccupancyCounts:
    bits = occ.bits
    occupied = int(np.count_nonzero(bits))
    if occupied == 0:
        return OccupancyCounts(0, bits.size, 0)
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    hull = (rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1)
    return OccupancyCounts(occupied, bits.size, int(hull))


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


class Tile(NamedTuple):
    tile_id: int
    tx: int
    ty: int
    rows: slice
    cols: slice


def tile_slices(shape: tuple[int, int], n_tiles_x: int, n_tiles_y: int) -> list[Tile]:
    """Partition a grid into n_tiles_y x n_tiles_x near-equal tiles.

    Tile ids run row-major from the north-west corner. The remainder of an
    uneven division goes to the last tile row / column.
    """
    n_rows, n_cols = shape
    if n_tiles_x < 1 or n_tiles_y < 1:
        raise ValueError("tile counts must be >= 1")
    if n_tiles_x > n_cols or n_tiles_y > n_rows:
        raise ValueError(f"cannot split {n_rows}x{n_cols} grid into {n_tiles_y}x{n_tiles_x} tiles")
    th, tw = n_rows // n_tiles_y, n_cols // n_tiles_x
    tiles = []
    for ty in range(n_tiles_y):
        r0 = ty * th
        r1 = n_rows if ty == n_tiles_y - 1 else r0 + th
        for tx in range(n_tiles_x):
            c0 = tx * tw
            c1 = n_cols if tx == n_tiles_x - 1 else c0 + tw
            tiles.append(Tile(ty * n_tiles_x + tx, tx, ty, slice(r0, r1), slice(c0, c1)))
    return tiles


# ---------------------------------------------------------------------------
# ESRI ASCII grid
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("ncols", "nrows", "cellsize")


def read_ascii_grid(path) -> RasterGrid:
    """Read an ESRI ASCII grid (.asc). Nodata cells become NaN."""
    with open(path, "r") as f:
        text = f.read()

    header: dict[str, str] = {}
    pos = 0
    while True:
        end = text.find("\n", pos)
        line = text[pos:] if end < 0 else text[pos:end]
        tokens = line.split()
        if tokens and not _is_number(tokens[0]):
            if len(tokens) != 2:
                raise AsciiGridFormatError(f"{path}: malformed header line {line!r}")
            header[tokens[0].lower()] = tokens[1]
        elif tokens:
            break
        if end < 0:
            pos = len(text)
            break
        pos = end + 1

    for key in _REQUIRED_KEYS:
        if key not in header:
            raise AsciiGridFormatError(f"{path}: missing header key '{key}'")
    try:
        n_cols = int(header["ncols"])
        n_rows = int(header["nrows"])
        cell = float(header["cellsize"])
        nodata = float(header.get("nodata_value", DEFAULT_NODATA))
        if "xllcorner" in header:
            x0 = float(header["xllcorner"])
        elif "xllcenter" in header:
            x0 = float(header["xllcenter"]) - cell / 2
        else:
            raise AsciiGridFormatError(f"{path}: missing header key 'xllcorner'")
        if "yllcorner" in header:
            y0 = float(header["yllcorner"])
        elif "yllcenter" in header:
            y0 = float(header["yllcenter"]) - cell / 2
        else:
            raise AsciiGridFormatError(f"{path}: missing header key 'yllcorner'")
    except ValueError as exc:
        if isinstance(exc, AsciiGridFormatError):
            raise
        raise AsciiGridFormatError(f"{path}: bad header value: {exc}") from None

    try:
        georef = GridGeoref(x0, y0, cell, n_cols, n_rows)
    except ValueError as exc:
        raise AsciiGridFormatError(f"{path}: {exc}") from None

    try:
        values = np.array(text[pos:].split(), dtype=np.float64)
    except ValueError:
        raise AsciiGridFormatError(f"{path}: non-numeric cell value") from None
    if values.size != n_cols * n_rows:
        raise AsciiGridFormatError(
            f"{path}: expected {n_cols * n_rows} values (ncols*nrows), found {values.size}"
        )
    values = values.reshape(n_rows, n_cols)
    values[values == nodata] = np.nan
    return RasterGrid(georef, values, nodata)


def write_ascii_grid(grid: RasterGrid, path, *, digits: int = 9) -> None:
    """Write an ESRI ASCII grid, north row first, ``digits`` significant digits."""
    g = grid.georef
    if np.any(grid.values == grid.nodata):
        raise ValueError(f"grid holds real values equal to the nodata sentinel {grid.nodata}")
    fmt = f".{digits}g"
    nodata_txt = format(grid.nodata, fmt)
    with open(path, "w", newline="\n") as f:
        f.write(_header_text(g, nodata_txt))
        for row in grid.values:
            f.write(
                " ".join(nodata_txt if v != v else format(v, fmt) for v in row.tolist())
            )
            f.write("\n")


def write_mask(mask: BitMask, path) -> None:
    """Write a mask as an integer 0/1 grid."""
    lookup = np.array(["0", "1"])
    with open(path, "w", newline="\n") as f:
        f.write(_header_text(mask.georef, format(DEFAULT_NODATA, ".9g")))
        for row in mask.bits:
            f.write(" ".join(lookup[row.view(np.uint8)].tolist()))
            f.write("\n")


def read_mask(path) -> BitMask:
    """Read a grid as a mask: value > 0 is set, nodata and <= 0 are clear."""
    grid = read_ascii_grid(path)
    with np.errstate(invalid="ignore"):
        return BitMask(grid.georef, np.nan_to_num(grid.values, nan=0.0) > 0)


def _header_text(g: GridGeoref, nodata_txt: str) -> str:
    return (
        f"ncols {g.n_cols}\n"
        f"nrows {g.n_rows}\n"
        f"xllcorner {g.x_origin!r}\n"
        f"yllcorner {g.y_origin!r}\n"
        f"cellsize {g.cell_size!r}\n"
        f"NODATA_value {nodata_txt}\n"
    )


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True
