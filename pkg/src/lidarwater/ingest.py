"""
Point cloud ingestion.

Readers for uncompressed LAS 1.2-1.4 and ASCII XYZ files. Both return a
``PointSource``: a re-iterable stream of ``(n, 3)`` float64 chunks in file
order, with bounds computed from the points actually read (header extents
are not trusted). Only x, y and z are consumed; every other attribute of a
LAS record is skipped.

Writers for LAS 1.2 (point format 0) and XYZ are provided so that synthetic
scenes can be stored in the same formats the readers accept.
"""

from __future__ import annotations

import logging
import math
import os
import re
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    EmptyCloudError,
    LasFormatError,
    TruncatedFileError,
    UnsupportedFormatError,
    XyzParseError,
)

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 1_000_000

# minimum record length for point data formats 0-10
_MIN_RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34, 4: 57, 5: 63, 6: 30, 7: 36, 8: 38, 9: 59, 10: 67}
_LASZIP_USER_ID = b"laszip encoded"
_LAS12_HEADER_SIZE = 227


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class PointCloudBounds:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    point_count: int

    def contains(self, x, y) -> bool:
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y

    @classmethod
    def from_array(cls, xyz: np.ndarray) -> "PointCloudBounds":
        if len(xyz) == 0:
            raise EmptyCloudError("point cloud is empty; bounds are undefined")
        return cls(
            float(xyz[:, 0].min()),
            float(xyz[:, 1].min()),
            float(xyz[:, 0].max()),
            float(xyz[:, 1].max()),
            int(len(xyz)),
        )


class PointSource:
    """Re-iterable stream of point chunks.

    Subclasses implement ``chunks()``. Each call restarts from the first
    point, so a consumer may make two passes (bounds, then binning) without
    holding the cloud in memory.
    """

    def __init__(self):
        self._bounds: PointCloudBounds | None = None

    def chunks(self) -> Iterator[np.ndarray]:
        raise NotImplementedError

    def __iter__(self) -> Iterator[Point3]:
        for chunk in self.chunks():
            for x, y, z in chunk.tolist():
                yield Point3(x, y, z)

    def read_all(self) -> np.ndarray:
        parts = list(self.chunks())
        if not parts:
            return np.empty((0, 3))
        return np.concatenate(parts)

    def bounds(self) -> PointCloudBounds:
        if self._bounds is None:
            self._bounds = scan_bounds(self.chunks())
        return self._bounds


class ArrayPointSource(PointSource):
    """In-memory point source, chunked for interface parity with file readers."""

    def __init__(self, xyz, chunk_size: int = DEFAULT_CHUNK):
        super().__init__()
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        self.xyz = xyz
        self.chunk_size = chunk_size

    def chunks(self):
        for start in range(0, len(self.xyz), self.chunk_size):
            yield self.xyz[start : start + self.chunk_size]


def scan_bounds(chunks: Iterable[np.ndarray]) -> PointCloudBounds:
    lo = np.array([np.inf, np.inf])
    hi = np.array([-np.inf, -np.inf])
    count = 0
    for chunk in chunks:
        if len(chunk) == 0:
            continue
        lo = np.minimum(lo, chunk[:, :2].min(axis=0))
        hi = np.maximum(hi, chunk[:, :2].max(axis=0))
        count += len(chunk)
    if count == 0:
        raise EmptyCloudError("point cloud is empty; bounds are undefined")
    return PointCloudBounds(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]), count)


# ---------------------------------------------------------------------------
# LAS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LasHeader:
    version: tuple[int, int]
    header_size: int
    point_offset: int
    n_vlrs: int
    point_format: int
    record_length: int
    point_count: int
    scale: tuple[float, float, float]
    offset: tuple[float, float, float]


def _parse_las_header(f, path) -> LasHeader:
    head = f.read(_LAS12_HEADER_SIZE)
    if len(head) < 4 or head[:4] != b"LASF":
        raise LasFormatError(f"{path}: missing LASF signature")
    if len(head) < _LAS12_HEADER_SIZE:
        raise LasFormatError(f"{path}: header shorter than {_LAS12_HEADER_SIZE} bytes")

    major, minor = head[24], head[25]
    if major != 1 or not 2 <= minor <= 4:
        raise LasFormatError(f"{path}: unsupported LAS version {major}.{minor}")

    header_size, point_offset, n_vlrs = struct.unpack_from("<HII", head, 94)
    raw_format, record_length, legacy_count = struct.unpack_from("<BHI", head, 104)
    scale = struct.unpack_from("<3d", head, 131)
    offset = struct.unpack_from("<3d", head, 155)

    if raw_format & 0xC0 or _has_laszip_vlr(f, header_size, n_vlrs):
        raise UnsupportedFormatError(f"{path}: LAZ (compressed LAS) input is not supported")
    if str(path).lower().endswith(".laz"):
        raise UnsupportedFormatError(f"{path}: LAZ (compressed LAS) input is not supported")

    point_format = raw_format
    if point_format not in _MIN_RECORD_LENGTH:
        raise LasFormatError(f"{path}: unknown point data format {point_format}")
    if record_length < _MIN_RECORD_LENGTH[point_format]:
        raise LasFormatError(
            f"{path}: record length {record_length} too short for format {point_format}"
        )
    if any(s == 0 for s in scale):
        raise LasFormatError(f"{path}: zero scale factor")

    point_count = legacy_count
    if minor >= 4 and header_size >= 255:
        f.seek(247)
        (count64,) = struct.unpack("<Q", f.read(8))
        if count64:
            point_count = count64

    return LasHeader(
        version=(major, minor),
        header_size=header_size,
        point_offset=point_offset,
        n_vlrs=n_vlrs,
        point_format=point_format,
        record_length=record_length,
        point_count=int(point_count),
        scale=tuple(scale),
        offset=tuple(offset),
    )


def _has_laszip_vlr(f, header_size, n_vlrs) -> bool:
    pos = header_size
    for _ in range(n_vlrs):
        f.seek(pos)
        vlr = f.read(54)
        if len(vlr) < 54:
            return False
        user_id = vlr[2:18].rstrip(b"\0")
        (length,) = struct.unpack_from("<H", vlr, 20)
        if user_id == _LASZIP_USER_ID:
            return True
        pos += 54 + length
    return False


class LasReader(PointSource):
    def __init__(self, path, *, drop_withheld: bool = False, chunk_size: int = DEFAULT_CHUNK):
        super().__init__()
        self.path = os.fspath(path)
        self.drop_withheld = drop_withheld
        self.chunk_size = chunk_size
        with open(self.path, "rb") as f:
            self.header = _parse_las_header(f, self.path)

        h = self.header
        fields = {"names": ["X", "Y", "Z", "flags"], "formats": ["<i4", "<i4", "<i4", "u1"],
                  "offsets": [0, 4, 8, 15], "itemsize": h.record_length}
        self._dtype = np.dtype(fields)
        # withheld lives in the classification byte (bit 7) for formats 0-5 and
        # in the classification-flags byte (bit 2) for formats 6-10
        self._withheld_bit = 0x80 if h.point_format <= 5 else 0x04

    def chunks(self):
        h = self.header
        scale = np.array(h.scale)
        offset = np.array(h.offset)
        with open(self.path, "rb") as f:
            f.seek(h.point_offset)
            done = 0
            while done < h.point_count:
                n = min(self.chunk_size, h.point_count - done)
                buf = f.read(n * h.record_length)
                if len(buf) < n * h.record_length:
                    bad = done + len(buf) // h.record_length
                    raise TruncatedFileError(
                        f"{self.path}: truncated point record {bad} of {h.point_count}", bad
                    )
                rec = np.frombuffer(buf, dtype=self._dtype, count=n)
                xyz = np.empty((n, 3))
                xyz[:, 0] = rec["X"] * scale[0] + offset[0]
                xyz[:, 1] = rec["Y"] * scale[1] + offset[1]
                xyz[:, 2] = rec["Z"] * scale[2] + offset[2]
                if self.drop_withheld:
                    xyz = xyz[(rec["flags"] & self._withheld_bit) == 0]
                done += n
                yield xyz


def read_las(path, *, drop_withheld: bool = False, chunk_size: int = DEFAULT_CHUNK) -> LasReader:
    """Open an uncompressed LAS file as a point stream.

    Coordinates are ``record * scale + offset``. Withheld points are kept
    unless ``drop_withheld`` is set.
    """
    return LasReader(path, drop_withheld=drop_withheld, chunk_size=chunk_size)


def write_las(path, points, *, scale=(0.001, 0.001, 0.001), offset=None) -> int:
    """Write points as LAS 1.2, point data format 0. Returns the point count.

    ``points`` may be an ``(n, 3)`` array, a ``PointSource`` or an iterable
    of chunks. When ``offset`` is omitted it is taken from the floor of the
    first chunk's minimum.
    """
    scale = np.asarray(scale, dtype=np.float64)
    rec_dtype = np.dtype({"names": ["X", "Y", "Z"], "formats": ["<i4"] * 3,
                          "offsets": [0, 4, 8], "itemsize": 20})
    count = 0
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    off = None if offset is None else np.asarray(offset, dtype=np.float64)

    with open(path, "wb") as f:
        f.write(b"\0" * _LAS12_HEADER_SIZE)
        for chunk in _iter_chunks(points):
            if len(chunk) == 0:
                continue
            if off is None:
                off = np.floor(chunk.min(axis=0))
            q = np.rint((chunk - off) / scale)
            if np.abs(q).max() > 2**31 - 1:
                raise ValueError("coordinates exceed LAS int32 range for this scale/offset")
            rec = np.zeros(len(chunk), dtype=rec_dtype)
            rec["X"], rec["Y"], rec["Z"] = q[:, 0], q[:, 1], q[:, 2]
            f.write(rec.tobytes())
            stored = q * scale + off
            lo = np.minimum(lo, stored.min(axis=0))
            hi = np.maximum(hi, stored.max(axis=0))
            count += len(chunk)

        if off is None:
            off = np.zeros(3)
        if count == 0:
            lo = hi = np.zeros(3)
        header = bytearray(_LAS12_HEADER_SIZE)
        header[0:4] = b"LASF"
        header[24], header[25] = 1, 2
        header[26:58] = b"lidarwater".ljust(32, b"\0")
        header[58:90] = b"lidarwater".ljust(32, b"\0")
        struct.pack_into("<HII", header, 94, _LAS12_HEADER_SIZE, _LAS12_HEADER_SIZE, 0)
        struct.pack_into("<BHI", header, 104, 0, 20, count)
        struct.pack_into("<5I", header, 111, count, 0, 0, 0, 0)
        struct.pack_into("<3d", header, 131, *scale)
        struct.pack_into("<3d", header, 155, *off)
        struct.pack_into("<6d", header, 179, hi[0], lo[0], hi[1], lo[1], hi[2], lo[2])
        f.seek(0)
        f.write(bytes(header))
    return count


# ---------------------------------------------------------------------------
# ASCII XYZ
# ---------------------------------------------------------------------------

_SPLIT = re.compile(r"[,\s]+")


class XyzReader(PointSource):
    def __init__(self, path, *, chunk_size: int = 200_000):
        super().__init__()
        self.path = os.fspath(path)
        self.chunk_size = chunk_size
        if not os.path.isfile(self.path):
            raise FileNotFoundError(self.path)

    def chunks(self):
        buf: list[tuple[float, float, float]] = []
        with open(self.path, "r") as f:
            for lineno, line in enumerate(f, start=1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                fields = _SPLIT.split(s)
                if len(fields) < 3:
                    raise XyzParseError(f"expected at least 3 fields, got {len(fields)}", lineno)
                try:
                    x, y, z = float(fields[0]), float(fields[1]), float(fields[2])
                except ValueError:
                    raise XyzParseError(f"non-numeric field in {s!r}", lineno) from None
                if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                    raise XyzParseError("non-finite coordinate", lineno)
                buf.append((x, y, z))
                if len(buf) >= self.chunk_size:
                    yield np.array(buf, dtype=np.float64)
                    buf = []
        if buf:
            yield np.array(buf, dtype=np.float64)


def read_xyz(path, *, chunk_size: int = 200_000) -> XyzReader:
    """Open a text point file: >=3 numeric fields per line, '#' comments."""
    return XyzReader(path, chunk_size=chunk_size)


def write_xyz(path, points, *, decimals: int = 6) -> int:
    fmt = f"%.{decimals}f"
    count = 0
    with open(path, "w") as f:
        for chunk in _iter_chunks(points):
            if len(chunk):
                np.savetxt(f, chunk, fmt=fmt, delimiter=" ")
                count += len(chunk)
    return count


def read_points(path, *, drop_withheld: bool = False) -> PointSource:
    """Dispatch on file extension (.las/.laz vs anything else as XYZ)."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".laz":
        raise UnsupportedFormatError(f"{path}: LAZ (compressed LAS) input is not supported")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such point file: {path}")
    if ext == ".las":
        return read_las(path, drop_withheld=drop_withheld)
    return read_xyz(path)


def _iter_chunks(points) -> Iterator[np.ndarray]:
    if isinstance(points, (np.ndarray, list, tuple)):
        yield np.asarray(points, dtype=np.float64).reshape(-1, 3)
    elif hasattr(points, "chunks"):
        yield from points.chunks()
    else:
        for item in points:
            arr = np.asarray(item, dtype=np.float64)
            yield arr.reshape(-1, 3)
