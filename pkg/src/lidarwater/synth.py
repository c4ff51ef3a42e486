"""
Synthetic LiDAR scenes with exact ground truth.

A scene is a grid of cells, each of which is land, water, building roof or
occlusion shadow. Every cell draws a Poisson number of returns from its own
rate (base density times cell area, thinned for water and shadow), placed
uniformly inside the cell:

    land      terrain(x, y) + N(0, terrain.noise)
    building  terrain(x, y) + height + N(0, terrain.noise)
    shadow    like land, at shadow_return_fraction of the base rate
    water     level + U(-water_noise, water_noise)

Water cells near the shore can be given a denser return rate
(``margin_density_boost``) to mimic low incidence angle returns. Green and
NIR rasters are painted per cell class for the NDWI baselines.

Everything derives from ``rng_seed``: the point stream is regenerated from
scratch on each pass, so two passes (or two runs) give identical points.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np
import yaml
from scipy import ndimage

from .errors import SceneSpecError
from .ingest import PointSource, write_las, write_xyz
from .raster import BitMask, GridGeoref, RasterGrid, write_ascii_grid, write_mask

LAND, WATER, BUILDING, SHADOW = 0, 1, 2, 3

# per-class (green, nir) reflectance
_BANDS = {LAND: (0.10, 0.30), WATER: (0.12, 0.04), BUILDING: (0.20, 0.20), SHADOW: (0.05, 0.045)}
_SHADOW_OFFSETS = {"E", "W", "N", "S"}


@dataclass
class Terrain:
    kind: str = "flat"  # flat | slope | terraced | noisy
    base: float = 100.0
    slope_x: float = 0.0
    slope_y: float = 0.0
    step_height: float = 0.5
    step_width: float = 20.0
    amplitude: float = 1.0
    wavelength: float = 200.0
    noise: float = 0.03

    def validate(self):
        if self.kind not in ("flat", "slope", "terraced", "noisy"):
            raise SceneSpecError(f"unknown terrain kind {self.kind!r}")
        if self.noise < 0:
            raise SceneSpecError("terrain noise must be >= 0")
        if self.kind == "terraced" and not self.step_width > 0:
            raise SceneSpecError("terrace step_width must be > 0")
        if self.kind == "noisy" and not self.wavelength > 0:
            raise SceneSpecError("noisy terrain wavelength must be > 0")


@dataclass
class WaterBody:
    shape: str  # rectangle | disk | ribbon
    elevation: float
    rect: tuple[float, float, float, float] | None = None  # x0, y0, x1, y1
    center: tuple[float, float] | None = None
    radius: float | None = None
    path: list[tuple[float, float]] | None = None
    width: float | None = None
    return_fraction: float = 0.02
    margin_density_boost: float = 0.0
    margin_width: float = 5.0

    def validate(self):
        if self.shape == "rectangle" and self.rect is None:
            raise SceneSpecError("rectangle water body needs 'rect'")
        if self.shape == "disk" and (self.center is None or self.radius is None):
            raise SceneSpecError("disk water body needs 'center' and 'radius'")
        if self.shape == "ribbon" and (not self.path or len(self.path) < 2 or not self.width):
            raise SceneSpecError("ribbon water body needs a 'path' of >= 2 points and a 'width'")
        if self.shape not in ("rectangle", "disk", "ribbon"):
            raise SceneSpecError(f"unknown water body shape {self.shape!r}")
        if not 0 <= self.return_fraction <= 1:
            raise SceneSpecError("return_fraction must lie in [0, 1]")
        if self.margin_density_boost < 0:
            raise SceneSpecError("margin_density_boost must be >= 0")


@dataclass
class Building:
    footprint: tuple[float, float, float, float]
    height: float = 15.0
    shadow_direction: str = "E"
    shadow_length: float = 8.0
    shadow_return_fraction: float = 0.01

    def validate(self):
        if self.shadow_direction not in _SHADOW_OFFSETS:
            raise SceneSpecError(f"shadow_direction must be one of {sorted(_SHADOW_OFFSETS)}")
        if self.shadow_length < 0:
            raise SceneSpecError("shadow_length must be >= 0")
        if not 0 <= self.shadow_return_fraction <= 1:
            raise SceneSpecError("shadow_return_fraction must lie in [0, 1]")

    def shadow_rect(self):
        x0, y0, x1, y1 = self.footprint
        L = self.shadow_length
        return {
            "E": (x1, y0, x1 + L, y1),
            "W": (x0 - L, y0, x0, y1),
            "N": (x0, y1, x1, y1 + L),
            "S": (x0, y0 - L, x1, y0),
        }[self.shadow_direction]


@dataclass
class BandShift:
    rect: tuple[float, float, float, float]
    green_offset: float = 0.0
    nir_offset: float = 0.0


@dataclass
class SceneSpec:
    extent: tuple[float, float] = (500.0, 500.0)
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = 0.5
    base_density: float = 8.0
    terrain: Terrain = field(default_factory=Terrain)
    water_bodies: list[WaterBody] = field(default_factory=list)
    buildings: list[Building] = field(default_factory=list)
    band_shifts: list[BandShift] = field(default_factory=list)
    water_noise: float = 0.02
    choppy: bool = False
    choppy_noise: float = 0.15
    band_noise: float = 0.02
    rng_seed: int = 0

    def validate(self):
        if not self.base_density > 0:
            raise SceneSpecError("base_density must be > 0")
        if not self.cell_size > 0:
            raise SceneSpecError("cell_size must be > 0")
        for size in self.extent:
            n = size / self.cell_size
            if size <= 0 or abs(n - round(n)) > 1e-6:
                raise SceneSpecError("extent must be a positive multiple of cell_size")
        self.terrain.validate()
        for body in self.water_bodies:
            body.validate()
        for b in self.buildings:
            b.validate()

    @property
    def effective_water_noise(self) -> float:
        return self.choppy_noise if self.choppy else self.water_noise

    def georef(self) -> GridGeoref:
        return GridGeoref(
            float(self.origin[0]),
            float(self.origin[1]),
            float(self.cell_size),
            int(round(self.extent[0] / self.cell_size)),
            int(round(self.extent[1] / self.cell_size)),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SceneSpecError(f"unknown scene keys: {sorted(unknown)}")
        try:
            if "terrain" in d:
                d["terrain"] = Terrain(**d["terrain"])
            d["water_bodies"] = [WaterBody(**w) for w in d.get("water_bodies", [])]
            d["buildings"] = [Building(**b) for b in d.get("buildings", [])]
            d["band_shifts"] = [BandShift(**s) for s in d.get("band_shifts", [])]
            for key in ("extent", "origin"):
                if key in d:
                    d[key] = tuple(d[key])
            spec = cls(**d)
        except TypeError as exc:
            raise SceneSpecError(str(exc)) from None
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


def load_scene_spec(path) -> SceneSpec:
    """Read a scene description from YAML (JSON is accepted as YAML)."""
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise SceneSpecError(f"{path}: scene file must hold a mapping")
    return SceneSpec.from_dict(data)


# ---------------------------------------------------------------------------
# Rasterization helpers
# ---------------------------------------------------------------------------


def _crop(georef: GridGeoref, x0, y0, x1, y1):
    """Row/col slices covering a world rectangle plus cell-centre coordinates."""
    cs = georef.cell_size
    c0 = max(int(math.floor((x0 - georef.x_origin) / cs)) - 1, 0)
    c1 = min(int(math.ceil((x1 - georef.x_origin) / cs)) + 1, georef.n_cols)
    r0 = max(int(math.floor((georef.y_max - y1) / cs)) - 1, 0)
    r1 = min(int(math.ceil((georef.y_max - y0) / cs)) + 1, georef.n_rows)
    if c0 >= c1 or r0 >= r1:
        return None
    xc, _ = georef.cell_center(0, np.arange(c0, c1))
    _, yc = georef.cell_center(np.arange(r0, r1), 0)
    return (slice(r0, r1), slice(c0, c1)), xc[None, :], yc[:, None]


def _rect_mask(georef, rect, out):
    x0, y0, x1, y1 = rect
    found = _crop(georef, x0, y0, x1, y1)
    if found:
        window, xc, yc = found
        out[window] |= (xc >= x0) & (xc <= x1) & (yc >= y0) & (yc <= y1)


def _disk_mask(georef, center, radius, out):
    cx, cy = center
    found = _crop(georef, cx - radius, cy - radius, cx + radius, cy + radius)
    if found:
        window, xc, yc = found
        out[window] |= (xc - cx) ** 2 + (yc - cy) ** 2 <= radius * radius


def _ribbon_mask(georef, path, width, out):
    half = width / 2
    pts = np.asarray(path, dtype=np.float64)
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        found = _crop(georef, min(ax, bx) - half, min(ay, by) - half,
                      max(ax, bx) + half, max(ay, by) + half)
        if not found:
            continue
        window, xc, yc = found
        dx, dy = bx - ax, by - ay
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0:
            t = 0.0
        else:
            t = np.clip(((xc - ax) * dx + (yc - ay) * dy) / seg_len2, 0.0, 1.0)
        d2 = (xc - (ax + t * dx)) ** 2 + (yc - (ay + t * dy)) ** 2
        out[window] |= d2 <= half * half


def _body_mask(georef, body: WaterBody) -> np.ndarray:
    out = np.zeros(georef.shape, dtype=bool)
    if body.shape == "rectangle":
        _rect_mask(georef, body.rect, out)
    elif body.shape == "disk":
        _disk_mask(georef, body.center, body.radius, out)
    else:
        _ribbon_mask(georef, body.path, body.width, out)
    return out


def _margin(mask: np.ndarray, width_cells: float) -> np.ndarray:
    """Cells of ``mask`` within ``width_cells`` of a non-mask cell."""
    out = np.zeros(mask.shape, dtype=bool)
    if width_cells <= 0 or not mask.any():
        return out
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    window = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    padded = np.pad(mask[window], 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    out[window] = mask[window] & (dist <= width_cells)
    return out


# ---------------------------------------------------------------------------
# Scene
# ---------------------------------------------------------------------------


class Scene(PointSource):
    """Generated scene: truth masks, band rasters and a re-iterable point stream."""

    rows_per_chunk = 256

    def __init__(self, spec: SceneSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.georef = spec.georef()
        seq = np.random.SeedSequence(spec.rng_seed)
        self._point_seed, self._band_seed, terrain_seed = seq.spawn(3)
        self._waves = self._make_waves(np.random.default_rng(terrain_seed))
        self._rasterize()
        self._bands: tuple[RasterGrid, RasterGrid] | None = None

    # -- construction ------------------------------------------------------

    def _make_waves(self, rng):
        k = 6
        theta = rng.uniform(0, 2 * np.pi, k)
        phase = rng.uniform(0, 2 * np.pi, k)
        scale = rng.uniform(0.5, 2.0, k)
        return theta, phase, scale

    def _rasterize(self):
        g, spec = self.georef, self.spec
        shape = g.shape
        kind = np.zeros(shape, dtype=np.int8)
        index = np.full(shape, -1, dtype=np.int16)
        water_level = np.full(shape, np.nan)
        margin = np.zeros(shape, dtype=bool)

        lam = spec.base_density * g.cell_area
        rate = np.full(shape, lam, dtype=np.float64)

        for i, body in enumerate(spec.water_bodies):
            m = _body_mask(g, body)
            clash = m & (kind == WATER) & (water_level != body.elevation)
            if clash.any():
                raise SceneSpecError(
                    f"water body {i} overlaps another body at a different elevation"
                )
            kind[m] = WATER
            index[m] = i
            water_level[m] = body.elevation
            rate[m] = lam * body.return_fraction
            if body.margin_density_boost > 0:
                edge = _margin(m, body.margin_width / g.cell_size)
                rate[edge] = lam * max(body.return_fraction, body.margin_density_boost)
                margin |= edge

        buildings = np.zeros(shape, dtype=bool)
        shadow = np.zeros(shape, dtype=bool)
        for i, b in enumerate(spec.buildings):
            fp = np.zeros(shape, dtype=bool)
            _rect_mask(g, b.footprint, fp)
            if (fp & (kind == WATER)).any():
                raise SceneSpecError(f"building {i} footprint overlaps water")
            kind[fp] = BUILDING
            index[fp] = i
            rate[fp] = lam
            buildings |= fp
            sh = np.zeros(shape, dtype=bool)
            _rect_mask(g, b.shadow_rect(), sh)
            sh &= kind == LAND
            kind[sh] = SHADOW
            rate[sh] = lam * b.shadow_return_fraction
            shadow |= sh

        self.kind = kind
        self.index = index
        self.rate = rate
        self.truth_water = BitMask(g, kind == WATER)
        self.truth_buildings = BitMask(g, buildings)
        self.truth_shadow = BitMask(g, shadow)
        self.water_margin = BitMask(g, margin)
        self._water_levels = np.array([b.elevation for b in spec.water_bodies] or [0.0])
        self._heights = np.array([b.height for b in spec.buildings] or [0.0])

    # -- terrain -------------------------------------------------------------

    def terrain_elevation(self, x, y):
        t = self.spec.terrain
        dx = np.asarray(x) - self.georef.x_origin
        dy = np.asarray(y) - self.georef.y_origin
        if t.kind == "flat":
            return np.full(np.shape(dx), t.base, dtype=np.float64)
        if t.kind == "slope":
            return t.base + t.slope_x * dx + t.slope_y * dy
        if t.kind == "terraced":
            return t.base + t.step_height * np.floor(dx / t.step_width)
        theta, phase, scale = self._waves
        z = np.zeros(np.shape(dx))
        for th, ph, sc in zip(theta, phase, scale):
            k = 2 * np.pi * sc / t.wavelength
            z += np.sin(k * (dx * np.cos(th) + dy * np.sin(th)) + ph)
        return t.base + t.slope_x * dx + t.slope_y * dy + t.amplitude * z / len(theta)

    # -- point stream --------------------------------------------------------

    def chunks(self) -> Iterator[np.ndarray]:
        g = self.georef
        rng = np.random.default_rng(self._point_seed)
        noise = self.spec.terrain.noise
        wnoise = self.spec.effective_water_noise
        for r0 in range(0, g.n_rows, self.rows_per_chunk):
            r1 = min(r0 + self.rows_per_chunk, g.n_rows)
            counts = rng.poisson(self.rate[r0:r1].ravel())
            n = int(counts.sum())
            u = rng.random(n)
            v = rng.random(n)
            eps = rng.standard_normal(n)
            wav = rng.uniform(-1.0, 1.0, n)
            if n == 0:
                continue
            cell = np.repeat(np.arange(counts.size), counts)
            rows = r0 + cell // g.n_cols
            cols = cell % g.n_cols
            # keep points strictly inside their cell
            x = g.x_origin + (cols + 0.01 + 0.98 * u) * g.cell_size
            y = g.y_origin + (g.n_rows - rows - 1 + 0.01 + 0.98 * v) * g.cell_size

            kind = self.kind[rows, cols]
            idx = self.index[rows, cols]
            z = self.terrain_elevation(x, y) + noise * eps
            is_b = kind == BUILDING
            z[is_b] += self._heights[idx[is_b]]
            is_w = kind == WATER
            z[is_w] = self._water_levels[idx[is_w]] + wnoise * wav[is_w]
            yield np.column_stack((x, y, z))

    # -- bands ---------------------------------------------------------------

    def bands(self) -> tuple[RasterGrid, RasterGrid]:
        """Synthetic (green, NIR) reflectance rasters."""
        if self._bands is None:
            rng = np.random.default_rng(self._band_seed)
            g = self.georef
            green = np.empty(g.shape)
            nir = np.empty(g.shape)
            for cls, (gv, nv) in _BANDS.items():
                sel = self.kind == cls
                green[sel] = gv
                nir[sel] = nv
            green += self.spec.band_noise * rng.standard_normal(g.shape)
            nir += self.spec.band_noise * rng.standard_normal(g.shape)
            for shift in self.spec.band_shifts:
                m = np.zeros(g.shape, dtype=bool)
                _rect_mask(g, shift.rect, m)
                green[m] += shift.green_offset
                nir[m] += shift.nir_offset
            np.clip(green, 0.0, None, out=green)
            np.clip(nir, 0.0, None, out=nir)
            self._bands = (RasterGrid(g, green), RasterGrid(g, nir))
        return self._bands

    @property
    def green(self) -> RasterGrid:
        return self.bands()[0]

    @property
    def nir(self) -> RasterGrid:
        return self.bands()[1]


def generate(spec: SceneSpec) -> Scene:
    return Scene(spec)


def write_scene(scene: Scene, out_dir, *, point_format: str = "las") -> dict[str, str]:
    """Write points, truth masks and band rasters; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if point_format == "las":
        paths["points"] = os.path.join(out_dir, "points.las")
        write_las(paths["points"], scene, offset=(scene.georef.x_origin, scene.georef.y_origin, 0.0))
    elif point_format == "xyz":
        paths["points"] = os.path.join(out_dir, "points.xyz")
        write_xyz(paths["points"], scene)
    else:
        raise ValueError(f"unknown point format {point_format!r}")
    for name, mask in (
        ("truth_water", scene.truth_water),
        ("truth_buildings", scene.truth_buildings),
        ("truth_shadow", scene.truth_shadow),
    ):
        paths[name] = os.path.join(out_dir, f"{name}.asc")
        write_mask(mask, paths[name])
    green, nir = scene.bands()
    for name, grid in (("green", green), ("nir", nir)):
        paths[name] = os.path.join(out_dir, f"{name}.asc")
        write_ascii_grid(grid, paths[name], digits=6)
    paths["scene"] = os.path.join(out_dir, "scene.json")
    with open(paths["scene"], "w") as f:
        json.dump(scene.spec.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return paths
