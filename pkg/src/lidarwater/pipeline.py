"""
End-to-end water mapping: points -> DSM -> seeds -> WERM -> products.

Errors raised inside a stage are re-raised as ``PipelineError`` carrying
the stage name so the CLI can report where a run failed.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

from .products import hydro_flatten, water_elevation_raster
from .raster import DEFAULT_NODATA, BitMask, GridGeoref, RasterGrid, build_dsm, check_same_grid, occupancy
from .seed import DensityStats, SeedParams, apply_building_buffer, classify_seeds, density_stats
from .werm import WaterSegment, WermParams, run_werm

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str, timings: dict | None = None):
    start = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    elapsed = time.perf_counter() - start
    if timings is not None:
        timings[name] = elapsed
    logger.info("%s: %.2fs", name, elapsed)


@dataclass(frozen=True)
class MapConfig:
    resolution: float = 0.5
    aggregator: str = "max"
    nodata: float = DEFAULT_NODATA
    drop_withheld: bool = False
    seed: SeedParams = field(default_factory=SeedParams)
    werm: WermParams = field(default_factory=WermParams)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MapConfig":
        d = dict(d)
        d["seed"] = SeedParams(**d.get("seed", {}))
        d["werm"] = WermParams(**d.get("werm", {}))
        return cls(**d)


@dataclass(eq=False)
class MapResult:
    dsm: RasterGrid
    occupancy: BitMask
    stats: DensityStats
    raw_seeds: BitMask
    seeds: BitMask
    water: BitMask
    segments: list[WaterSegment]
    water_elevation: RasterGrid
    flattened: RasterGrid
    timings: dict[str, float]


def map_water(
    points,
    config: MapConfig = MapConfig(),
    *,
    buildings: BitMask | None = None,
    georef: GridGeoref | None = None,
    threads: int = 1,
) -> MapResult:
    """Run the full mapping pipeline on a point source or ``(n, 3)`` array.

    ``georef`` pins the output grid (for co-registration with truth or
    building rasters); by default the grid is snapped to the point bounds,
    or taken from ``buildings`` when one is given.
    """
    timings: dict[str, float] = {}
    if georef is None and buildings is not None:
        georef = buildings.georef

    with stage("dsm", timings):
        dsm = build_dsm(points, config.resolution, config.aggregator, georef=georef, nodata=config.nodata)
    with stage("occupancy", timings):
        occ = occupancy(dsm)
        stats = density_stats(occ, config.seed)
    with stage("seed", timings):
        raw_seeds = classify_seeds(occ, stats, config.seed, threads=threads)
        seeds = raw_seeds
        if buildings is not None:
            check_same_grid(dsm.georef, buildings.georef)
            seeds = apply_building_buffer(raw_seeds, buildings, config.seed.building_buffer_radius)
    with stage("werm", timings):
        water, segments = run_werm(seeds, dsm, config.werm, threads=threads)
    with stage("products", timings):
        elevation = water_elevation_raster(segments, dsm.georef, config.nodata)
        flattened = hydro_flatten(dsm, segments)

    return MapResult(dsm, occ, stats, raw_seeds, seeds, water, segments, elevation, flattened, timings)
