"""Surface water mapping from topographic airborne LiDAR point clouds."""

__version__ = "0.1.0"

from .ingest import Point3, PointCloudBounds, read_las, read_points, read_xyz, write_las, write_xyz
from .raster import (
    BitMask,
    GridGeoref,
    RasterGrid,
    build_dsm,
    occupancy,
    read_ascii_grid,
    write_ascii_grid,
)
from .seed import DensityStats, SeedParams, apply_building_buffer, classify_seeds, density_stats
from .werm import WaterSegment, WermParams, label_segments, run_werm, segment_elevation, werm_pass
from .products import hydro_flatten, segment_report, water_elevation_raster
from .baseline import ThresholdSearch, local_optimal_map, ndwi, optimal_threshold, threshold_map
from .evaluation import EvalReport, confusion, divergent_tiles, tile_eval
from .pipeline import MapConfig, map_water

__all__ = [
    "Point3", "PointCloudBounds", "read_las", "read_points", "read_xyz", "write_las", "write_xyz",
    "BitMask", "GridGeoref", "RasterGrid", "build_dsm", "occupancy", "read_ascii_grid",
    "write_ascii_grid", "DensityStats", "SeedParams", "apply_building_buffer", "classify_seeds",
    "density_stats", "WaterSegment", "WermParams", "label_segments", "run_werm",
    "segment_elevation", "werm_pass", "hydro_flatten", "segment_report", "water_elevation_raster",
    "ThresholdSearch", "local_optimal_map", "ndwi", "optimal_threshold", "threshold_map",
    "EvalReport", "confusion", "divergent_tiles", "tile_eval", "MapConfig", "map_water",
]
