"""Command-line interface: ``lidarwater {map,ndwi,eval,synth}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .baseline import ThresholdSearch, local_optimal_map, ndwi, optimal_threshold, threshold_map
from .errors import EmptySceneError
from .evaluation import divergent_tiles, summary_table, tile_eval
from .ingest import read_points
from .pipeline import MapConfig, PipelineError, map_water, stage
from .products import segment_report
from .raster import read_ascii_grid, read_mask, write_ascii_grid, write_mask
from .seed import SeedParams
from .synth import generate, load_scene_spec, write_scene
from .werm import WermParams

logger = logging.getLogger("lidarwater")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2

# errors that mean "bad input or arguments" rather than a bug
_INPUT_ERRORS = (OSError, ValueError, EmptySceneError)


def _threads(value: str) -> int:
    if value == "auto":
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1 or 'auto'")
    return n


def _tiles(value: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("tiling must look like 10x10") from None
    return nx, ny


def _id_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# map
# ---------------------------------------------------------------------------


def _config_from_args(args) -> MapConfig:
    return MapConfig(
        resolution=args.resolution,
        aggregator=args.aggregator,
        nodata=args.nodata,
        drop_withheld=args.drop_withheld,
        seed=SeedParams(
            window_side=args.window,
            z_score=args.z,
            density_halving=args.halve_density,
            building_buffer_radius=args.building_buffer,
            exact_binomial=args.exact_binomial,
            density_denominator=args.density_denominator,
        ),
        werm=WermParams(
            elevation_range=args.er,
            min_area=args.ms,
            percentile=args.percentile,
            passes=args.passes,
            connectivity=args.connectivity,
        ),
    )


def cmd_map(args) -> int:
    if args.from_manifest:
        with open(args.from_manifest) as f:
            manifest = json.load(f)
        config = MapConfig.from_dict(manifest["config"])
        input_path = manifest["input"]["path"]
        grid_like = manifest.get("grid_like")
        building_mask = manifest.get("building_mask")
    else:
        if not args.input:
            raise PipelineError("ingest", ValueError("an input point file is required"))
        with stage("config"):
            config = _config_from_args(args)
        input_path, grid_like, building_mask = args.input, args.grid_like, args.building_mask

    with stage("ingest"):
        source = read_points(input_path, drop_withheld=config.drop_withheld)
        georef = read_ascii_grid(grid_like).georef if grid_like else None
        buildings = read_mask(building_mask) if building_mask else None
        input_info = {"path": input_path, "size": os.path.getsize(input_path),
                      "sha256": _sha256(input_path)}

    result = map_water(source, config, buildings=buildings, georef=georef, threads=args.threads)

    with stage("write"):
        out = args.out_dir
        os.makedirs(out, exist_ok=True)
        write_ascii_grid(result.dsm, os.path.join(out, "dsm.asc"))
        write_mask(result.seeds, os.path.join(out, "seeds.asc"))
        write_mask(result.water, os.path.join(out, "water_mask.asc"))
        write_ascii_grid(result.water_elevation, os.path.join(out, "water_elevation.asc"))
        write_ascii_grid(result.flattened, os.path.join(out, "hydro_flattened_dem.asc"))
        with open(os.path.join(out, "segments.jsonl"), "w") as f:
            f.write(segment_report(result.segments, result.dsm.georef))
        g = result.dsm.georef
        # no thread count or timings here: the manifest must be identical across runs
        _write_json(
            os.path.join(out, "manifest.json"),
            {
                "tool": "lidarwater",
                "version": __version__,
                "input": input_info,
                "grid_like": grid_like,
                "building_mask": building_mask,
                "config": config.as_dict(),
                "density_stats": result.stats.as_dict(),
                "grid": {"x_origin": g.x_origin, "y_origin": g.y_origin, "cell_size": g.cell_size,
                         "n_cols": g.n_cols, "n_rows": g.n_rows},
                "water_cells": result.water.count(),
                "segments": len(result.segments),
                "outputs": ["dsm.asc", "seeds.asc", "water_mask.asc", "water_elevation.asc",
                            "hydro_flattened_dem.asc", "segments.jsonl"],
            },
        )
    s = result.stats
    print(f"P={s.p_global:.4f} p_test={s.p_test:.4f} threshold={s.threshold_real:.3f} "
          f"water_cells={result.water.count()} segments={len(result.segments)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ndwi
# ---------------------------------------------------------------------------


def cmd_ndwi(args) -> int:
    with stage("ingest"):
        green = read_ascii_grid(args.green)
        nir = read_ascii_grid(args.nir)
        truth = read_mask(args.truth)
    search = ThresholdSearch(args.t_min, args.t_max, args.steps)
    os.makedirs(args.out_dir, exist_ok=True)
    report: dict = {"search": {"t_min": search.t_min, "t_max": search.t_max, "steps": search.steps}}
    with stage("ndwi"):
        index = ndwi(green, nir)
        write_ascii_grid(index, os.path.join(args.out_dir, "ndwi.asc"))
        if args.mode in ("global", "both"):
            res = optimal_threshold(index, truth, search)
            write_mask(threshold_map(index, res.threshold), os.path.join(args.out_dir, "ndwi_global.asc"))
            report["global"] = {"threshold": res.threshold, "oa": res.oa}
            print(f"NDWI-G-Opt threshold={res.threshold:.4f} OA={res.oa:.6f}")
        if args.mode in ("local", "both"):
            nx, ny = args.tiles
            local = local_optimal_map(index, truth, nx, ny, search)
            write_mask(local.mask, os.path.join(args.out_dir, "ndwi_local.asc"))
            report["local"] = {"tiles": [nx, ny],
                               "thresholds": {str(k): v for k, v in local.thresholds.items()}}
            print(f"NDWI-L-Opt tiles={nx}x{ny}")
    _write_json(os.path.join(args.out_dir, "thresholds.json"), report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _named(value: str) -> tuple[str, str]:
    if "=" in value:
        name, path = value.split("=", 1)
        return name, path
    return os.path.splitext(os.path.basename(value))[0], value


def cmd_eval(args) -> int:
    with stage("ingest"):
        truth = read_mask(args.truth)
        preds = [(name, read_mask(path)) for name, path in map(_named, args.pred)]
    nx, ny = args.tiles
    os.makedirs(args.out_dir, exist_ok=True)
    evaluations = {}
    with stage("eval"):
        for name, mask in preds:
            ev = tile_eval(mask, truth, nx, ny, exclude=args.exclude)
            evaluations[name] = ev
            with open(os.path.join(args.out_dir, f"tiles_{name}.jsonl"), "w") as f:
                f.write(ev.to_jsonl())
        summary = {
            name: {"aggregate": ev.aggregate.as_dict(), "mean_per_tile": ev.mean_metrics}
            for name, ev in evaluations.items()
        }
        if len(preds) >= 2:
            (a, _), (b, _) = preds[0], preds[1]
            top = divergent_tiles(evaluations[a].reports(), evaluations[b].reports(), args.top_k)
            summary["divergent_tiles"] = {"a": a, "b": b, "k": args.top_k, "tile_ids": top}
            for name, ev in evaluations.items():
                sub = [ev.reports()[t] for t in top]
                agg = sum(sub[1:], sub[0]) if sub else None
                summary[name]["divergent_aggregate"] = agg.as_dict() if agg else None
        _write_json(os.path.join(args.out_dir, "summary.json"), summary)
    print(summary_table({name: ev.aggregate for name, ev in evaluations.items()}))
    if "divergent_tiles" in summary:
        print(f"top-{args.top_k} divergent tiles: {summary['divergent_tiles']['tile_ids']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    with stage("synth"):
        spec = load_scene_spec(args.spec)
        scene = generate(spec)
        paths = write_scene(scene, args.out_dir, point_format=args.format)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidarwater", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", help="extract surface water from a point cloud")
    p.add_argument("input", nargs="?", help="LAS or XYZ point file")
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--from-manifest", help="re-run with the input and parameters of a manifest")
    p.add_argument("--resolution", type=float, default=0.5, help="cell size in metres [0.5]")
    p.add_argument("--aggregator", choices=("min", "max", "mean"), default="max")
    p.add_argument("--window", type=int, default=9, help="sliding window side in cells [9]")
    p.add_argument("--z", type=float, default=2.0, help="z-score of the lower bound [2.0]")
    p.add_argument("--halve-density", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--exact-binomial", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--density-denominator", choices=("extent", "hull"), default="extent")
    p.add_argument("--er", type=float, default=0.10, help="elevation range, +/- metres [0.1]")
    p.add_argument("--ms", type=float, default=500.0, help="minimum segment area, m^2 [500]")
    p.add_argument("--percentile", type=float, default=0.10, help="segment level percentile [0.1]")
    p.add_argument("--passes", type=int, default=2)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--building-mask", help="ESRI ASCII grid, value > 0 = building")
    p.add_argument("--building-buffer", type=float, default=10.0, help="metres [10]")
    p.add_argument("--grid-like", help="ESRI ASCII grid whose extent the output must match")
    p.add_argument("--drop-withheld", action="store_true")
    p.add_argument("--nodata", type=float, default=-9999.0)
    p.add_argument("--threads", type=_threads, default="auto")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("ndwi", help="NDWI optimal-threshold baselines")
    p.add_argument("--green", required=True)
    p.add_argument("--nir", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--mode", choices=("global", "local", "both"), default="both")
    p.add_argument("--tiles", type=_tiles, default=(10, 10), help="NXxNY [10x10]")
    p.add_argument("--t-min", type=float, default=-1.0)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=201)
    p.set_defaults(func=cmd_ndwi)

    p = sub.add_parser("eval", help="tile-based accuracy assessment")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", action="append", required=True, help="[NAME=]PATH, repeatable")
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--tiles", type=_tiles, default=(10, 10))
    p.add_argument("--exclude", type=_id_list, default=[])
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("spec", help="YAML/JSON scene description")
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--format", choices=("las", "xyz"), default="las")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"lidarwater {args.command}: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, _INPUT_ERRORS) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"lidarwater {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
