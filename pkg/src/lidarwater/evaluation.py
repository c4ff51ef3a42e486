"""
Confusion-matrix metrics and tile-based evaluation.

Scene-level aggregates pool the confusion counts of the included tiles; the
mean of per-tile metrics is reported alongside for comparison. A metric
whose denominator is zero is undefined and reported as None.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .raster import BitMask, check_same_grid, tile_slices

METRICS = ("oa", "precision", "recall", "f1", "iou")


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def oa(self):
        return _ratio(self.tp + self.tn, self.total)

    @property
    def precision(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def iou(self):
        return _ratio(self.tp, self.tp + self.fp + self.fn)

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def as_dict(self) -> dict:
        d = {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}
        d.update({m: getattr(self, m) for m in METRICS})
        return d


EMPTY_REPORT = EvalReport(0, 0, 0, 0)


def confusion(pred: BitMask, truth: BitMask, valid: BitMask | None = None) -> EvalReport:
    check_same_grid(pred.georef, truth.georef)
    p, t = pred.bits, truth.bits
    if valid is not None:
        check_same_grid(pred.georef, valid.georef)
        p, t = p[valid.bits], t[valid.bits]
    return _counts(p, t)


def _counts(p: np.ndarray, t: np.ndarray) -> EvalReport:
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return EvalReport(tp, fp, fn, int(p.size) - tp - fp - fn)


@dataclass(frozen=True)
class TileResult:
    tile_id: int
    tx: int
    ty: int
    rows: tuple[int, int]
    cols: tuple[int, int]
    report: EvalReport
    excluded: bool = False


@dataclass
class TileEvaluation:
    tiles: list[TileResult]
    aggregate: EvalReport
    mean_metrics: dict[str, float | None] = field(default_factory=dict)

    def reports(self, include_excluded: bool = False) -> dict[int, EvalReport]:
        return {t.tile_id: t.report for t in self.tiles if include_excluded or not t.excluded}

    def to_jsonl(self) -> str:
        lines = []
        for t in self.tiles:
            rec = {"tile_id": t.tile_id, "tx": t.tx, "ty": t.ty, "rows": list(t.rows),
                   "cols": list(t.cols), "excluded": t.excluded}
            rec.update(t.report.as_dict())
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)


def tile_eval(
    pred: BitMask,
    truth: BitMask,
    n_tiles_x: int,
    n_tiles_y: int,
    exclude: Iterable[int] = (),
    valid: BitMask | None = None,
) -> TileEvaluation:
    check_same_grid(pred.georef, truth.georef)
    excluded = set(exclude)
    tiles = []
    aggregate = EMPTY_REPORT
    per_metric: dict[str, list[float]] = {m: [] for m in METRICS}
    for tile in tile_slices(pred.georef.shape, n_tiles_x, n_tiles_y):
        window = (tile.rows, tile.cols)
        p, t = pred.bits[window], truth.bits[window]
        if valid is not None:
            v = valid.bits[window]
            p, t = p[v], t[v]
        rep = _counts(p, t)
        skip = tile.tile_id in excluded
        tiles.append(
            TileResult(tile.tile_id, tile.tx, tile.ty, (tile.rows.start, tile.rows.stop),
                       (tile.cols.start, tile.cols.stop), rep, skip)
        )
        if not skip:
            aggregate = aggregate + rep
            for m in METRICS:
                value = getattr(rep, m)
                if value is not None:
                    per_metric[m].append(value)
    means = {m: (float(np.mean(v)) if v else None) for m, v in per_metric.items()}
    return TileEvaluation(tiles, aggregate, means)


def divergent_tiles(
    reports_a: Mapping[int, EvalReport], reports_b: Mapping[int, EvalReport], k: int
) -> list[int]:
    """The k tile ids with the largest |IoU_a - IoU_b|, ties by ascending id.

    Tiles missing from either mapping, or with undefined IoU in either, are
    skipped.
    """
    diffs = []
    for tile_id in sorted(set(reports_a) & set(reports_b)):
        ia, ib = reports_a[tile_id].iou, reports_b[tile_id].iou
        if ia is None or ib is None:
            continue
        diffs.append((-abs(ia - ib), tile_id))
    diffs.sort()
    return [tile_id for _, tile_id in diffs[:k]]


def summary_table(rows: Mapping[str, EvalReport]) -> str:
    """Plain-text table, one line per named report."""
    def fmt(v):
        return "   n/a" if v is None else f"{v:6.4f}"

    header = f"{'name':<20} {'tp':>10} {'fp':>10} {'fn':>10} {'tn':>12} " + " ".join(
        f"{m:>6}" for m in METRICS
    )
    lines = [header, "-" * len(header)]
    for name, r in rows.items():
        lines.append(
            f"{name:<20} {r.tp:>10} {r.fp:>10} {r.fn:>10} {r.tn:>12} "
            + " ".join(fmt(getattr(r, m)) for m in METRICS)
        )
    return "\n".join(lines)
