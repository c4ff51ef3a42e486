from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mask_of
from lidarwater.errors import GeorefMismatchError
from lidarwater.evaluation import (
    EMPTY_REPORT,
    EvalReport,
    confusion,
    divergent_tiles,
    summary_table,
    tile_eval,
)

counts = st.integers(0, 10**9)


def test_identity_and_inverse():
    rng = np.random.default_rng(0)
    t = mask_of(rng.random((20, 20)) < 0.4)
    r = confusion(t, t)
    assert r.oa == 1.0 and r.iou == 1.0
    r = confusion(~t, t)
    assert r.oa == 0.0 and r.iou == 0.0


def test_hand_computed():
    r = EvalReport(tp=8, fp=2, fn=2, tn=88)
    assert r.oa == 0.96 and r.precision == 0.8 and r.recall == 0.8 and r.f1 == 0.8
    assert r.iou == pytest.approx(2 / 3, abs=1e-15)


def test_undefined_metrics():
    r = EvalReport(0, 0, 0, 5)
    assert r.oa == 1.0 and r.precision is None and r.recall is None and r.f1 is None and r.iou is None
    assert EMPTY_REPORT.oa is None


def test_valid_mask_restricts():
    pred = mask_of([[1, 1], [0, 0]])
    truth = mask_of([[1, 0], [1, 0]])
    valid = mask_of([[1, 0], [1, 1]])
    assert confusion(pred, truth, valid) == EvalReport(1, 0, 1, 1)


def test_mismatch():
    with pytest.raises(GeorefMismatchError):
        confusion(mask_of(np.ones((2, 2))), mask_of(np.ones((3, 2))))


class TestTiles:
    def test_one_tile_is_global(self):
        rng = np.random.default_rng(1)
        p, t = mask_of(rng.random((13, 9)) < 0.5), mask_of(rng.random((13, 9)) < 0.5)
        assert tile_eval(p, t, 1, 1).aggregate == confusion(p, t)

    def test_exclude_all(self):
        rng = np.random.default_rng(2)
        p, t = mask_of(rng.random((10, 10)) < 0.5), mask_of(rng.random((10, 10)) < 0.5)
        ev = tile_eval(p, t, 2, 2, exclude=range(4))
        assert ev.aggregate == EMPTY_REPORT and ev.aggregate.oa is None
        assert all(v is None for v in ev.mean_metrics.values())
        assert len(ev.tiles) == 4 and all(tr.excluded for tr in ev.tiles)

    def test_ten_by_ten_partition(self):
        rng = np.random.default_rng(3)
        p, t = mask_of(rng.random((105, 98)) < 0.5), mask_of(rng.random((105, 98)) < 0.3)
        ev = tile_eval(p, t, 10, 10)
        assert sum((tr.report for tr in ev.tiles), EMPTY_REPORT) == confusion(p, t) == ev.aggregate

    def test_exclusion_and_means(self):
        p = mask_of([[1, 1, 0, 0], [1, 1, 0, 0]])
        t = mask_of([[1, 0, 0, 0], [1, 0, 0, 1]])
        ev = tile_eval(p, t, 2, 1, exclude=[1])
        assert ev.aggregate == EvalReport(2, 2, 0, 0)
        assert ev.mean_metrics["oa"] == 0.5 and ev.mean_metrics["iou"] == 0.5
        assert set(ev.reports()) == {0} and set(ev.reports(include_excluded=True)) == {0, 1}

    def test_jsonl(self):
        p = mask_of(np.eye(4))
        ev = tile_eval(p, p, 2, 2)
        recs = [json.loads(line) for line in ev.to_jsonl().splitlines()]
        assert [r["tile_id"] for r in recs] == [0, 1, 2, 3]
        assert recs[1]["iou"] is None and recs[0]["iou"] == 1.0


class TestDivergent:
    def test_identical_reports(self):
        reps = {i: EvalReport(i + 1, 1, 1, 10) for i in range(5)}
        assert divergent_tiles(reps, reps, 3) == [0, 1, 2]

    def test_one_differs(self):
        a = {i: EvalReport(5, 1, 1, 10) for i in range(6)}
        b = dict(a)
        b[4] = EvalReport(1, 5, 5, 6)
        assert divergent_tiles(a, b, 1) == [4]

    def test_undefined_skipped(self):
        a = {0: EvalReport(0, 0, 0, 4), 1: EvalReport(1, 0, 0, 3)}
        b = {0: EvalReport(2, 0, 0, 2), 1: EvalReport(1, 1, 0, 2)}
        assert divergent_tiles(a, b, 5) == [1]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sort_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 40))
        a = {i: EvalReport(*map(int, rng.integers(0, 4, 4))) for i in range(n)}
        b = {i: EvalReport(*map(int, rng.integers(0, 4, 4))) for i in range(n)}
        diffs = {i: abs(a[i].iou - b[i].iou) for i in range(n) if a[i].iou is not None and b[i].iou is not None}
        want = sorted(diffs, key=lambda i: (-diffs[i], i))[:10]
        assert divergent_tiles(a, b, 10) == want


@settings(max_examples=200, deadline=None)
@given(counts, counts, counts, counts)
def test_metric_identities(tp, fp, fn, tn):
    r = EvalReport(tp, fp, fn, tn)
    if r.f1 is not None and r.iou is not None:
        assert r.f1 >= r.iou
    for m in ("oa", "precision", "recall", "f1", "iou"):
        v = getattr(r, m)
        assert v is None or 0 <= v <= 1
    assert r + EMPTY_REPORT == r


def test_summary_table():
    text = summary_table({"werm": EvalReport(8, 2, 2, 88), "empty": EvalReport(0, 0, 0, 1)})
    lines = text.splitlines()
    assert lines[0].split()[:5] == ["name", "tp", "fp", "fn", "tn"]
    assert "0.8000" in lines[2] and "n/a" in lines[3]
