from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import grid_of, mask_of
from lidarwater.baseline import (
    ThresholdSearch,
    local_optimal_map,
    ndwi,
    optimal_threshold,
    threshold_map,
)
from lidarwater.errors import GeorefMismatchError
from lidarwater.evaluation import confusion, tile_eval
from lidarwater.raster import tile_slices


def brute_best(values, truth, grid):
    """Rescan every threshold; largest threshold among the OA maxima."""
    best_t, best_oa = None, -1.0
    for t in grid:
        with np.errstate(invalid="ignore"):
            pred = values >= t
        oa = float(np.mean(pred == truth))
        if oa >= best_oa:
            best_t, best_oa = t, oa
    return best_t, best_oa


class TestNdwi:
    def test_values(self):
        out = ndwi(grid_of([[0.2, 0.3, 0.0]]), grid_of([[0.1, 0.3, 0.0]])).values
        assert out[0, 0] == pytest.approx(1 / 3) and out[0, 1] == 0.0 and np.isnan(out[0, 2])

    def test_nodata_propagates(self):
        out = ndwi(grid_of([[np.nan, 0.2]]), grid_of([[0.1, np.nan]])).values
        assert np.isnan(out).all()

    def test_mismatch(self):
        with pytest.raises(GeorefMismatchError):
            ndwi(grid_of(np.ones((2, 2))), grid_of(np.ones((2, 3))))

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
           hnp.arrays(np.float64, (6, 6), elements=st.floats(0, 1)))
    def test_range(self, g, n):
        out = ndwi(grid_of(g), grid_of(n)).values
        ok = ~np.isnan(out)
        assert np.all(out[ok] >= -1) and np.all(out[ok] <= 1)


class TestThreshold:
    def test_minus_one_all_valid_water(self):
        v = np.array([[-1.0, 0.3, np.nan]])
        assert threshold_map(grid_of(v), -1.0).bits.tolist() == [[True, True, False]]

    def test_above_max_no_water(self):
        v = np.random.default_rng(0).uniform(-1, 1, (5, 5))
        assert threshold_map(grid_of(v), np.nextafter(v.max(), 2)).count() == 0

    def test_recover_0_3(self):
        rng = np.random.default_rng(1)
        v = rng.uniform(-1, 1, (50, 50))
        index = grid_of(v)
        truth = threshold_map(index, 0.3)
        res = optimal_threshold(index, truth)
        below = v[v < 0.3].max()
        assert res.oa == 1.0 and below < res.threshold <= 0.3 + 1e-12

    def test_constant_all_water(self):
        index = grid_of(np.full((4, 4), 0.2))
        res = optimal_threshold(index, mask_of(np.ones((4, 4))))
        assert res.oa == 1.0 and res.threshold <= 0.2

    def test_all_nodata_error(self):
        with pytest.raises(ValueError):
            optimal_threshold(grid_of(np.full((3, 3), np.nan)), mask_of(np.zeros((3, 3))))

    def test_search_validation(self):
        with pytest.raises(ValueError):
            ThresholdSearch(1.0, 0.0)
        with pytest.raises(ValueError):
            ThresholdSearch(steps=1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 60))
    def test_matches_rescan(self, seed, steps):
        rng = np.random.default_rng(seed)
        v = np.round(rng.uniform(-1, 1, (15, 12)), 1)
        v[rng.random(v.shape) < 0.1] = np.nan
        truth = rng.random(v.shape) < 0.4
        search = ThresholdSearch(-1.0, 1.0, steps)
        res = optimal_threshold(grid_of(v), mask_of(truth), search)
        t, oa = brute_best(v, truth, search.grid())
        assert res.threshold == t and res.oa == pytest.approx(oa, abs=1e-15)


class TestLocal:
    def test_single_tile_equals_global(self):
        rng = np.random.default_rng(2)
        index = grid_of(rng.uniform(-1, 1, (20, 30)))
        truth = mask_of(rng.random((20, 30)) < 0.3)
        local = local_optimal_map(index, truth, 1, 1)
        g = optimal_threshold(index, truth)
        assert local.thresholds == {0: g.threshold}
        assert local.mask == threshold_map(index, g.threshold)

    def test_disjoint_tiles_dominate_global(self):
        v = np.zeros((10, 20))
        v[:, :10] = np.linspace(-0.9, -0.1, 10)[None, :]
        v[:, 10:] = np.linspace(0.1, 0.9, 10)[None, :]
        truth = np.zeros_like(v, dtype=bool)
        truth[:, 5:10] = True  # water above -0.5 on the left
        truth[:, 17:] = True  # water above 0.6 on the right
        index, t = grid_of(v), mask_of(truth)
        local = local_optimal_map(index, t, 2, 1)
        g = optimal_threshold(index, t)
        gl, lo = tile_eval(threshold_map(index, g.threshold), t, 2, 1), tile_eval(local.mask, t, 2, 1)
        for a, b in zip(gl.tiles, lo.tiles):
            assert b.report.oa >= a.report.oa
        assert lo.aggregate.oa == 1.0 > gl.aggregate.oa

    def test_all_nodata_tile(self):
        v = np.random.default_rng(3).uniform(-1, 1, (10, 10))
        v[:, :5] = np.nan
        local = local_optimal_map(grid_of(v), mask_of(v > 0), 2, 1)
        assert local.thresholds[0] is None and not local.mask.bits[:, :5].any()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5))
    def test_local_dominates_per_tile(self, seed, nx, ny):
        rng = np.random.default_rng(seed)
        v = rng.uniform(-1, 1, (20, 20)) + rng.uniform(-0.3, 0.3)
        truth = mask_of(rng.random((20, 20)) < 0.5)
        index = grid_of(np.clip(v, -1, 1))
        g = optimal_threshold(index, truth)
        local = local_optimal_map(index, truth, nx, ny)
        for tile in tile_slices((20, 20), nx, ny):
            w = (tile.rows, tile.cols)
            oa_g = np.mean(threshold_map(index, g.threshold).bits[w] == truth.bits[w])
            oa_l = np.mean(local.mask.bits[w] == truth.bits[w])
            assert oa_l >= oa_g
        assert confusion(local.mask, truth).oa >= g.oa - 1e-12
