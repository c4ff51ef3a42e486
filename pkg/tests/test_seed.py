from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from conftest import make_georef, mask_of
from lidarwater.errors import EmptySceneError, GeorefMismatchError
from lidarwater.raster import BitMask
from lidarwater.seed import (
    DensityStats,
    SeedParams,
    apply_building_buffer,
    classify_seeds,
    density_stats,
    exact_binomial_quantile,
    max_water_counts,
    normal_lower_bound,
    window_counts,
)


def occ_with_fraction(p, shape=(100, 100), seed=0):
    """Occupancy mask with exactly round(p * size) occupied cells."""
    bits = np.zeros(shape, dtype=bool)
    k = round(p * bits.size)
    idx = np.random.default_rng(seed).permutation(bits.size)[:k]
    bits.flat[idx] = True
    return mask_of(bits)


class TestParams:
    @pytest.mark.parametrize("bad", [dict(window_side=8), dict(window_side=1), dict(z_score=0),
                                     dict(building_buffer_radius=-1), dict(density_denominator="area")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            SeedParams(**bad)


class TestDensityStats:
    def test_p09_halved(self):
        st_ = density_stats(occ_with_fraction(0.9), SeedParams())
        assert st_.p_global == 0.9 and st_.p_test == 0.45
        mu, sigma = 81 * 0.45, math.sqrt(81 * 0.45 * 0.55)
        assert mu == pytest.approx(36.45) and sigma == pytest.approx(4.4774, abs=1e-4)
        assert st_.threshold_real == pytest.approx(27.495, abs=1e-3)

    def test_full_occupancy_halved(self):
        st_ = density_stats(occ_with_fraction(1.0), SeedParams())
        assert st_.p_test == 0.5 and st_.threshold_real == 31.5

    def test_full_occupancy_no_halving_sigma_zero(self):
        params = SeedParams(density_halving=False)
        st_ = density_stats(occ_with_fraction(1.0), params)
        assert st_.threshold_real == 81.0
        assert not classify_seeds(occ_with_fraction(1.0), st_, params).bits.any()

    def test_z_to_zero(self):
        st_ = density_stats(occ_with_fraction(0.6), SeedParams(z_score=1e-300))
        assert st_.threshold_real == 81 * 0.3

    def test_empty_scene(self):
        with pytest.raises(EmptySceneError, match="empty scene"):
            density_stats(BitMask.zeros(make_georef(5, 5)))

    def test_hull_denominator(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[5:15, 5:15] = True
        params = SeedParams(density_denominator="hull")
        assert density_stats(mask_of(bits), params).p_global == 1.0
        assert density_stats(mask_of(bits)).p_global == 0.25

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 1.0), st.booleans())
    def test_order_invariant(self, p, halving):
        st_ = density_stats(occ_with_fraction(p, (30, 30)), SeedParams(density_halving=halving))
        assert 0 <= st_.p_test <= st_.p_global <= 1


class TestThresholds:
    def test_exact_quantile_against_comb_oracle(self):
        for n in (1, 9, 25, 49, 81):
            for p in (0.05, 0.3, 0.45, 0.5):
                for z in (1.0, 2.0, 3.0):
                    assert exact_binomial_quantile(n, p, z) == oracles.exact_quantile(n, p, z)

    def test_n81_boundary(self):
        assert normal_lower_bound(81, 0.45, 2.0) == pytest.approx(27.495113, abs=1e-6)
        assert exact_binomial_quantile(81, 0.45, 2.0) == 27
        assert oracles.binom_cdf(27, 81, 0.45) <= 0.5 * math.erfc(2 / math.sqrt(2)) < oracles.binom_cdf(28, 81, 0.45)

    def test_lut_matches_strict_inequality(self):
        stats_ = DensityStats(0.9, 0.45, 0.0, 81, 0, 0)
        lut = max_water_counts(stats_, SeedParams())
        for n in range(1, 82):
            bound = n * 0.45 - 2 * math.sqrt(n * 0.45 * 0.55)
            below = [k for k in range(n + 1) if k < bound]
            assert lut[n] == (max(below) if below else -1)


class TestClassify:
    def test_all_occupied_no_seeds(self):
        occ = occ_with_fraction(1.0, (30, 30))
        seeds = classify_seeds(occ, density_stats(occ))
        assert seeds.count() == 0

    def test_empty_region_interior_is_water(self):
        rng = np.random.default_rng(1)
        bits = rng.random((100, 100)) < 0.9
        bits[30:60, 40:75] = False
        occ = mask_of(bits)
        stats_ = density_stats(occ)
        seeds = classify_seeds(occ, stats_)
        assert seeds.bits[34:56, 44:71].all()
        want = oracles.seeds_bruteforce(bits, stats_.p_test, 2.0, 9)
        assert np.array_equal(seeds.bits, want)

    def test_isolated_empty_cell_not_water(self):
        bits = np.ones((40, 40), dtype=bool)
        bits[20, 20] = False
        occ = mask_of(bits)
        counts, _ = window_counts(bits, 9)
        assert counts[20, 20] == 80
        assert classify_seeds(occ, density_stats(occ)).count() == 0

    def test_window_counts_match_shift_oracle(self):
        rng = np.random.default_rng(2)
        bits = rng.random((37, 23)) < 0.5
        for side in (3, 5, 9, 11):
            assert all(np.array_equal(a, b) for a, b in zip(window_counts(bits, side), oracles.window_count_shifts(bits, side)))

    @pytest.mark.parametrize("threads", [2, 3, 8])
    def test_threads_do_not_change_result(self, threads):
        rng = np.random.default_rng(3)
        bits = rng.random((157, 91)) < 0.7
        bits[40:90, 10:60] &= rng.random((50, 50)) < 0.1
        occ = mask_of(bits)
        stats_ = density_stats(occ)
        assert classify_seeds(occ, stats_, threads=1) == classify_seeds(occ, stats_, threads=threads)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.bool_, st.tuples(st.integers(1, 25), st.integers(1, 25))),
           st.sampled_from([3, 5, 9]), st.booleans())
    def test_property_matches_oracle(self, bits, side, exact):
        if not bits.any():
            bits = bits.copy()
            bits.flat[0] = True
        params = SeedParams(window_side=side, exact_binomial=exact)
        occ = mask_of(bits)
        stats_ = density_stats(occ, params)
        got = classify_seeds(occ, stats_, params)
        assert np.array_equal(got.bits, oracles.seeds_bruteforce(bits, stats_.p_test, 2.0, side, exact))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_clearing_a_cell_never_removes_water(self, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((30, 30)) < rng.uniform(0.2, 0.9)
        bits[0, 0] = True
        occ = mask_of(bits)
        params = SeedParams()
        stats_ = density_stats(occ, params)
        before = classify_seeds(occ, stats_, params)
        cleared = bits.copy()
        on = np.argwhere(cleared)
        r, c = on[rng.integers(len(on))]
        cleared[r, c] = False
        # same threshold, one fewer occupied cell
        after = classify_seeds(mask_of(cleared), stats_, params)
        assert before.issubset(after)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_z_monotone(self, seed):
        rng = np.random.default_rng(seed)
        occ = mask_of(rng.random((40, 40)) < rng.uniform(0.3, 0.95))
        masks = []
        for z in (3.0, 2.0, 1.0):
            p = SeedParams(z_score=z)
            masks.append(classify_seeds(occ, density_stats(occ, p), p))
        assert masks[0].issubset(masks[1]) and masks[1].issubset(masks[2])


class TestBuildingBuffer:
    def test_radius_zero_clears_building_cells_only(self):
        seeds = mask_of(np.ones((6, 6)))
        b = np.zeros((6, 6), dtype=bool)
        b[2:4, 1:3] = True
        out = apply_building_buffer(seeds, mask_of(b), 0.0)
        assert np.array_equal(out.bits, ~b)

    def test_empty_buildings_identity(self):
        seeds = mask_of(np.random.default_rng(0).random((8, 8)) < 0.5)
        assert apply_building_buffer(seeds, BitMask.zeros(seeds.georef), 10.0) == seeds

    @pytest.mark.parametrize("radius", [2.0, 1.3, 0.5, 3.75])
    def test_single_cell_matches_all_pairs(self, radius):
        n = 21
        seeds = mask_of(np.ones((n, n)))
        b = np.zeros((n, n), dtype=bool)
        b[10, 10] = True
        out = apply_building_buffer(seeds, mask_of(b), radius)
        g = seeds.georef
        want = np.ones((n, n), dtype=bool)
        bx, by = g.cell_center(10, 10)
        for r in range(n):
            for c in range(n):
                x, y = g.cell_center(r, c)
                if math.hypot(x - bx, y - by) <= radius:
                    want[r, c] = False
        assert np.array_equal(out.bits, want)

    def test_many_buildings_all_pairs(self):
        rng = np.random.default_rng(4)
        b = rng.random((30, 30)) < 0.01
        b[0, 29] = True
        seeds = mask_of(rng.random((30, 30)) < 0.8)
        out = apply_building_buffer(seeds, mask_of(b), 1.6)
        centres = np.argwhere(b) * 0.5
        want = seeds.bits.copy()
        for (r, c) in np.argwhere(want):
            if (np.hypot(*(centres - np.array([r, c]) * 0.5).T) <= 1.6).any():
                want[r, c] = False
        assert np.array_equal(out.bits, want)
        assert out.issubset(seeds)

    def test_mismatch(self):
        with pytest.raises(GeorefMismatchError):
            apply_building_buffer(mask_of(np.ones((3, 3))), mask_of(np.ones((3, 4))), 1.0)


def test_stats_are_replaceable():
    # DensityStats is a plain frozen record
    s = DensityStats(0.5, 0.25, 1.0, 81, 10, 20)
    assert dataclasses.replace(s, p_test=0.2).p_test == 0.2
    assert s.as_dict()["denominator_cells"] == 20
