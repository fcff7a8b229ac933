"""Tests for metrics and gain maps, plus the Monte Carlo harness."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiotomo.evaluation import (
    ZeroShadowError,
    boundary_pairs,
    build_gain_map,
    channel_gain,
    labeling_error,
    nmse,
    run_mc,
    shadow_function,
)
from radiotomo.geometry import Grid, ellipse_weights
from radiotomo.synthesis import PathlossParams

PL = PathlossParams(54.6, 0.276)


def toy_experiment(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {"a": rng.normal(size=3), "b": [float(seed)] * 3}


def flaky_experiment(seed: int) -> dict:
    if seed % 3 == 0:
        raise RuntimeError(f"boom {seed}")
    return {"x": [seed, 2 * seed]}


PERM = {10 + r: 10 + p for r, p in enumerate([3, 0, 4, 1, 2])}


def permuted_experiment(seed: int) -> dict:
    return toy_experiment(PERM[seed])


class TestLabelingError:
    """Mismatch fraction between label fields."""

    def test_identical(self):
        assert labeling_error([0, 1, 2, 1], [0, 1, 2, 1]) == 0.0

    def test_disjoint(self):
        assert labeling_error([0, 0, 1], [1, 1, 0]) == 1.0

    def test_one_of_four(self):
        assert labeling_error([0, 1, 1, 0], [0, 1, 0, 0]) == 0.25

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            labeling_error([0, 1], [0, 1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_symmetric_and_relabeling_invariant(self, seed, K):
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, K, 40), rng.integers(0, K, 40)
        perm = rng.permutation(K)
        e = labeling_error(a, b)
        assert e == labeling_error(b, a) == labeling_error(perm[a], perm[b])
        assert (e == 0) == np.array_equal(a, b)


class TestNmse:
    """Normalized shadowing error over random boundary pairs."""

    def setup_method(self):
        self.grid = Grid(8, 8)
        rng = np.random.default_rng(0)
        self.f = rng.normal(1.0, 1.0, 64)
        self.g = self.f + rng.normal(0, 0.3, 64)
        self.truth = shadow_function(self.f, self.grid, 0.39)

    def test_truth_is_zero(self):
        assert nmse(self.truth, self.truth, 200, 1, self.grid) == 0.0

    def test_zero_estimate_is_one(self):
        zero = shadow_function(np.zeros(64), self.grid, 0.39)
        assert nmse(self.truth, zero, 200, 1, self.grid) == pytest.approx(1.0, abs=1e-12)

    def test_doubling_errors_quadruples(self):
        est = shadow_function(self.g, self.grid, 0.39)
        worse = shadow_function(self.f + 2 * (self.g - self.f), self.grid, 0.39)
        a = nmse(self.truth, est, 200, 4, self.grid)
        assert nmse(self.truth, worse, 200, 4, self.grid) == pytest.approx(4 * a, rel=1e-10)

    def test_unit_invariance(self):
        est = shadow_function(self.g, self.grid, 0.39)
        a = nmse(self.truth, est, 200, 4, self.grid)
        b = nmse(shadow_function(-3 * self.f, self.grid, 0.39), shadow_function(-3 * self.g, self.grid, 0.39),
                 200, 4, self.grid)
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_truth(self):
        zero = shadow_function(np.zeros(64), self.grid, 0.39)
        with pytest.raises(ZeroShadowError):
            nmse(zero, zero, 20, 0, self.grid)

    def test_boundary_pairs(self):
        pairs = boundary_pairs(self.grid, 50, 3)
        x0, x1, y0, y1 = self.grid.area
        for a, b in pairs:
            assert not np.array_equal(a, b)
            for p in (a, b):
                assert math.isclose(p[0], x0) or math.isclose(p[0], x1) or math.isclose(p[1], y0) \
                    or math.isclose(p[1], y1)
        with pytest.raises(ValueError):
            boundary_pairs(self.grid, 0, 0)


class TestGainMap:
    """Shadowing and channel-gain maps toward a receiver."""

    def test_zero_field_is_pathloss(self):
        grid = Grid(5, 5)
        gm = build_gain_map(np.zeros(25), (2.5, 3.2), PL, grid, 0.39)
        d = np.hypot(*(grid.points - gm.rx).T)
        np.testing.assert_array_equal(gm.gains, PL.pathloss(d))
        assert not gm.missing.any()

    def test_identity_holds_entrywise(self, rng):
        grid = Grid(6, 4)
        gm = build_gain_map(rng.normal(size=24), (3.3, 2.1), PL, grid, 0.5)
        np.testing.assert_array_equal(gm.gains, gm.pathloss - gm.shadow)

    def test_constant_offset_on_support(self, rng):
        grid = Grid(6, 6)
        rx = np.array([3.4, 3.7])
        f = rng.normal(size=36)
        c = 0.8
        base = build_gain_map(f, rx, PL, grid, 0.39)
        shifted = build_gain_map(f + c, rx, PL, grid, 0.39)
        for i, p in enumerate(grid.points):
            sw = ellipse_weights(p, rx, grid.points, 0.39).sum()
            assert shifted.gains[i] == pytest.approx(base.gains[i] - c * sw, abs=1e-10)

    def test_mid_link_hand_value(self):
        grid = Grid(1, 1, 4.0, (2.0, 0.0))
        s = shadow_function([2.0], grid, 0.39)((0.0, 0.0), (4.0, 0.0))
        g = channel_gain([2.0], (0.0, 0.0), (4.0, 0.0), PL, grid, 0.39)
        assert s == pytest.approx(1.0, abs=1e-15)
        assert g == pytest.approx(54.6 - 2.76 * math.log10(4) - 1.0, abs=1e-12)
        assert g == pytest.approx(51.938, abs=5e-4)

    def test_map_entries_are_channel_gains(self, rng):
        grid = Grid(4, 4)
        f = rng.normal(size=16)
        gm = build_gain_map(f, (2.2, 1.9), PL, grid, 0.6)
        for i, p in enumerate(grid.points):
            assert gm.gains[i] == pytest.approx(channel_gain(f, p, gm.rx, PL, grid, 0.6), abs=1e-12)

    def test_receiver_on_grid_point_flagged(self):
        grid = Grid(3, 3)
        gm = build_gain_map(np.ones(9), (2.0, 2.0), PL, grid, 0.39)
        assert gm.missing.sum() == 1 and gm.missing[4]
        assert np.isnan(gm.gains[4]) and np.isfinite(np.delete(gm.gains, 4)).all()

    def test_receiver_outside(self):
        with pytest.raises(ValueError):
            build_gain_map(np.ones(4), (50.0, 0.0), PL, Grid(2, 2), 0.39)


class TestRunMc:
    """Aggregation over Monte Carlo runs."""

    def test_single_run(self):
        rep = run_mc(toy_experiment, 1, 7)
        np.testing.assert_array_equal(rep.mean("a"), toy_experiment(7)["a"])
        np.testing.assert_array_equal(rep.std("a"), 0.0)

    def test_seed_permutation_leaves_mean(self):
        a = run_mc(toy_experiment, 5, 10)
        b = run_mc(permuted_experiment, 5, 10)
        np.testing.assert_allclose(a.mean("a"), b.mean("a"), rtol=1e-14)
        np.testing.assert_allclose(a.std("a"), b.std("a"), rtol=1e-12)

    def test_failures_excluded(self):
        rep = run_mc(flaky_experiment, 6, 0)
        assert rep.seeds == [1, 2, 4, 5]
        assert [s for s, _ in rep.failures] == [0, 3] and "boom 3" in rep.failures[1][1]
        np.testing.assert_allclose(rep.mean("x"), [3.0, 6.0])

    def test_rows_recomputable(self):
        rep = run_mc(toy_experiment, 4, 0)
        for metric, slot, mu, sd in rep.rows():
            vals = [toy_experiment(s)[metric][slot] for s in rep.seeds]
            assert mu == pytest.approx(np.mean(vals)) and sd == pytest.approx(np.std(vals))

    def test_workers_agree(self):
        serial = run_mc(toy_experiment, 4, 3)
        parallel = run_mc(toy_experiment, 4, 3, workers=2)
        np.testing.assert_array_equal(serial.stacked("a"), parallel.stacked("a"))

    def test_runs_validated(self):
        with pytest.raises(ValueError):
            run_mc(toy_experiment, 0, 0)
