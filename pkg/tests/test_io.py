"""Tests for file formats and their round trips."""

from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import random_state
from radiotomo import io as rio
from radiotomo.geometry import Geometry, Grid, Link, boundary_sensors
from radiotomo.synthesis import PottsParams, random_links, synthesize_measurements
from radiotomo.vb import HyperPriors, run_vb


@pytest.fixture
def geo():
    grid = Grid(5, 3)
    return Geometry(grid, boundary_sensors(grid, 8), 0.39)


class TestGridFiles:
    """Field and label CSV grids."""

    def test_layout(self, tmp_path):
        F = np.arange(12, dtype=float).reshape(4, 3)  # nx=4, ny=3
        x = F.reshape(-1, order="F")
        rio.write_field_csv(tmp_path / "f.csv", x, 4, 3)
        rows = (tmp_path / "f.csv").read_text().splitlines()
        assert len(rows) == 3 and all(len(r.split(",")) == 4 for r in rows)
        assert float(rows[2].split(",")[1]) == F[1, 2]

    def test_field_roundtrip_exact(self, tmp_path, rng):
        x = rng.normal(size=15) * 1e3
        rio.write_field_csv(tmp_path / "a.csv", x, 5, 3, {"seed": 1})
        back, nx, ny = rio.read_field_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back, x)
        assert (nx, ny) == (5, 3)
        rio.write_field_csv(tmp_path / "b.csv", back, nx, ny, {"seed": 1})
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        side = json.loads((tmp_path / "a.csv.json").read_text())
        assert side == {"nx": 5, "ny": 3, "seed": 1}

    def test_labels_one_based_on_disk(self, tmp_path):
        z = np.array([0, 1, 2, 1, 0, 0])
        rio.write_labels_csv(tmp_path / "z.csv", z, 3, 2)
        assert (tmp_path / "z.csv").read_text() == "1,2,3\n2,1,1\n"
        back, nx, ny = rio.read_labels_csv(tmp_path / "z.csv")
        np.testing.assert_array_equal(back, z)

    def test_ragged_rows(self, tmp_path):
        (tmp_path / "bad.csv").write_text("1.0,2.0\n3.0\n")
        with pytest.raises(rio.ParseError) as info:
            rio.read_field_csv(tmp_path / "bad.csv")
        assert info.value.line == 2

    def test_bad_number(self, tmp_path):
        (tmp_path / "bad.csv").write_text("1.0,2.0\n3.0,x\n")
        with pytest.raises(rio.ParseError, match=":2:"):
            rio.read_field_csv(tmp_path / "bad.csv")

    def test_zero_label_rejected(self, tmp_path):
        (tmp_path / "z.csv").write_text("0,1\n")
        with pytest.raises(rio.ParseError):
            rio.read_labels_csv(tmp_path / "z.csv")

    def test_wrong_size(self, tmp_path):
        with pytest.raises(ValueError):
            rio.write_field_csv(tmp_path / "f.csv", np.zeros(5), 2, 3)


class TestMeasurementLog:
    """The tau, n, n', shadowing log."""

    def test_roundtrip(self, tmp_path, geo, rng):
        links = random_links(8, 25, rng)
        data = synthesize_measurements(rng.normal(size=15), links, geo, 20.0, 0)
        taus = [0] * 10 + [1] * 15
        rio.write_measurement_log(tmp_path / "m.csv", data, taus)
        back, back_taus = rio.read_measurement_log(tmp_path / "m.csv", geo)
        assert back.links == data.links and back_taus == taus
        np.testing.assert_array_equal(back.shadowing, data.shadowing)
        np.testing.assert_array_equal(back.weights.dense(), data.weights.dense())
        rio.write_measurement_log(tmp_path / "m2.csv", back, back_taus)
        assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()

    def test_indices_one_based(self, tmp_path, geo):
        data = synthesize_measurements(np.zeros(15), [Link(0, 7)], geo, 1e300, 0)
        rio.write_measurement_log(tmp_path / "m.csv", data)
        assert (tmp_path / "m.csv").read_text().splitlines()[1].startswith("0,1,8,")

    @pytest.mark.parametrize(
        "body, line",
        [("tau,n,n_prime,shadowing\n0,1,2,0.5\n0,1,9,0.1\n", 3),
         ("tau,n,n_prime,shadowing\n0,3,3,0.5\n", 2),
         ("tau,n,n_prime,shadowing\n0,1,2\n", 2),
         ("tau,n,n_prime,shadowing\n0,1,2,abc\n", 2),
         ("t,n,m,s\n", 1)],
    )
    def test_parse_errors_carry_line(self, tmp_path, geo, body, line):
        (tmp_path / "m.csv").write_text(body)
        with pytest.raises(rio.ParseError) as info:
            rio.read_measurement_log(tmp_path / "m.csv", geo)
        assert info.value.line == line


class TestCheckpoint:
    """Variational state checkpoints."""

    def test_write_read_write_identical(self, tmp_path, rng):
        st = random_state(rng, 7, 3)
        rio.write_checkpoint(tmp_path / "a.txt", st, 12, [-5.0, -1.25, 0.1], False)
        back, header = rio.read_checkpoint(tmp_path / "a.txt")
        rio.write_checkpoint(tmp_path / "b.txt", back, header["iteration"], header["elbo_trace"],
                             header["converged"])
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        for name in ("field_mean", "field_var", "label_prob", "mean_mean", "prec_scale"):
            np.testing.assert_array_equal(getattr(back, name), getattr(st, name))
        assert back.noise_scale == st.noise_scale and header["n_points"] == 7 and header["K"] == 3

    def test_resume_from_file_matches(self, tmp_path, geo, rng):
        data = synthesize_measurements(rng.normal(size=15), random_links(8, 30, rng), geo, 10.0, 1)
        priors = HyperPriors(2.0, 5.0, [0.0, 2.0], 1.0, 1.0, 1.0)
        params = PottsParams(0.5, 2)
        half = run_vb(data, geo.grid, priors, params, n_iter=10, xi=1e-300, seed=3)
        rio.write_checkpoint(tmp_path / "c.txt", half.state, 10, half.elbo_trace, half.converged)
        st, _ = rio.read_checkpoint(tmp_path / "c.txt")
        a = run_vb(data, geo.grid, priors, params, n_iter=10, xi=1e-300, state=st)
        b = run_vb(data, geo.grid, priors, params, n_iter=10, xi=1e-300, state=half.state)
        np.testing.assert_array_equal(a.state.field_mean, b.state.field_mean)

    def test_truncated(self, tmp_path, rng):
        text = rio.checkpoint_text(random_state(rng, 4, 2), 0, [0.0], False)
        (tmp_path / "c.txt").write_text("\n".join(text.splitlines()[:5]) + "\n")
        with pytest.raises(rio.ParseError):
            rio.read_checkpoint(tmp_path / "c.txt")

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.txt").write_text('{"format": "other"}\n')
        with pytest.raises(rio.ParseError) as info:
            rio.read_checkpoint(tmp_path / "c.txt")
        assert info.value.line == 1


class TestOtherFiles:
    """Scene files and report tables."""

    def test_scene_roundtrip(self, tmp_path, geo):
        rio.write_scene(tmp_path / "s.json", geo)
        back = rio.read_scene(tmp_path / "s.json")
        assert back.grid == geo.grid and back.lam == geo.lam
        np.testing.assert_array_equal(back.sensors.positions, geo.sensors.positions)

    def test_scene_missing_field(self, tmp_path):
        (tmp_path / "s.json").write_text('{"grid": {"nx": 2, "ny": 2}, "sensors": [[1, 1], [2, 2]]}')
        with pytest.raises(rio.ParseError, match="lambda"):
            rio.read_scene(tmp_path / "s.json")

    def test_report_csv(self, tmp_path):
        rio.write_report_csv(tmp_path / "r.csv", [("nmse", 0, 0.5, 0.1), ("nmse", 1, 0.25, 0.05)])
        assert (tmp_path / "r.csv").read_text() == "metric,slot,mean,std\nnmse,0,0.5,0.1\nnmse,1,0.25,0.05\n"

    def test_config_hash_is_order_free(self):
        assert rio.config_hash({"a": 1, "b": [1, 2]}) == rio.config_hash({"b": [1, 2], "a": 1})
