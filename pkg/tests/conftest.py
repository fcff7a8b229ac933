"""Shared builders for small scenes and hand-made variational states."""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from radiotomo.geometry import Geometry, Grid, Link, WeightMatrix, as_sparse_column, boundary_sensors
from radiotomo.measurements import MeasurementSet
from radiotomo.synthesis import HyperParams, PottsParams, random_links, sample_potts, sample_slf, synthesize_measurements
from radiotomo.vb import HyperPriors, VariationalState, init_state, iterate

# Desk-scale scene used by the end-to-end checks: 20x20 grid, two classes.
DESK_GRID = Grid(20, 20)
DESK_SENSORS = 80
DESK_POTTS = PottsParams(0.9, 2)
DESK_TRUTH = HyperParams(20.0, [0.0, 5.5], [10.0, 2.0])
DESK_PRIORS = HyperPriors(1e-3, 1e3, [0.0, 5.3], 0.01, 0.8, [1.0, 0.5])


def desk_geometry() -> Geometry:
    return Geometry(DESK_GRID, boundary_sensors(DESK_GRID, DESK_SENSORS), 0.39)


def desk_scene(r: int, t: int, geometry: Geometry | None = None):
    """Labels, field and ``t`` noisy measurements for Monte Carlo run ``r``."""
    geo = desk_geometry() if geometry is None else geometry
    z = sample_potts(geo.grid, DESK_POTTS, 500, seed=100 + r)
    f = sample_slf(z, DESK_TRUTH, 200 + r)
    links = random_links(geo.sensors.N, t, np.random.default_rng(300 + r))
    data = synthesize_measurements(f, links, geo, DESK_TRUTH, 400 + r)
    return geo, z, f, data


def data_from_columns(W, s) -> MeasurementSet:
    """Measurement set from a dense ``(N_g, t)`` weight array."""
    W = np.asarray(W, dtype=float)
    cols = tuple(as_sparse_column(W[:, j]) for j in range(W.shape[1]))
    return MeasurementSet.from_arrays(WeightMatrix(W.shape[0], cols), s, [Link(0, 1)] * W.shape[1])


def make_state(N: int, K: int, *, field_mean=0.0, field_var=1.0, label_prob=None, noise_shape=1.0,
               noise_scale=1.0, mean_mean=0.0, mean_var=1.0, prec_shape=1.0, prec_scale=1.0) -> VariationalState:
    """A variational state with broadcast entries; caches are left empty."""
    q = np.full((N, K), 1.0 / K) if label_prob is None else np.asarray(label_prob, dtype=float)
    return VariationalState(
        field_mean=np.broadcast_to(np.asarray(field_mean, dtype=float), (N, K)).copy(),
        field_var=np.broadcast_to(np.asarray(field_var, dtype=float), (N, K)).copy(),
        label_prob=q.copy(),
        noise_shape=float(noise_shape),
        noise_scale=float(noise_scale),
        mean_mean=np.broadcast_to(np.asarray(mean_mean, dtype=float), (K,)).copy(),
        mean_var=np.broadcast_to(np.asarray(mean_var, dtype=float), (K,)).copy(),
        prec_shape=np.broadcast_to(np.asarray(prec_shape, dtype=float), (K,)).copy(),
        prec_scale=np.broadcast_to(np.asarray(prec_scale, dtype=float), (K,)).copy(),
    )


def random_state(rng: np.random.Generator, N: int, K: int) -> VariationalState:
    q = rng.dirichlet(np.ones(K), size=N)
    return make_state(
        N, K, field_mean=rng.normal(0, 2, (N, K)), field_var=rng.uniform(0.05, 3.0, (N, K)), label_prob=q,
        noise_shape=rng.uniform(1, 50), noise_scale=rng.uniform(0.05, 2.0),
        mean_mean=rng.normal(0, 2, K), mean_var=rng.uniform(0.01, 1, K),
        prec_shape=rng.uniform(0.5, 5, K), prec_scale=rng.uniform(0.1, 2, K),
    )


def iteration_timer(nx: int, spacing: float, t: int):
    """Callable timing one full update pass on a fixed 20x20 area with ``t`` links."""
    grid = Grid(nx, nx, spacing, (spacing / 2, spacing / 2))
    geo = Geometry(grid, boundary_sensors(grid, 80), 0.39)
    f = np.zeros(grid.n_points)
    data = synthesize_measurements(f, random_links(80, t, np.random.default_rng(0)), geo, 20.0, 0)
    st = init_state(DESK_PRIORS, data, 0)
    iterate(st, data, DESK_PRIORS, DESK_POTTS, grid)

    def one_pass() -> float:
        t0 = time.perf_counter()
        iterate(st, data, DESK_PRIORS, DESK_POTTS, grid)
        return time.perf_counter() - t0

    return one_pass


def cost_ratio(small: tuple[int, float], large: tuple[int, float], t: int = 1600, repeats: int = 31):
    """Per-pass times of two grids, interleaved so load drift hits both alike.

    Returns ``(small_seconds, large_seconds)``, each the minimum over
    ``repeats`` passes, the least noise-sensitive timing statistic.
    """
    a, b = iteration_timer(*small, t), iteration_timer(*large, t)
    ta, tb = [], []
    for _ in range(repeats):
        ta.append(a())
        tb.append(b())
    return min(ta), min(tb)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Outcome of each acceptance criterion, filled in by test_acceptance.py and
# printed as one PASS/FAIL line per criterion at the end of the session.
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"\ncriterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
