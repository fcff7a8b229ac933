"""Metrics and gain maps, plus a Monte Carlo harness."""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Grid, boundary_points, ellipse_weights
from .synthesis import PathlossParams


class ZeroShadowError(ZeroDivisionError):
    """The reference shadowing is identically zero on the sampled pairs."""


def labeling_error(truth, estimate) -> float:
    """Fraction of sites whose labels disagree."""
    truth = np.asarray(truth).reshape(-1)
    estimate = np.asarray(estimate).reshape(-1)
    if truth.shape != estimate.shape:
        raise ValueError(f"label fields differ in length: {truth.size} vs {estimate.size}")
    if truth.size == 0:
        raise ValueError("label fields are empty")
    return float(np.mean(truth != estimate))


def shadow_function(f, grid: Grid, lam: float) -> Callable:
    """``s(x, x') = sum_i w_i(x, x') f_i`` for arbitrary endpoints."""
    f = np.asarray(f, dtype=float)
    pts = grid.points

    def s(x, x2) -> float:
        return float(ellipse_weights(x, x2, pts, lam) @ f)

    return s


def boundary_pairs(grid: Grid, n: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n`` endpoint pairs drawn i.i.d. uniform by arc length on the area boundary."""
    if n < 1:
        raise ValueError("need at least one pair")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        a, b = boundary_points(grid, 2, rng)
        if not np.array_equal(a, b):
            out.append((a, b))
    return out


def nmse(truth_shadow_fn, estimate_shadow_fn, sample_pairs: int, seed: int, grid: Grid) -> float:
    """Mean squared shadowing error over mean squared true shadowing."""
    pairs = boundary_pairs(grid, sample_pairs, seed)
    s_true = np.array([truth_shadow_fn(a, b) for a, b in pairs])
    s_hat = np.array([estimate_shadow_fn(a, b) for a, b in pairs])
    den = float(np.sum(s_true**2))
    if den == 0.0:
        raise ZeroShadowError("true shadowing is zero on every sampled pair")
    return float(np.sum((s_true - s_hat) ** 2) / den)


def channel_gain(f_hat, x, x2, pl: PathlossParams, grid: Grid, lam: float) -> float:
    """Predicted gain in dB between two endpoints: pathloss minus shadowing."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = float(np.hypot(*(x - x2)))
    s = shadow_function(f_hat, grid, lam)(x, x2)
    return float(pl.pathloss(d)) - s


@dataclass
class GainMap:
    """Estimated shadowing and channel gain from every grid point to ``rx``.

    ``missing`` flags grid points that coincide with ``rx``; their gain
    and shadowing are NaN because the pathloss at distance 0 is undefined.
    """

    rx: np.ndarray
    gains: np.ndarray
    shadow: np.ndarray
    missing: np.ndarray
    pathloss: np.ndarray


def build_gain_map(f_hat, rx, pl: PathlossParams, grid: Grid, lam: float) -> GainMap:
    rx = np.asarray(rx, dtype=float)
    if not grid.contains(rx)[0]:
        raise ValueError("receiver must lie inside the grid area")
    f_hat = np.asarray(f_hat, dtype=float)
    pts = grid.points
    d = np.hypot(*(pts - rx).T)
    missing = d == 0.0
    shadow = np.full(grid.n_points, np.nan)
    loss = np.full(grid.n_points, np.nan)
    for i in np.flatnonzero(~missing):
        shadow[i] = ellipse_weights(pts[i], rx, pts, lam) @ f_hat
        loss[i] = pl.pathloss(d[i])
    return GainMap(rx, loss - shadow, shadow, missing, loss)


@dataclass
class McReport:
    """Per-run metric traces plus failures; aggregates are derived on demand."""

    seeds: list[int]
    runs: dict[str, list[np.ndarray]] = field(default_factory=dict)
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def metrics(self) -> list[str]:
        return sorted(self.runs)

    def stacked(self, metric: str) -> np.ndarray:
        return np.vstack([np.atleast_1d(v) for v in self.runs[metric]])

    def mean(self, metric: str) -> np.ndarray:
        return self.stacked(metric).mean(axis=0)

    def std(self, metric: str) -> np.ndarray:
        return self.stacked(metric).std(axis=0)

    def rows(self) -> list[tuple[str, int, float, float]]:
        """``(metric, slot, mean, std)`` for every metric and slot."""
        out = []
        for m in self.metrics:
            for slot, (mu, sd) in enumerate(zip(self.mean(m), self.std(m))):
                out.append((m, slot, float(mu), float(sd)))
        return out


def _guarded(experiment, seed):
    try:
        return seed, experiment(seed), None
    except Exception as exc:  # noqa: BLE001 - failures are reported, not raised
        return seed, None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def run_mc(experiment: Callable[[int], dict], runs: int, base_seed: int, workers: int = 1) -> McReport:
    """Run ``experiment(base_seed + r)`` for ``r < runs`` and collect its traces.

    ``experiment`` returns a mapping from metric name to a per-slot
    sequence. A failing run is recorded in ``failures`` and left out of
    the aggregates.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = [base_seed + r for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_guarded, [experiment] * runs, seeds))
    else:
        results = [_guarded(experiment, s) for s in seeds]
    report = McReport([])
    for seed, out, err in results:
        if err is not None:
            report.failures.append((seed, err))
            continue
        report.seeds.append(seed)
        for k, v in out.items():
            report.runs.setdefault(k, []).append(np.asarray(v, dtype=float))
    return report

