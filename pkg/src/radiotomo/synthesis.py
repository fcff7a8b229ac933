"""Synthetic scenes: Potts label fields, piecewise-Gaussian loss fields,
noisy shadowing measurements, and pathloss calibration.

Labels are 0-based integers internally (``0..K-1``); files written by
:mod:`radiotomo.io` use ``1..K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Geometry, Grid, Link
from .measurements import MeasurementSet


class InvalidHyperparameterError(ValueError):
    pass


@dataclass(frozen=True)
class PottsParams:
    """Potts prior with coupling ``beta`` per undirected 4-neighbor edge."""

    beta: float
    K: int

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("Potts model needs K >= 2")
        if not math.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and non-negative")


@dataclass(frozen=True)
class HyperParams:
    noise_precision: float
    class_means: np.ndarray
    class_precisions: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=float).reshape(-1)
        precs = np.asarray(self.class_precisions, dtype=float).reshape(-1)
        if len(means) != len(precs):
            raise InvalidHyperparameterError("class means and precisions differ in length")
        if not self.noise_precision > 0 or not np.all(precs > 0):
            raise InvalidHyperparameterError("precisions must be positive")
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_precisions", precs)
        object.__setattr__(self, "noise_precision", float(self.noise_precision))

    @property
    def K(self) -> int:
        return len(self.class_means)

    def to_dict(self) -> dict:
        return {
            "noise_precision": self.noise_precision,
            "class_means": self.class_means.tolist(),
            "class_precisions": self.class_precisions.tolist(),
        }


@dataclass(frozen=True)
class PathlossParams:
    g0: float
    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("pathloss exponent must be non-negative")

    def pathloss(self, d) -> np.ndarray:
        """``g0 - 10 gamma log10 d``: the gain without shadowing."""
        return self.g0 - self.gamma * 10.0 * np.log10(d)


def potts_conditional(labels, site: int, params: PottsParams, grid: Grid) -> np.ndarray:
    """Full conditional of ``labels[site]`` given its 4-neighbors."""
    labels = np.asarray(labels)
    nb = grid.neighbors()[site]
    counts = np.bincount(labels[nb[nb >= 0]], minlength=params.K)[: params.K]
    logits = params.beta * counts
    p = np.exp(logits - logits.max())
    return p / p.sum()


def sample_potts_chains(
    grid: Grid,
    params: PottsParams,
    sweeps: int,
    n_chains: int,
    seed: int,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Run ``n_chains`` independent raster-scan Gibbs chains.

    Chains start uniformly at random unless ``init`` (``(n_chains, N_g)``)
    is given. Returns the final states, shape ``(n_chains, N_g)``.
    """
    rng = np.random.default_rng(seed)
    N = grid.n_points
    if init is None:
        states = rng.integers(0, params.K, size=(n_chains, N)).astype(np.int64)
    else:
        states = np.array(init, dtype=np.int64).reshape(n_chains, N)
    nbr = grid.neighbors()
    for _ in range(sweeps):
        u = rng.random((n_chains, N))
        _kernels.potts_sweep(states, nbr, float(params.beta), int(params.K), u)
    return states


def sample_potts(grid: Grid, params: PottsParams, sweeps: int = 500, seed: int = 0) -> np.ndarray:
    """A label field after ``sweeps`` Gibbs sweeps from a uniform random start."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    return sample_potts_chains(grid, params, sweeps, 1, seed)[0]


def sample_slf(labels, hp: HyperParams, seed: int) -> np.ndarray:
    """Draw ``f_i ~ N(mu_{z_i}, 1/phi_{z_i})`` independently given the labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= hp.K):
        raise ValueError("label out of range for the given hyperparameters")
    rng = np.random.default_rng(seed)
    sd = 1.0 / np.sqrt(hp.class_precisions[labels])
    return hp.class_means[labels] + sd * rng.standard_normal(labels.shape)


def synthesize_measurements(
    f, links, geometry: Geometry, hp: HyperParams | float, seed: int
) -> MeasurementSet:
    """Noisy shadowing ``s = w^T f + nu`` with ``nu ~ N(0, 1/phi_nu)``.

    The calibrated measurement is ``s - nu``; zero-mean symmetric noise
    makes either sign equivalent in distribution.
    """
    phi = hp.noise_precision if isinstance(hp, HyperParams) else float(hp)
    if not phi > 0:
        raise InvalidHyperparameterError("noise precision must be positive")
    f = np.asarray(f, dtype=float)
    links = list(links)
    W = geometry.weight_matrix(links)
    clean = np.array([c.values @ f[c.indices] for c in W.columns])
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(links)) / math.sqrt(phi)
    return MeasurementSet.from_arrays(W, clean + noise, links)


def random_links(n_sensors: int, count: int, rng: np.random.Generator) -> list[Link]:
    """Ordered sensor pairs drawn uniformly with replacement, ``tx != rx``."""
    tx = rng.integers(0, n_sensors, size=count)
    off = rng.integers(1, n_sensors, size=count)
    rx = (tx + off) % n_sensors
    return [Link(int(a), int(b)) for a, b in zip(tx, rx)]


def calibrate_pathloss(free_space_gains) -> PathlossParams:
    """Least-squares fit of ``g = g0 - gamma * 10 log10 d`` to (d, g) pairs."""
    arr = np.asarray(free_space_gains, dtype=float).reshape(-1, 2)
    d, g = arr[:, 0], arr[:, 1]
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    if len(np.unique(d)) < 2:
        raise np.linalg.LinAlgError("calibration needs at least two distinct distances")
    A = np.column_stack([np.ones_like(d), -10.0 * np.log10(d)])
    (g0, gamma), *_ = np.linalg.lstsq(A, g, rcond=None)
    if -1e-12 < gamma < 0:
        gamma = 0.0
    return PathlossParams(float(g0), float(gamma))


def calibrated_shadowing(raw_gain, distance, pl: PathlossParams):
    """Shadowing estimate left after removing the pathloss from a raw gain."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("link distance must be positive")
    out = pl.pathloss(distance) - np.asarray(raw_gain, dtype=float)
    return float(out) if out.ndim == 0 else out
