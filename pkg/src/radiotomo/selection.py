"""Sensor-pair selection by expected entropy reduction, and the adaptive
measure/reconstruct loop.

The score of a candidate weight vector ``w`` is

    h(w) = sum_i sum_k q_k(i) ln(1 + phi_nu * var_k(i) * w_i^2)

which equals ``E_{z ~ q}[ln |I + phi_nu diag(w*w) diag(var_z)|]``, i.e.
twice the expected entropy reduction of the diagonal variational
covariance. The factor of two does not change any ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .geometry import Geometry, Link, SparseColumn, as_sparse_column
from .measurements import MeasurementSet
from .synthesis import PottsParams, random_links
from .vb import HyperPriors, VariationalState, VbEstimates, run_vb


class EmptyPoolError(ValueError):
    pass


@dataclass(frozen=True)
class CandidatePool:
    """Sensor pairs available in one slot, with their weight columns.

    ``keys`` identifies where each candidate came from (an index into a
    measurement log in real-data mode, or the draw order otherwise).
    """

    pairs: tuple[Link, ...]
    columns: tuple[SparseColumn, ...]
    keys: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.pairs) != len(self.columns):
            raise ValueError("pairs and columns differ in length")
        if not self.keys:
            object.__setattr__(self, "keys", tuple(range(len(self.pairs))))
        elif len(self.keys) != len(self.pairs):
            raise ValueError("keys and pairs differ in length")

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_links(cls, geometry: Geometry, links, keys=()) -> "CandidatePool":
        links = tuple(links)
        cols = tuple(geometry.weight_vector(link, sparse=True) for link in links)
        return cls(links, cols, tuple(keys))


class SelectionScore(NamedTuple):
    pair: Link
    score: float


def score_pair(w, state: VariationalState) -> float:
    """Expected log-determinant gain of measuring along ``w``."""
    col = as_sparse_column(w)
    if col.is_zero:
        return 0.0
    q = state.label_prob[col.indices]
    var = state.field_var[col.indices]
    gain = np.log1p(state.noise_precision * var * (col.values**2)[:, None])
    return float(np.sum(q * gain))


def score_pool(pool: CandidatePool, state: VariationalState) -> np.ndarray:
    """Scores of every candidate, evaluated in one vectorized pass."""
    if len(pool) == 0:
        return np.zeros(0)
    idx = np.concatenate([c.indices for c in pool.columns])
    vals = np.concatenate([c.values for c in pool.columns])
    owner = np.repeat(np.arange(len(pool)), [len(c.indices) for c in pool.columns])
    q = state.label_prob[idx]
    gain = np.log1p(state.noise_precision * state.field_var[idx] * (vals**2)[:, None])
    per_site = np.sum(q * gain, axis=1)
    return np.bincount(owner, weights=per_site, minlength=len(pool))


def rank_pool(pool: CandidatePool, scores) -> np.ndarray:
    """Candidate positions sorted by descending score, ties by ``(n, n')``."""
    scores = np.asarray(scores, dtype=float)
    order = sorted(
        range(len(pool)),
        key=lambda j: (-scores[j], pool.pairs[j].tx, pool.pairs[j].rx, j),
    )
    return np.asarray(order, dtype=np.int64)


def select_batch(pool: CandidatePool, state: VariationalState, batch: int) -> list[int]:
    """Positions in ``pool`` of the ``batch`` highest-scoring candidates."""
    if len(pool) == 0:
        raise EmptyPoolError("cannot select from an empty candidate pool")
    if not 1 <= batch <= len(pool):
        raise ValueError(f"batch must be in [1, {len(pool)}], got {batch}")
    return rank_pool(pool, score_pool(pool, state))[:batch].tolist()


class EntropyReduction(NamedTuple):
    determinant: float
    diagonal: float


def entropy_reduction_exact(w, z, state: VariationalState, phi_nu: float | None = None) -> EntropyReduction:
    """Half log-determinant gain at a fixed labeling ``z``, computed two ways.

    ``determinant`` differences the log-determinants of the dense
    precision matrices before and after adding ``phi_nu * diag(w*w)``;
    ``diagonal`` is the closed-form sum over sites.
    """
    w = np.asarray(as_sparse_column(w).dense(state.n_points) if isinstance(w, SparseColumn) else w, dtype=float)
    z = np.asarray(z, dtype=np.int64)
    phi = state.noise_precision if phi_nu is None else float(phi_nu)
    var = state.field_var[np.arange(state.n_points), z]
    prec_before = np.diag(1.0 / var)
    prec_after = prec_before + phi * np.diag(w * w)
    _, ld_after = np.linalg.slogdet(prec_after)
    _, ld_before = np.linalg.slogdet(prec_before)
    det_route = 0.5 * (ld_after - ld_before)
    diag_route = 0.5 * float(np.sum(np.log1p(phi * var * w * w)))
    return EntropyReduction(float(det_route), diag_route)


def rank_one_entropy_reduction(w, cov, phi_nu: float) -> EntropyReduction:
    """Dense-covariance version: ``1/2 ln(1 + phi w^T C w)`` against direct determinants."""
    w = np.asarray(w, dtype=float)
    cov = np.asarray(cov, dtype=float)
    prec = np.linalg.inv(cov)
    _, ld_after = np.linalg.slogdet(prec + phi_nu * np.outer(w, w))
    _, ld_before = np.linalg.slogdet(prec)
    lemma = 0.5 * math.log1p(phi_nu * float(w @ cov @ w))
    return EntropyReduction(float(0.5 * (ld_after - ld_before)), lemma)


class Acquirer(Protocol):
    """Source of new measurements: a simulator or a recorded log."""

    def draw_pool(self, size: int, rng: np.random.Generator) -> CandidatePool: ...

    def acquire(self, pool: CandidatePool, chosen: list[int]) -> list[float]: ...


class SyntheticAcquirer:
    """Measures a known field through the forward model with Gaussian noise.

    Pools are drawn uniformly with replacement over ordered sensor pairs.
    """

    def __init__(self, geometry: Geometry, f_true, noise_precision: float, seed: int):
        if not noise_precision > 0:
            raise ValueError("noise precision must be positive")
        self.geometry = geometry
        self.f_true = np.asarray(f_true, dtype=float)
        self.noise_sd = 1.0 / math.sqrt(noise_precision)
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def draw_pool(self, size: int, rng: np.random.Generator) -> CandidatePool:
        return CandidatePool.from_links(self.geometry, random_links(self.geometry.sensors.N, size, rng))

    def acquire(self, pool: CandidatePool, chosen: list[int]) -> list[float]:
        self.calls += 1
        out = []
        for j in chosen:
            col = pool.columns[j]
            clean = float(col.values @ self.f_true[col.indices])
            out.append(clean + self.noise_sd * float(self._rng.standard_normal()))
        return out


class LogAcquirer:
    """Serves measurements from a recorded log, each entry at most once.

    Pools are drawn without replacement from entries not yet used.
    """

    def __init__(self, log: MeasurementSet, used=()):
        self.log = log
        self.used = set(int(u) for u in used)

    @property
    def remaining(self) -> int:
        return self.log.t - len(self.used)

    def draw_pool(self, size: int, rng: np.random.Generator) -> CandidatePool:
        free = np.array(sorted(set(range(self.log.t)) - self.used), dtype=np.int64)
        if len(free) == 0:
            return CandidatePool((), (), ())
        pick = np.sort(rng.choice(free, size=min(size, len(free)), replace=False))
        cols = self.log.weights.columns
        return CandidatePool(
            tuple(self.log.links[i] for i in pick), tuple(cols[i] for i in pick), tuple(int(i) for i in pick)
        )

    def acquire(self, pool: CandidatePool, chosen: list[int]) -> list[float]:
        s = self.log.shadowing
        out = []
        for j in chosen:
            key = pool.keys[j]
            if key in self.used:
                raise ValueError(f"log entry {key} was already used")
            self.used.add(key)
            out.append(float(s[key]))
        return out


@dataclass(frozen=True)
class AdaptiveSchedule:
    slots: int
    pool_size: int
    batch: int
    pool_seed: int = 0
    mode: str = "adaptive"

    def __post_init__(self):
        if self.slots < 0:
            raise ValueError("slots must be >= 0")
        if self.pool_size < 1 or self.batch < 1:
            raise ValueError("pool_size and batch must be >= 1")
        if self.batch > self.pool_size:
            raise ValueError("batch cannot exceed pool_size")
        if self.mode not in ("adaptive", "random"):
            raise ValueError(f"mode must be 'adaptive' or 'random', got {self.mode!r}")


@dataclass(frozen=True)
class VbSettings:
    n_iter: int = 3000
    xi: float = 1e-6
    seed: int = 0
    schedule: str = "sequential"
    warm_start: bool = True
    field_sweeps: int = 1


@dataclass
class SlotRecord:
    tau: int
    t: int
    elbo_final: float
    iterations: int
    estimates: VbEstimates
    labeling_error: float | None = None
    selected: list[Link] = field(default_factory=list)


@dataclass
class Trajectory:
    records: list[SlotRecord]
    data: MeasurementSet
    state: VariationalState
    status: str = "completed"

    @property
    def labeling_errors(self) -> list[float | None]:
        return [r.labeling_error for r in self.records]


def run_adaptive(
    data: MeasurementSet,
    grid,
    priors: HyperPriors,
    params: PottsParams,
    schedule: AdaptiveSchedule,
    acquirer: Acquirer,
    vb: VbSettings = VbSettings(),
    truth_labels=None,
) -> Trajectory:
    """Alternate reconstruction and pair selection for ``schedule.slots`` slots.

    Slot 0 reconstructs from ``data`` alone. Each later slot draws a pool,
    picks ``batch`` pairs (highest score in adaptive mode, the first
    ``batch`` pool entries in random mode), acquires them in pool order,
    appends them,
    and reconstructs again. In random mode the pool itself is the random
    sample, so both modes share the same pool stream for a given seed.
    """
    if data.t == 0:
        raise ValueError("run_adaptive needs a nonempty initial measurement set")
    data = data.copy()
    rng = np.random.default_rng(schedule.pool_seed)
    truth = None if truth_labels is None else np.asarray(truth_labels)

    def reconstruct(state, tau, selected):
        res = run_vb(
            data, grid, priors, params, n_iter=vb.n_iter, xi=vb.xi, seed=vb.seed,
            state=state, schedule=vb.schedule, field_sweeps=vb.field_sweeps,
        )
        err = None if truth is None else float(np.mean(res.estimates.z_map != truth))
        rec = SlotRecord(tau, data.t, res.elbo_trace[-1], len(res.elbo_trace) - 1, res.estimates, err, selected)
        return res.state, rec

    state, rec = reconstruct(None, 0, [])
    records = [rec]
    status = "completed"
    for tau in range(1, schedule.slots + 1):
        pool = acquirer.draw_pool(schedule.pool_size, rng)
        if len(pool) == 0:
            status = f"pool exhausted before slot {tau}"
            break
        batch = min(schedule.batch, len(pool))
        if schedule.mode == "adaptive":
            # acquire in pool order so the data path depends only on which
            # pairs were chosen, not on their rank
            chosen = sorted(select_batch(pool, state, batch))
        else:
            chosen = list(range(batch))
        values = acquirer.acquire(pool, chosen)
        picked = [pool.pairs[j] for j in chosen]
        data.extend(picked, [pool.columns[j] for j in chosen], values)
        state, rec = reconstruct(state if vb.warm_start else None, tau, picked)
        records.append(rec)
    return Trajectory(records, data, state, status)
