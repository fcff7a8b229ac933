"""Grid geometry and the normalized-ellipse link weight model.

Vectorization convention: a field ``F`` of shape ``(nx, ny)`` is stacked
column by column, so grid point ``(a, b)`` has flat index ``a + nx * b``.
Every module in the package uses this ordering.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class InvalidLinkError(ValueError):
    """A link whose endpoints coincide (zero length)."""


def vec(F: np.ndarray) -> np.ndarray:
    """Stack the columns of ``F`` into one vector."""
    return np.asarray(F).reshape(-1, order="F")


def unvec(x: np.ndarray, nx: int, ny: int) -> np.ndarray:
    return np.asarray(x).reshape((nx, ny), order="F")


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    spacing: float = 1.0
    origin: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid dims must be positive, got {self.nx}x{self.ny}")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def points(self) -> np.ndarray:
        """``(N_g, 2)`` array of grid coordinates in vec order."""
        a = np.tile(np.arange(self.nx), self.ny)
        b = np.repeat(np.arange(self.ny), self.nx)
        return np.column_stack(
            [self.origin[0] + a * self.spacing, self.origin[1] + b * self.spacing]
        )

    @property
    def area(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)``: the grid cells' outer boundary."""
        h = 0.5 * self.spacing
        return (
            self.origin[0] - h,
            self.origin[0] + (self.nx - 1) * self.spacing + h,
            self.origin[1] - h,
            self.origin[1] + (self.ny - 1) * self.spacing + h,
        )

    def contains(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        x0, x1, y0, y1 = self.area
        return (xy[:, 0] >= x0) & (xy[:, 0] <= x1) & (xy[:, 1] >= y0) & (xy[:, 1] <= y1)

    def neighbors(self) -> np.ndarray:
        """``(N_g, 4)`` table of 4-connected neighbor indices, ``-1`` padded (read-only)."""
        return _neighbor_table(self.nx, self.ny)

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of undirected 4-neighbor pairs ``i < j``."""
        nb = self.neighbors()
        i = np.repeat(np.arange(self.n_points), 4)
        j = nb.reshape(-1)
        keep = j > i
        return np.column_stack([i[keep], j[keep]])

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "spacing": self.spacing, "origin": list(self.origin)}


@dataclass(frozen=True)
class SensorSet:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if len(pos) < 2:
            raise ValueError("need at least two sensors")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("sensor positions must be distinct")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def N(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, order=True)
class Link:
    """A transmitter/receiver pair, 0-based sensor indices."""

    tx: int
    rx: int

    def __post_init__(self):
        if self.tx == self.rx:
            raise InvalidLinkError(f"link endpoints coincide: ({self.tx}, {self.rx})")
        if self.tx < 0 or self.rx < 0:
            raise InvalidLinkError(f"negative sensor index in ({self.tx}, {self.rx})")


@dataclass(frozen=True)
class SparseColumn:
    indices: np.ndarray
    values: np.ndarray

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.indices] = self.values
        return out

    @property
    def is_zero(self) -> bool:
        return len(self.indices) == 0


def as_sparse_column(w) -> SparseColumn:
    if isinstance(w, SparseColumn):
        return w
    w = np.asarray(w, dtype=float)
    idx = np.flatnonzero(w)
    return SparseColumn(idx.astype(np.int64), w[idx].copy())


@dataclass(frozen=True)
class WeightMatrix:
    """``N_g x t`` weight matrix stored as sparse columns, one per measurement."""

    n_points: int
    columns: tuple[SparseColumn, ...] = ()
    ellipse_lambda: float | None = None

    @property
    def t(self) -> int:
        return len(self.columns)

    def to_csr(self) -> sp.csr_matrix:
        """Sparse ``N_g x t`` matrix with rows indexed by grid point."""
        if not self.columns:
            return sp.csr_matrix((self.n_points, 0))
        rows = np.concatenate([c.indices for c in self.columns])
        vals = np.concatenate([c.values for c in self.columns])
        cols = np.repeat(np.arange(self.t), [len(c.indices) for c in self.columns])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_points, self.t))

    def dense(self) -> np.ndarray:
        return self.to_csr().toarray()


def append_column(W: WeightMatrix, w) -> WeightMatrix:
    col = as_sparse_column(w)
    if isinstance(w, SparseColumn):
        if len(col.indices) and col.indices.max() >= W.n_points:
            raise ValueError("weight column index out of range")
    elif np.asarray(w).shape != (W.n_points,):
        raise ValueError(f"weight vector has shape {np.shape(w)}, expected ({W.n_points},)")
    return WeightMatrix(W.n_points, W.columns + (col,), W.ellipse_lambda)


def ellipse_weight(tx, rx, point, lam: float) -> float:
    """Normalized ellipse weight of ``point`` for the link ``tx``--``rx``.

    Returns ``1/sqrt(d)`` when the detour through ``point`` is shorter than
    ``d + lam/2`` (strict), else 0.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    tx, rx, point = (np.asarray(v, dtype=float) for v in (tx, rx, point))
    d = math.dist(tx, rx)
    if d == 0.0:
        raise InvalidLinkError("transmitter and receiver coincide")
    detour = math.dist(tx, point) + math.dist(rx, point)
    return 1.0 / math.sqrt(d) if detour < d + lam / 2 else 0.0


def ellipse_weights(tx, rx, points: np.ndarray, lam: float) -> np.ndarray:
    """Vectorized :func:`ellipse_weight` over an ``(n, 2)`` array of points."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    d = float(np.hypot(*(tx - rx)))
    if d == 0.0:
        raise InvalidLinkError("transmitter and receiver coincide")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    detour = np.hypot(*(pts - tx).T) + np.hypot(*(pts - rx).T)
    return np.where(detour < d + lam / 2, 1.0 / math.sqrt(d), 0.0)


@dataclass(frozen=True)
class Geometry:
    """A grid with its deployed sensors, plus the ellipse parameter."""

    grid: Grid
    sensors: SensorSet
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not np.all(self.grid.contains(self.sensors.positions)):
            raise ValueError("all sensors must lie inside the grid area")

    def endpoints(self, link: Link) -> tuple[np.ndarray, np.ndarray]:
        if link.tx >= self.sensors.N or link.rx >= self.sensors.N:
            raise InvalidLinkError(f"sensor index out of range in {link}")
        return self.sensors.positions[link.tx], self.sensors.positions[link.rx]

    def link_length(self, link: Link) -> float:
        tx, rx = self.endpoints(link)
        return float(np.hypot(*(tx - rx)))

    def weight_vector(self, link: Link, sparse: bool = False):
        tx, rx = self.endpoints(link)
        w = ellipse_weights(tx, rx, self.grid.points, self.lam)
        return as_sparse_column(w) if sparse else w

    def weight_matrix(self, links) -> WeightMatrix:
        pts = self.grid.points
        cols = []
        for link in links:
            tx, rx = self.endpoints(link)
            cols.append(as_sparse_column(ellipse_weights(tx, rx, pts, self.lam)))
        return WeightMatrix(self.grid.n_points, tuple(cols), self.lam)

    def all_pairs(self) -> list[Link]:
        N = self.sensors.N
        return [Link(a, b) for a in range(N) for b in range(N) if a != b]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "sensors": self.sensors.positions.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        try:
            g = d["grid"]
            grid = Grid(
                int(g["nx"]), int(g["ny"]), float(g.get("spacing", 1.0)),
                tuple(g.get("origin", (1.0, 1.0))),
            )
            return cls(grid, SensorSet(np.asarray(d["sensors"], dtype=float)), float(d["lambda"]))
        except KeyError as exc:
            raise ValueError(f"scene is missing field {exc}") from None


def load_scene(path) -> Geometry:
    with open(Path(path)) as fh:
        return Geometry.from_dict(json.load(fh))


def boundary_points(grid: Grid, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Points on the boundary of the grid area, by arc length.

    Evenly spaced when ``rng`` is None, otherwise i.i.d. uniform.
    """
    x0, x1, y0, y1 = grid.area
    w, h = x1 - x0, y1 - y0
    per = 2 * (w + h)
    if rng is None:
        s = (np.arange(n) + 0.5) * per / n
    else:
        s = rng.uniform(0.0, per, size=n)
    out = np.empty((n, 2))
    for k, u in enumerate(s):
        if u < w:
            out[k] = (x0 + u, y0)
        elif u < w + h:
            out[k] = (x1, y0 + (u - w))
        elif u < 2 * w + h:
            out[k] = (x1 - (u - w - h), y1)
        else:
            out[k] = (x0, y1 - (u - 2 * w - h))
    return out


def boundary_sensors(grid: Grid, n: int, rng: np.random.Generator | None = None) -> SensorSet:
    return SensorSet(boundary_points(grid, n, rng))


@functools.lru_cache(maxsize=32)
def _neighbor_table(nx: int, ny: int) -> np.ndarray:
    n = nx * ny
    idx = np.arange(n)
    a, b = idx % nx, idx // nx
    out = np.full((n, 4), -1, dtype=np.int64)
    out[:, 0] = np.where(a > 0, idx - 1, -1)
    out[:, 1] = np.where(a < nx - 1, idx + 1, -1)
    out[:, 2] = np.where(b > 0, idx - nx, -1)
    out[:, 3] = np.where(b < ny - 1, idx + nx, -1)
    out.flags.writeable = False
    return out
