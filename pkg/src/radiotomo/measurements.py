"""Calibrated shadowing measurements and their weight columns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Link, SparseColumn, WeightMatrix, as_sparse_column


@dataclass(frozen=True)
class Design:
    """Site-major CSR view of ``W`` plus per-site sums of squared weights."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    rows: np.ndarray
    w2sum: np.ndarray
    t: int

    def site_sums(self, x) -> np.ndarray:
        """``W x`` for a length-t vector."""
        return np.bincount(self.rows, weights=self.data * x[self.indices], minlength=len(self.w2sum))

    def link_sums(self, y) -> np.ndarray:
        """``W^T y`` for a length-N_g vector."""
        return np.bincount(self.indices, weights=self.data * y[self.rows], minlength=self.t)


class MeasurementSet:
    """Append-only log of shadowing values ``s`` with their links and weights."""

    def __init__(self, n_points: int, lam: float | None = None):
        self._W = WeightMatrix(n_points, (), lam)
        self._s: list[float] = []
        self.links: list[Link] = []
        self._design: Design | None = None
        self._s_arr: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, W: WeightMatrix, shadowing, links) -> "MeasurementSet":
        shadowing = np.asarray(shadowing, dtype=float).reshape(-1)
        links = list(links)
        if not (W.t == len(shadowing) == len(links)):
            raise ValueError("every weight column needs one shadowing value and one link")
        m = cls(W.n_points, W.ellipse_lambda)
        m._W = W
        m._s = shadowing.tolist()
        m.links = links
        return m

    @property
    def n_points(self) -> int:
        return self._W.n_points

    @property
    def t(self) -> int:
        return len(self._s)

    @property
    def weights(self) -> WeightMatrix:
        return self._W

    @property
    def shadowing(self) -> np.ndarray:
        if self._s_arr is None:
            self._s_arr = np.asarray(self._s, dtype=float)
        return self._s_arr

    def append(self, link: Link, w, value: float) -> None:
        col = as_sparse_column(w)
        if not isinstance(w, SparseColumn) and np.shape(w) != (self.n_points,):
            raise ValueError(f"weight vector has shape {np.shape(w)}, expected ({self.n_points},)")
        self._W = WeightMatrix(self.n_points, self._W.columns + (col,), self._W.ellipse_lambda)
        self._s.append(float(value))
        self.links.append(link)
        self._design = None
        self._s_arr = None

    def extend(self, links, columns, values) -> None:
        for link, w, v in zip(links, columns, values, strict=True):
            self.append(link, w, v)

    def copy(self) -> "MeasurementSet":
        return MeasurementSet.from_arrays(self._W, self.shadowing.copy(), list(self.links))

    def subset(self, idx) -> "MeasurementSet":
        idx = list(idx)
        W = WeightMatrix(self.n_points, tuple(self._W.columns[i] for i in idx), self._W.ellipse_lambda)
        return MeasurementSet.from_arrays(W, self.shadowing[idx], [self.links[i] for i in idx])

    @property
    def design(self) -> Design:
        if self._design is None:
            A = self._W.to_csr()
            A.sort_indices()
            w2 = np.asarray(A.multiply(A).sum(axis=1)).reshape(-1)
            indptr = A.indptr.astype(np.int64)
            self._design = Design(
                indptr, A.indices.astype(np.int64), A.data.astype(float),
                np.repeat(np.arange(self.n_points, dtype=np.int64), np.diff(indptr)),
                w2, self.t,
            )
        return self._design

    def predict(self, f) -> np.ndarray:
        """``W^T f`` for a field in vec order."""
        f = np.asarray(f, dtype=float)
        return np.array([c.values @ f[c.indices] for c in self._W.columns])
