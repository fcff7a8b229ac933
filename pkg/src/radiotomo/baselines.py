"""Regularized least-squares baselines: ridge with an exponential-kernel
prior covariance, and anisotropic total variation.

The TV problem is solved by majorize-minimize on a smoothed penalty
``sum_e sqrt(u_e^2 + eps^2)``: each iteration minimizes a quadratic upper
bound that touches the objective at the current iterate, so the
(smoothed) objective cannot increase.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist

from .geometry import Grid
from .measurements import MeasurementSet


class SingularSystemError(np.linalg.LinAlgError):
    pass


def exp_kernel_covariance(grid: Grid, sigma_s2: float, kappa: float) -> np.ndarray:
    """``C[i, j] = sigma_s2 * exp(-||x_i - x_j|| / kappa)``."""
    if not (sigma_s2 > 0 and kappa > 0):
        raise ValueError("sigma_s2 and kappa must be positive")
    pts = grid.points
    return sigma_s2 * np.exp(-cdist(pts, pts) / kappa)


@dataclass(frozen=True)
class RidgeConfig:
    reg_weight: float
    covariance: np.ndarray | str = "identity"

    def __post_init__(self):
        if not self.reg_weight >= 0:
            raise ValueError("reg_weight must be non-negative")
        if not isinstance(self.covariance, str):
            C = np.asarray(self.covariance, dtype=float)
            if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T):
                raise ValueError("covariance must be a symmetric square matrix")
            object.__setattr__(self, "covariance", C)
        elif self.covariance != "identity":
            raise ValueError(f"unknown covariance {self.covariance!r}")


def _dense_w(data: MeasurementSet) -> np.ndarray:
    return data.weights.dense()


def _regularizer(cfg: RidgeConfig, n: int) -> np.ndarray:
    if isinstance(cfg.covariance, str):
        return np.eye(n)
    try:
        cf = sla.cho_factor(cfg.covariance)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    return sla.cho_solve(cf, np.eye(n))


def ridge_system(data: MeasurementSet, cfg: RidgeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Left and right sides of ``(W W^T + mu C^-1) f = W s``."""
    W = _dense_w(data)
    lhs = W @ W.T + cfg.reg_weight * _regularizer(cfg, data.n_points)
    return lhs, W @ data.shadowing


def ridge_ls(data: MeasurementSet, cfg: RidgeConfig) -> np.ndarray:
    """Closed-form ridge estimate of the loss field."""
    lhs, rhs = ridge_system(data, cfg)
    if cfg.reg_weight == 0 and np.linalg.matrix_rank(lhs) < data.n_points:
        raise SingularSystemError("W is rank deficient and no regularization is applied")
    try:
        return sla.cho_solve(sla.cho_factor(lhs), rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError("ridge normal equations are singular") from None


def normal_equation_residual(data: MeasurementSet, cfg: RidgeConfig, f) -> float:
    """``||(W W^T + mu C^-1) f - W s|| / ||W s||``."""
    lhs, rhs = ridge_system(data, cfg)
    return float(np.linalg.norm(lhs @ f - rhs) / np.linalg.norm(rhs))


def threshold_labels(f, class_means) -> np.ndarray:
    """Label each site with the class whose mean is nearest to ``f``."""
    f = np.asarray(f, dtype=float)
    m = np.asarray(class_means, dtype=float)
    return np.argmin(np.abs(f[:, None] - m[None, :]), axis=1)


@dataclass(frozen=True)
class TvConfig:
    reg_weight: float
    tol: float = 1e-6
    max_iter: int = 500
    eps: float = 1e-4

    def __post_init__(self):
        if not self.reg_weight >= 0:
            raise ValueError("reg_weight must be non-negative")
        if not (self.tol > 0 and self.eps > 0):
            raise ValueError("tol and eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class TvResult:
    field: np.ndarray
    objective: list[float]
    converged: bool
    status: str

    @property
    def iterations(self) -> int:
        return len(self.objective) - 1


def difference_operator(grid: Grid) -> sp.csr_matrix:
    """Sparse ``(E, N_g)`` matrix of first differences along grid edges."""
    e = grid.edges()
    m = len(e)
    rows = np.repeat(np.arange(m), 2)
    cols = e.reshape(-1)
    vals = np.tile([-1.0, 1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.n_points))


def tv_objective(f, data: MeasurementSet, grid: Grid, reg_weight: float, eps: float = 0.0) -> float:
    """``1/2 ||s - W^T f||^2 + mu * sum_e sqrt(u_e^2 + eps^2)``; ``eps=0`` is exact TV."""
    f = np.asarray(f, dtype=float)
    r = data.shadowing - data.predict(f)
    u = difference_operator(grid) @ f
    return float(0.5 * r @ r + reg_weight * np.sum(np.sqrt(u * u + eps * eps)))


def tv_ls(data: MeasurementSet, cfg: TvConfig, grid: Grid, f0=None) -> TvResult:
    """Minimize the smoothed TV-regularized least-squares objective."""
    if data.n_points != grid.n_points:
        raise ValueError("grid and measurement set disagree on the number of points")
    A = data.weights.to_csr()
    WWt = (A @ A.T).tocsc()
    rhs = A @ data.shadowing
    D = difference_operator(grid)
    mu = cfg.reg_weight

    if mu == 0:
        try:
            f = spla.splu(WWt).solve(rhs)
        except RuntimeError:
            raise SingularSystemError("W is rank deficient and no regularization is applied") from None
        obj = tv_objective(f, data, grid, 0.0, cfg.eps)
        return TvResult(f, [obj], True, "converged")

    f = np.zeros(grid.n_points) if f0 is None else np.asarray(f0, dtype=float).copy()
    trace = [tv_objective(f, data, grid, mu, cfg.eps)]
    for _ in range(cfg.max_iter):
        u = D @ f
        weights = 1.0 / np.sqrt(u * u + cfg.eps * cfg.eps)
        lhs = (WWt + mu * (D.T @ sp.diags(weights) @ D)).tocsc()
        try:
            f_new = spla.splu(lhs).solve(rhs)
        except RuntimeError:
            raise SingularSystemError("TV majorizer system is singular") from None
        obj = tv_objective(f_new, data, grid, mu, cfg.eps)
        change = np.linalg.norm(f_new - f) / max(np.linalg.norm(f_new), 1e-300)
        f = f_new
        trace.append(obj)
        if change < cfg.tol:
            return TvResult(f, trace, True, "converged")
    msg = f"TV solver stopped after {cfg.max_iter} iterations without meeting tol={cfg.tol}"
    warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return TvResult(f, trace, False, msg)


def cluster_labels(f, K: int) -> np.ndarray:
    """Label sites by 1-D k-means on ``f``; class ``k`` is the k-th smallest center.

    Centers start at evenly spaced quantiles, so the result is deterministic.
    """
    f = np.asarray(f, dtype=float)
    init = np.quantile(f, (np.arange(K) + 0.5) / K)
    centers, _ = kmeans2(f, init, minit="matrix", missing="raise")
    return threshold_labels(f, np.sort(centers))
