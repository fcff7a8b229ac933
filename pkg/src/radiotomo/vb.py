"""Mean-field variational Bayes for the Gauss-Markov-Potts tomography model.

The variational family factors as ``prod_i q(f_i|z_i) q(z_i)`` times
independent factors for the noise precision and for each class's mean
and precision. Gamma factors use the shape-scale parameterization,
so ``E[phi] = shape * scale``.

Each iteration runs the updates in a fixed order: field variances, field
means, label probabilities, noise precision, class means, class
precisions. With ``schedule="sequential"`` (the default) field means and
label probabilities are swept site by site against the current state of
all other sites, which makes every step an exact coordinate-ascent move
and the ELBO non-decreasing. ``schedule="parallel"`` applies the
simultaneous (Jacobi) updates with the reduced label rule instead; it is
cheaper per sweep but carries no monotonicity guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, gammaln

from . import _kernels
from .geometry import Grid
from .measurements import MeasurementSet
from .synthesis import HyperParams, PottsParams

LOG_2PI = math.log(2 * math.pi)
SCHEDULES = ("sequential", "parallel")


class CorruptStateError(ArithmeticError):
    """A variance or precision parameter left the positive reals."""


class VbDivergenceError(ArithmeticError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"ELBO became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration
        self.value = value


@dataclass(frozen=True)
class HyperPriors:
    a_nu: float
    b_nu: float
    m: np.ndarray
    sigma2: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        K = len(np.atleast_1d(self.m))
        for name in ("m", "sigma2", "a", "b"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 1 and K > 1:
                v = np.full(K, v[0])
            if len(v) != K:
                raise ValueError(f"prior '{name}' has length {len(v)}, expected {K}")
            object.__setattr__(self, name, v)
        if not (self.a_nu > 0 and self.b_nu > 0):
            raise ValueError("noise prior shape and scale must be positive")
        if np.any(self.sigma2 <= 0) or np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ValueError("prior variances and gamma parameters must be positive")
        object.__setattr__(self, "a_nu", float(self.a_nu))
        object.__setattr__(self, "b_nu", float(self.b_nu))

    @property
    def K(self) -> int:
        return len(self.m)

    def to_dict(self) -> dict:
        return {
            "a_nu": self.a_nu, "b_nu": self.b_nu, "m": self.m.tolist(),
            "sigma2": self.sigma2.tolist(), "a": self.a.tolist(), "b": self.b.tolist(),
        }


@dataclass
class VariationalState:
    field_mean: np.ndarray  # (N_g, K)
    field_var: np.ndarray  # (N_g, K)
    label_prob: np.ndarray  # (N_g, K)
    noise_shape: float
    noise_scale: float
    mean_mean: np.ndarray  # (K,)
    mean_var: np.ndarray
    prec_shape: np.ndarray
    prec_scale: np.ndarray
    mu_bar: np.ndarray = field(default=None)  # (N_g,) E_q[f_i]
    s_bar: np.ndarray = field(default=None)  # (t,) W^T mu_bar

    @property
    def n_points(self) -> int:
        return self.field_mean.shape[0]

    @property
    def K(self) -> int:
        return self.field_mean.shape[1]

    @property
    def noise_precision(self) -> float:
        return self.noise_shape * self.noise_scale

    @property
    def class_precision(self) -> np.ndarray:
        return self.prec_shape * self.prec_scale

    def copy(self) -> "VariationalState":
        return replace(
            self,
            **{
                k: np.array(v, copy=True)
                for k, v in self.__dict__.items()
                if isinstance(v, np.ndarray)
            },
        )

    def refresh_caches(self, data: MeasurementSet) -> "VariationalState":
        self.mu_bar = np.einsum("ik,ik->i", self.label_prob, self.field_mean)
        self.s_bar = data.design.link_sums(self.mu_bar)
        return self


@dataclass(frozen=True)
class VbEstimates:
    f_mmse: np.ndarray
    z_map: np.ndarray
    theta_mmse: HyperParams


class VbResult(NamedTuple):
    estimates: VbEstimates
    state: VariationalState
    elbo_trace: list
    converged: bool


def _check_positive(name, x):
    x = np.asarray(x)
    # NaN fails the first comparison, so two reductions cover every case.
    if not (x.min() > 0 and x.max() < np.inf):
        raise CorruptStateError(f"{name} must be finite and positive")


def init_state(priors: HyperPriors, data: MeasurementSet, seed: int) -> VariationalState:
    """Random initial state: uniform(0, 1) draws, flat labels, prior class means."""
    rng = np.random.default_rng(seed)
    N, K, t = data.n_points, priors.K, data.t
    field_mean = rng.uniform(0.0, 1.0, size=(N, K))
    noise_scale = float(rng.uniform(0.0, 1.0))
    mean_var = rng.uniform(0.0, 1.0, size=K)
    prec_shape = rng.uniform(0.0, 1.0, size=K)
    prec_scale = rng.uniform(0.0, 1.0, size=K)
    state = VariationalState(
        field_mean=field_mean,
        field_var=np.ones((N, K)),
        label_prob=np.full((N, K), 1.0 / K),
        noise_shape=priors.a_nu + t / 2,
        noise_scale=noise_scale,
        mean_mean=priors.m.copy(),
        mean_var=mean_var,
        prec_shape=prec_shape,
        prec_scale=prec_scale,
    )
    update_field_variances(state, data)
    return state.refresh_caches(data)


def update_field_variances(state: VariationalState, data: MeasurementSet) -> VariationalState:
    prec = state.class_precision
    _check_positive("class precision", prec)
    phi = state.noise_precision
    state.field_var = 1.0 / (phi * data.design.w2sum[:, None] + prec[None, :])
    return state


def update_field_means(
    state: VariationalState, data: MeasurementSet, schedule: str = "sequential"
) -> VariationalState:
    prec = state.class_precision
    _check_positive("class precision", prec)
    d = data.design
    phi = state.noise_precision
    s = data.shadowing
    if schedule == "sequential":
        _kernels.field_mean_sweep(
            d.indptr, d.indices, d.data, s, state.s_bar, state.field_mean, state.field_var,
            state.label_prob, state.mu_bar, state.mean_mean, prec, phi,
        )
    elif schedule == "parallel":
        g = d.site_sums(s - state.s_bar)
        mb = state.mu_bar[:, None]
        state.field_mean = mb + state.field_var * (
            (state.mean_mean[None, :] - mb) * prec[None, :] + phi * g[:, None]
        )
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    return state.refresh_caches(data)


def update_field_factors(
    state: VariationalState, data: MeasurementSet, schedule: str = "sequential"
) -> VariationalState:
    """Variances then means of every ``q(f_i | z_i = k)``."""
    update_field_variances(state, data)
    return update_field_means(state, data, schedule)


def expected_sq_deviation(state: VariationalState) -> np.ndarray:
    """``E[(f_i - mu_k)^2]`` under ``q(f_i|z_i=k) q(mu_k)``, shape ``(N_g, K)``."""
    mu = state.field_mean
    return (
        state.field_var + mu**2 - 2.0 * mu * state.mean_mean[None, :]
        + (state.mean_var + state.mean_mean**2)[None, :]
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def neighbor_sum(q: np.ndarray, nbr: np.ndarray) -> np.ndarray:
    padded = np.vstack([q, np.zeros((1, q.shape[1]))])
    return padded[nbr].sum(axis=1)


def update_label_probs(
    state: VariationalState,
    data: MeasurementSet,
    params: PottsParams,
    grid: Grid,
    schedule: str = "sequential",
) -> VariationalState:
    """Update ``q(z_i)`` for every site.

    The sequential rule includes every term of the ELBO that depends on
    ``q(z_i)``: the class-conditional prior fit, the data fit of the
    site's conditional means and variances, the entropy of
    ``q(f_i|z_i)``, and the Potts coupling to the current neighbor
    probabilities. The parallel rule keeps only the prior-fit and Potts
    terms and uses the previous iteration's neighbor probabilities.
    """
    prec = state.class_precision
    _check_positive("class precision", prec)
    _check_positive("class precision scale", state.prec_scale)
    e_log_prec = digamma(state.prec_shape) + np.log(state.prec_scale)
    base = -0.5 * prec[None, :] * expected_sq_deviation(state) + 0.5 * e_log_prec[None, :]
    nbr = grid.neighbors()
    if schedule == "sequential":
        static = base + 0.5 * np.log(state.field_var)
        d = data.design
        _kernels.label_sweep(
            d.indptr, d.indices, d.data, data.shadowing, state.s_bar, state.field_mean,
            state.field_var, state.label_prob, state.mu_bar, static, nbr,
            float(params.beta), state.noise_precision,
        )
    elif schedule == "parallel":
        logits = base + params.beta * neighbor_sum(state.label_prob, nbr)
        state.label_prob = _softmax_rows(logits)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    return state.refresh_caches(data)


def expected_sq_residual(state: VariationalState, data: MeasurementSet) -> float:
    """``sum_tau E_q[(s_tau - w_tau^T f)^2]`` via the law of total variance."""
    q, mu = state.label_prob, state.field_mean
    site_var = np.einsum("ik,ik->i", q, state.field_var + mu**2) - state.mu_bar**2
    r = data.shadowing - state.s_bar
    return float(r @ r + data.design.w2sum @ site_var)


def expected_link_square(state: VariationalState, w) -> float:
    """``E_q[(w^T f)^2]`` for a single dense weight vector."""
    w = np.asarray(w, dtype=float)
    q, mu = state.label_prob, state.field_mean
    site_var = np.einsum("ik,ik->i", q, state.field_var + mu**2) - state.mu_bar**2
    return float((w**2) @ site_var + (w @ state.mu_bar) ** 2)


def update_noise_precision(
    state: VariationalState, data: MeasurementSet, priors: HyperPriors
) -> VariationalState:
    bracket = 1.0 / priors.b_nu + 0.5 * expected_sq_residual(state, data)
    scale = 1.0 / bracket
    if not (math.isfinite(scale) and scale > 0):
        raise CorruptStateError(f"noise scale update produced {scale}")
    state.noise_scale = scale
    return state


def update_class_means(state: VariationalState, priors: HyperPriors) -> VariationalState:
    prec = state.class_precision
    mass = state.label_prob.sum(axis=0)
    weighted = np.einsum("ik,ik->k", state.label_prob, state.field_mean)
    var = 1.0 / (1.0 / priors.sigma2 + mass * prec)
    _check_positive("class-mean variance", var)
    state.mean_var = var
    state.mean_mean = var * (priors.m / priors.sigma2 + prec * weighted)
    return state


def update_class_precisions(state: VariationalState, priors: HyperPriors) -> VariationalState:
    q = state.label_prob
    shape = priors.a + 0.5 * q.sum(axis=0)
    dev = np.einsum("ik,ik->k", q, expected_sq_deviation(state))
    scale = 1.0 / (1.0 / priors.b + 0.5 * dev)
    _check_positive("class precision scale", scale)
    state.prec_shape = shape
    state.prec_scale = scale
    return state


def _gamma_entropy(shape, scale):
    return shape + np.log(scale) + gammaln(shape) + (1.0 - shape) * digamma(shape)


def _gamma_expected_logpdf(a, b, e_phi, e_log_phi):
    return -gammaln(a) - a * np.log(b) + (a - 1.0) * e_log_phi - e_phi / b


def elbo_terms(
    state: VariationalState,
    data: MeasurementSet,
    priors: HyperPriors,
    params: PottsParams,
    grid: Grid,
) -> dict:
    """Closed-form ELBO contributions (Potts normalizer omitted)."""
    t = data.t
    q, var = state.label_prob, state.field_var
    phi_nu = state.noise_precision
    e_log_nu = digamma(state.noise_shape) + math.log(state.noise_scale)
    prec = state.class_precision
    e_log_prec = digamma(state.prec_shape) + np.log(state.prec_scale)

    likelihood = 0.5 * t * (e_log_nu - LOG_2PI) - 0.5 * phi_nu * expected_sq_residual(state, data)
    conditional = float(np.sum(
        q * (0.5 * (e_log_prec - LOG_2PI)[None, :] - 0.5 * prec[None, :] * expected_sq_deviation(state))
    ))
    e = grid.edges()
    potts = float(params.beta * np.sum(q[e[:, 0]] * q[e[:, 1]]))

    prior_nu = float(_gamma_expected_logpdf(priors.a_nu, priors.b_nu, phi_nu, e_log_nu))
    prior_mean = float(np.sum(
        -0.5 * np.log(2 * np.pi * priors.sigma2)
        - ((state.mean_mean - priors.m) ** 2 + state.mean_var) / (2 * priors.sigma2)
    ))
    prior_prec = float(np.sum(_gamma_expected_logpdf(priors.a, priors.b, prec, e_log_prec)))

    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(q > 0, q * np.log(q), 0.0)
    ent_fz = float(-qlogq.sum() + np.sum(q * 0.5 * (np.log(var) + LOG_2PI + 1.0)))
    ent_nu = float(_gamma_entropy(state.noise_shape, state.noise_scale))
    ent_mean = float(np.sum(0.5 * (np.log(state.mean_var) + LOG_2PI + 1.0)))
    ent_prec = float(np.sum(_gamma_entropy(state.prec_shape, state.prec_scale)))
    return {
        "likelihood": float(likelihood),
        "conditional": conditional,
        "potts": potts,
        "prior_noise": prior_nu,
        "prior_means": prior_mean,
        "prior_precisions": prior_prec,
        "entropy_field_labels": ent_fz,
        "entropy_noise": ent_nu,
        "entropy_means": ent_mean,
        "entropy_precisions": ent_prec,
    }


def compute_elbo(state, data, priors, params, grid) -> float:
    return float(sum(elbo_terms(state, data, priors, params, grid).values()))


def iterate(
    state, data, priors, params, grid, schedule="sequential", field_sweeps: int = 1
) -> VariationalState:
    """One full pass over all variational updates.

    ``field_sweeps > 1`` repeats the field-mean step before moving on;
    each repeat is itself a coordinate-ascent step.
    """
    update_field_variances(state, data)
    for _ in range(field_sweeps):
        update_field_means(state, data, schedule)
    update_label_probs(state, data, params, grid, schedule)
    update_noise_precision(state, data, priors)
    update_class_means(state, priors)
    update_class_precisions(state, priors)
    return state


def estimates_from_state(state: VariationalState) -> VbEstimates:
    z = np.argmax(state.label_prob, axis=1)
    f = state.field_mean[np.arange(state.n_points), z]
    theta = HyperParams(state.noise_precision, state.mean_mean.copy(), state.class_precision.copy())
    return VbEstimates(f, z, theta)


def run_vb(
    data: MeasurementSet,
    grid: Grid,
    priors: HyperPriors,
    params: PottsParams,
    n_iter: int = 3000,
    xi: float = 1e-6,
    seed: int = 0,
    state: VariationalState | None = None,
    schedule: str = "sequential",
    converged: bool = False,
    field_sweeps: int = 1,
) -> VbResult:
    """Iterate the variational updates until the ELBO gain is at most ``xi``.

    Passing ``state`` resumes from it (``noise_shape`` is reset for the
    current number of measurements); ``converged=True`` together with a
    state returns its estimates without iterating.
    """
    if n_iter < 1 or not xi > 0:
        raise ValueError("n_iter must be >= 1 and xi > 0")
    if field_sweeps < 1:
        raise ValueError("field_sweeps must be >= 1")
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}")
    if data.n_points != grid.n_points:
        raise ValueError("measurement set and grid disagree on the number of points")
    if priors.K != params.K:
        raise ValueError("priors and Potts parameters disagree on K")
    if state is None:
        state = init_state(priors, data, seed)
        converged = False
    else:
        state = state.copy()
        state.noise_shape = priors.a_nu + data.t / 2
        state.refresh_caches(data)
    prev = compute_elbo(state, data, priors, params, grid)
    trace = [prev]
    if not converged:
        for it in range(1, n_iter + 1):
            iterate(state, data, priors, params, grid, schedule, field_sweeps)
            cur = compute_elbo(state, data, priors, params, grid)
            if not math.isfinite(cur):
                raise VbDivergenceError(it, cur)
            trace.append(cur)
            if cur - prev <= xi:
                converged = True
                break
            prev = cur
    return VbResult(estimates_from_state(state), state, trace, converged)
