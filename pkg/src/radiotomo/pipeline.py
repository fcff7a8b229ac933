"""Glue between a validated configuration and the numerical modules.

All randomness is derived from one integer seed through named streams,
so each stage (labels, field, links, noise, pools, VB start) can be
reproduced on its own.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .baselines import RidgeConfig, TvConfig, exp_kernel_covariance, ridge_ls, tv_ls
from .config import ExperimentConfig
from .evaluation import labeling_error, nmse, shadow_function
from .geometry import Geometry, Grid, boundary_sensors, load_scene
from .measurements import MeasurementSet
from .selection import AdaptiveSchedule, SyntheticAcquirer, VbSettings, run_adaptive
from .synthesis import (
    HyperParams,
    PottsParams,
    random_links,
    sample_potts,
    sample_slf,
    synthesize_measurements,
)
from .vb import HyperPriors


def derive_seed(seed: int, stream: str) -> int:
    """Independent 63-bit seed for a named stream."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def build_grid(cfg: ExperimentConfig) -> Grid:
    s = cfg.scene
    return Grid(s.nx, s.ny, float(s.spacing), tuple(s.origin))


def build_geometry(cfg: ExperimentConfig, seed: int) -> Geometry:
    s = cfg.scene
    if s.scene_file is not None:
        return load_scene(s.scene_file)
    grid = build_grid(cfg)
    if s.sensor_layout == "boundary":
        sensors = boundary_sensors(grid, s.n_sensors)
    else:
        sensors = boundary_sensors(grid, s.n_sensors, np.random.default_rng(derive_seed(seed, "sensors")))
    return Geometry(grid, sensors, float(s.lam))


def potts_params(cfg: ExperimentConfig) -> PottsParams:
    return PottsParams(float(cfg.scene.beta), int(cfg.scene.K))


def truth_params(cfg: ExperimentConfig) -> HyperParams:
    s = cfg.scene
    return HyperParams(s.noise_precision, s.class_means, s.class_precisions)


def hyper_priors(cfg: ExperimentConfig) -> HyperPriors:
    p = cfg.priors
    return HyperPriors(p.a_nu, p.b_nu, p.m, p.sigma2, p.a, p.b)


def vb_settings(cfg: ExperimentConfig, seed: int) -> VbSettings:
    v = cfg.vb
    return VbSettings(
        n_iter=v.n_iter, xi=v.xi, seed=derive_seed(seed, "vb-init"), schedule=v.schedule,
        warm_start=v.warm_start, field_sweeps=v.field_sweeps,
    )


@dataclass
class Scene:
    geometry: Geometry
    labels: np.ndarray
    field: np.ndarray
    data: MeasurementSet


def simulate_scene(cfg: ExperimentConfig, seed: int, scene_seed: int | None = None,
                   geometry: Geometry | None = None) -> Scene:
    """Ground truth from ``scene_seed`` (default ``seed``); links and noise from ``seed``."""
    scene_seed = seed if scene_seed is None else scene_seed
    geo = build_geometry(cfg, scene_seed) if geometry is None else geometry
    z = sample_potts(geo.grid, potts_params(cfg), cfg.scene.gibbs_sweeps, derive_seed(scene_seed, "labels"))
    f = sample_slf(z, truth_params(cfg), derive_seed(scene_seed, "field"))
    links = random_links(geo.sensors.N, cfg.scene.initial_measurements,
                         np.random.default_rng(derive_seed(seed, "links")))
    data = synthesize_measurements(f, links, geo, truth_params(cfg), derive_seed(seed, "noise"))
    return Scene(geo, z, f, data)


def reconstruct_baseline(cfg: ExperimentConfig, data: MeasurementSet, grid: Grid, method: str):
    b = cfg.baselines
    if method == "ridge":
        cov = "identity" if b.ridge_covariance == "identity" else exp_kernel_covariance(grid, b.sigma_s2, b.kappa)
        return ridge_ls(data, RidgeConfig(b.ridge_mu, cov)), None
    if method == "tv":
        res = tv_ls(data, TvConfig(b.tv_mu, b.tv_tol, b.tv_max_iter, b.tv_eps), grid)
        return res.field, res
    raise ValueError(f"unknown method {method!r}")


def run_trajectory(cfg: ExperimentConfig, scene: Scene, seed: int, mode: str):
    sel = cfg.selection
    sched = AdaptiveSchedule(sel.slots, sel.pool_size, sel.batch, derive_seed(seed, "pool"), mode)
    acq = SyntheticAcquirer(scene.geometry, scene.field, cfg.scene.noise_precision, derive_seed(seed, "acquire"))
    return run_adaptive(
        scene.data, scene.geometry.grid, hyper_priors(cfg), potts_params(cfg), sched, acq,
        vb_settings(cfg, seed), scene.labels,
    )


class PairedExperiment:
    """One MC run: adaptive and random trajectories on a shared scene and pool stream.

    In ``noise`` mode the ground truth and deployment come from
    ``base_seed`` and only the measurement draws and pools vary per run; in
    ``deployment`` mode the sensor positions are redrawn per run as well.
    """

    def __init__(self, cfg_dict: dict, base_seed: int):
        self.cfg_dict = cfg_dict
        self.base_seed = base_seed

    def __call__(self, seed: int) -> dict:
        cfg = ExperimentConfig.from_dict(self.cfg_dict)
        geo = None
        if cfg.evaluation.nmse_mode == "deployment" and cfg.scene.scene_file is None:
            grid = build_grid(cfg)
            rng = np.random.default_rng(derive_seed(seed, "sensors"))
            geo = Geometry(grid, boundary_sensors(grid, cfg.scene.n_sensors, rng), cfg.scene.lam)
        scene = simulate_scene(cfg, seed, scene_seed=self.base_seed, geometry=geo)
        grid = scene.geometry.grid
        truth_fn = shadow_function(scene.field, grid, scene.geometry.lam)
        out = {}
        for mode in ("adaptive", "random"):
            traj = run_trajectory(cfg, scene, seed, mode)
            out[f"labeling_error_{mode}"] = [labeling_error(scene.labels, r.estimates.z_map) for r in traj.records]
            out[f"nmse_{mode}"] = [
                nmse(truth_fn, shadow_function(r.estimates.f_mmse, grid, scene.geometry.lam),
                     cfg.evaluation.nmse_pairs, derive_seed(seed, "nmse"), grid)
                for r in traj.records
            ]
        return out

