"""Experiment configuration: one JSON file plus ``--set key=value`` overrides.

Defaults reproduce the full-scale synthetic setup (60x60 grid, four
classes, 200 boundary sensors). Every section is validated when the
configuration is built, before any computation starts.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    nx: int = 60
    ny: int = 60
    spacing: float = 1.0
    origin: list = field(default_factory=lambda: [1.0, 1.0])
    n_sensors: int = 200
    sensor_layout: str = "boundary"  # boundary | random_boundary
    lam: float = 0.39
    beta: float = 1.5
    K: int = 4
    gibbs_sweeps: int = 500
    noise_precision: float = 20.0
    class_means: list = field(default_factory=lambda: [0.0, 1.0, 2.5, 5.5])
    class_precisions: list = field(default_factory=lambda: [10.0, 10.0, 2.0, 2.0])
    initial_measurements: int = 800
    scene_file: str | None = None


@dataclass
class DataConfig:
    """Input files for reconstruction and log-driven selection."""

    scene: str | None = None
    measurements: str | None = None
    labels: str | None = None
    field: str | None = None


@dataclass
class PriorConfig:
    a_nu: float = 1300.0
    b_nu: float = 2.0
    m: list = field(default_factory=lambda: [0.0, 0.9, 2.7, 5.3])
    sigma2: list = field(default_factory=lambda: [1e-4] * 4)
    a: list = field(default_factory=lambda: [0.8] * 4)
    b: list = field(default_factory=lambda: [1.0, 1.0, 0.5, 0.5])


@dataclass
class VbConfig:
    n_iter: int = 3000
    xi: float = 1e-6
    schedule: str = "sequential"
    field_sweeps: int = 1
    warm_start: bool = True


@dataclass
class SelectionConfig:
    slots: int = 8
    pool_size: int = 200
    batch: int = 100
    mode: str = "adaptive"  # adaptive | random
    source: str = "synthetic"  # synthetic | log
    snapshots: bool = False


@dataclass
class BaselineConfig:
    ridge_mu: float = 0.015
    ridge_covariance: str = "identity"  # identity | exp
    sigma_s2: float = 1.0
    kappa: float = 1.0
    tv_mu: float = 1e-11
    tv_tol: float = 1e-6
    tv_max_iter: int = 500
    tv_eps: float = 1e-4


@dataclass
class EvaluationConfig:
    runs: int = 20
    nmse_pairs: int = 500
    nmse_mode: str = "noise"  # noise | deployment
    workers: int = 1


SECTIONS = {
    "scene": SceneConfig,
    "data": DataConfig,
    "priors": PriorConfig,
    "vb": VbConfig,
    "selection": SelectionConfig,
    "baselines": BaselineConfig,
    "evaluation": EvaluationConfig,
}


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    vb: VbConfig = field(default_factory=VbConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        parts = {}
        for name, typ in SECTIONS.items():
            sec = d.get(name, {}) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"section '{name}' must be an object")
            known = {f.name for f in fields(typ)}
            bad = set(sec) - known
            if bad:
                raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(bad))}")
            try:
                parts[name] = typ(**sec)
            except TypeError as exc:
                raise ConfigError(f"section '{name}': {exc}") from None
        cfg = cls(**parts)
        if base_dir is not None:
            cfg._resolve_paths(Path(base_dir))
        cfg.validate()
        return cfg

    def _resolve_paths(self, base: Path) -> None:
        for sec, key in [("scene", "scene_file"), ("data", "scene"), ("data", "measurements"),
                         ("data", "labels"), ("data", "field")]:
            obj = getattr(self, sec)
            val = getattr(obj, key)
            if val is not None and not Path(val).is_absolute():
                setattr(obj, key, str(base / val))

    def validate(self) -> None:
        s, p, v, sel, bl, ev = self.scene, self.priors, self.vb, self.selection, self.baselines, self.evaluation
        _need(_int(s.nx) and _int(s.ny) and s.nx >= 1 and s.ny >= 1,
              "scene.nx and scene.ny must be positive integers")
        _need(_num(s.spacing) and s.spacing > 0, "scene.spacing must be positive")
        _need(isinstance(s.origin, list) and len(s.origin) == 2 and all(_num(o) for o in s.origin),
              "scene.origin must be a pair of numbers")
        _need(_int(s.n_sensors) and s.n_sensors >= 2, "scene.n_sensors must be >= 2")
        _need(s.sensor_layout in ("boundary", "random_boundary"),
              "scene.sensor_layout must be 'boundary' or 'random_boundary'")
        _need(_num(s.lam) and s.lam > 0, "scene.lam must be positive")
        _need(_num(s.beta) and s.beta >= 0, "scene.beta must be non-negative")
        _need(_int(s.K) and s.K >= 2, "scene.K must be an integer >= 2")
        _need(_int(s.gibbs_sweeps) and s.gibbs_sweeps >= 1, "scene.gibbs_sweeps must be >= 1")
        _need(_num(s.noise_precision) and s.noise_precision > 0, "scene.noise_precision must be positive")
        _need(_vec(s.class_means, s.K), f"scene.class_means must have K={s.K} numbers")
        _need(_vec(s.class_precisions, s.K) and min(s.class_precisions) > 0,
              f"scene.class_precisions must have K={s.K} positive numbers")
        _need(_int(s.initial_measurements) and s.initial_measurements >= 1,
              "scene.initial_measurements must be >= 1")
        _need(_num(p.a_nu) and p.a_nu > 0 and _num(p.b_nu) and p.b_nu > 0,
              "priors.a_nu and priors.b_nu must be positive")
        for name in ("m", "sigma2", "a", "b"):
            val = getattr(p, name)
            _need(_vec(val, s.K), f"priors.{name} must have K={s.K} numbers")
            if name != "m":
                _need(min(val) > 0, f"priors.{name} entries must be positive")
        _need(_int(v.n_iter) and v.n_iter >= 1, "vb.n_iter must be >= 1")
        _need(_num(v.xi) and v.xi > 0, "vb.xi must be positive")
        _need(v.schedule in ("sequential", "parallel"), "vb.schedule must be 'sequential' or 'parallel'")
        _need(_int(v.field_sweeps) and v.field_sweeps >= 1, "vb.field_sweeps must be >= 1")
        _need(_int(sel.slots) and sel.slots >= 0, "selection.slots must be >= 0")
        _need(_int(sel.pool_size) and sel.pool_size >= 1, "selection.pool_size must be >= 1")
        _need(_int(sel.batch) and 1 <= sel.batch <= sel.pool_size,
              "selection.batch must be in [1, pool_size]")
        _need(sel.mode in ("adaptive", "random"), "selection.mode must be 'adaptive' or 'random'")
        _need(sel.source in ("synthetic", "log"), "selection.source must be 'synthetic' or 'log'")
        _need(_num(bl.ridge_mu) and bl.ridge_mu >= 0, "baselines.ridge_mu must be >= 0")
        _need(bl.ridge_covariance in ("identity", "exp"), "baselines.ridge_covariance must be 'identity' or 'exp'")
        _need(_num(bl.sigma_s2) and bl.sigma_s2 > 0 and _num(bl.kappa) and bl.kappa > 0,
              "baselines.sigma_s2 and baselines.kappa must be positive")
        _need(_num(bl.tv_mu) and bl.tv_mu >= 0, "baselines.tv_mu must be >= 0")
        _need(_num(bl.tv_tol) and bl.tv_tol > 0 and _num(bl.tv_eps) and bl.tv_eps > 0,
              "baselines.tv_tol and baselines.tv_eps must be positive")
        _need(_int(bl.tv_max_iter) and bl.tv_max_iter >= 1, "baselines.tv_max_iter must be >= 1")
        _need(_int(ev.runs) and ev.runs >= 1, "evaluation.runs must be >= 1")
        _need(_int(ev.nmse_pairs) and ev.nmse_pairs >= 1, "evaluation.nmse_pairs must be >= 1")
        _need(ev.nmse_mode in ("noise", "deployment"), "evaluation.nmse_mode must be 'noise' or 'deployment'")
        _need(_int(ev.workers) and ev.workers >= 1, "evaluation.workers must be >= 1")
        for sec, key in [("scene", "scene_file"), ("data", "scene"), ("data", "measurements"),
                         ("data", "labels"), ("data", "field")]:
            val = getattr(getattr(self, sec), key)
            _need(val is None or Path(val).is_file(), f"{sec}.{key}: file not found: {val}")
        if sel.source == "log":
            _need(self.data.scene is not None and self.data.measurements is not None,
                  "selection.source='log' needs data.scene and data.measurements")


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _vec(x, K: int) -> bool:
    return isinstance(x, list) and len(x) == K and all(_num(v) for v in x)


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is parsed as JSON, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if len(path) != 2:
        raise ConfigError(f"override key must be section.key, got {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(d: dict, overrides) -> dict:
    out = copy.deepcopy(d)
    for text in overrides:
        (sec, key), value = parse_override(text)
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section {sec!r}")
        out.setdefault(sec, {})[key] = value
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read a JSON config (or start from defaults when ``path`` is None)."""
    base_dir = None
    raw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        base_dir = path.parent
    return ExperimentConfig.from_dict(apply_overrides(raw, overrides), base_dir)
