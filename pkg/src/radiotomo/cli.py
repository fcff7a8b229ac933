"""Command-line front end.

    radiotomo simulate|reconstruct|adaptive|evaluate --config path
        [--set section.key=value]... --out dir --seed n

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O or input-file error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as rio
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import labeling_error, run_mc
from .pipeline import (
    PairedExperiment,
    derive_seed,
    hyper_priors,
    potts_params,
    reconstruct_baseline,
    run_trajectory,
    simulate_scene,
    vb_settings,
)
from .selection import AdaptiveSchedule, LogAcquirer, run_adaptive
from .vb import run_vb

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _sidecar(cfg: ExperimentConfig, seed: int) -> dict:
    return {"seed": seed, "config_hash": rio.config_hash(cfg.to_dict())}


def _write_meta(out: Path, cfg: ExperimentConfig, seed: int, command: str, extra: dict | None = None) -> None:
    meta = {"command": command, **_sidecar(cfg, seed), "config": cfg.to_dict()}
    if extra:
        meta.update(extra)
    rio.dump_json(out / "meta.json", meta)


def _write_estimates(out: Path, est, nx: int, ny: int, side: dict, prefix: str = "") -> None:
    rio.write_field_csv(out / f"{prefix}field.csv", est.f_mmse, nx, ny, side)
    rio.write_labels_csv(out / f"{prefix}labels.csv", est.z_map, nx, ny, side)
    rio.dump_json(out / f"{prefix}theta.json", est.theta_mmse.to_dict())


def cmd_simulate(cfg: ExperimentConfig, out: Path, seed: int) -> int:
    scene = simulate_scene(cfg, seed)
    grid = scene.geometry.grid
    side = _sidecar(cfg, seed)
    rio.write_scene(out / "scene.json", scene.geometry)
    rio.write_labels_csv(out / "labels.csv", scene.labels, grid.nx, grid.ny, side)
    rio.write_field_csv(out / "field.csv", scene.field, grid.nx, grid.ny, side)
    rio.write_measurement_log(out / "measurements.csv", scene.data)
    _write_meta(out, cfg, seed, "simulate")
    return EXIT_OK


def _load_inputs(cfg: ExperimentConfig):
    d = cfg.data
    if d.scene is None or d.measurements is None:
        raise ConfigError("reconstruction needs data.scene and data.measurements (or --input DIR)")
    geo = rio.read_scene(d.scene)
    data, taus = rio.read_measurement_log(d.measurements, geo)
    truth = None
    if d.labels is not None:
        truth, nx, ny = rio.read_labels_csv(d.labels)
        if (nx, ny) != (geo.grid.nx, geo.grid.ny):
            raise rio.ParseError(d.labels, None, f"label grid is {nx}x{ny}, scene is {geo.grid.nx}x{geo.grid.ny}")
    return geo, data, taus, truth


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, seed: int, method: str, resume: str | None) -> int:
    geo, data, _, truth = _load_inputs(cfg)
    grid = geo.grid
    side = _sidecar(cfg, seed)
    report: dict = {"method": method, "t": data.t}
    if method == "vb":
        state, converged, prior_trace = None, False, []
        if resume is not None:
            state, header = rio.read_checkpoint(resume)
            if state.n_points != grid.n_points or state.K != cfg.scene.K:
                raise rio.ParseError(resume, 1, "checkpoint dimensions do not match the scene")
            converged = bool(header["converged"])
            prior_trace = header["elbo_trace"][:-1]
        v = vb_settings(cfg, seed)
        res = run_vb(
            data, grid, hyper_priors(cfg), potts_params(cfg), n_iter=v.n_iter, xi=v.xi, seed=v.seed,
            state=state, schedule=v.schedule, converged=converged, field_sweeps=v.field_sweeps,
        )
        trace = prior_trace + list(res.elbo_trace)
        _write_estimates(out, res.estimates, grid.nx, grid.ny, side)
        rio.write_elbo_trace(out / "elbo.csv", trace)
        rio.write_checkpoint(out / "checkpoint.txt", res.state, len(trace) - 1, trace, res.converged)
        report.update(converged=res.converged, iterations=len(trace) - 1, elbo_final=trace[-1])
        if truth is not None:
            report["labeling_error"] = labeling_error(truth, res.estimates.z_map)
    else:
        if resume is not None:
            raise ConfigError("--resume only applies to --method vb")
        f_hat, extra = reconstruct_baseline(cfg, data, grid, method)
        rio.write_field_csv(out / "field.csv", f_hat, grid.nx, grid.ny, side)
        if extra is not None:
            rio.write_elbo_trace(out / "objective.csv", extra.objective)
            report.update(converged=extra.converged, status=extra.status, iterations=extra.iterations)
    rio.dump_json(out / "report.json", report)
    _write_meta(out, cfg, seed, "reconstruct")
    return EXIT_OK


def _write_trajectory_outputs(out: Path, traj, grid, side, snapshots: bool) -> None:
    rio.write_trajectory(out / "trajectory.csv", traj.records)
    last = traj.records[-1]
    _write_estimates(out, last.estimates, grid.nx, grid.ny, side)
    taus = []
    for rec in traj.records:
        taus.extend([rec.tau] * (rec.t - len(taus)))
    rio.write_measurement_log(out / "measurements.csv", traj.data, taus)
    if snapshots:
        for rec in traj.records:
            _write_estimates(out / "snapshots", rec.estimates, grid.nx, grid.ny, side, prefix=f"slot{rec.tau:03d}_")


def cmd_adaptive(cfg: ExperimentConfig, out: Path, seed: int) -> int:
    sel = cfg.selection
    side = _sidecar(cfg, seed)
    if sel.source == "synthetic":
        scene = simulate_scene(cfg, seed)
        grid = scene.geometry.grid
        traj = run_trajectory(cfg, scene, seed, sel.mode)
    else:
        geo, log, _, truth = _load_inputs(cfg)
        grid = geo.grid
        n0 = min(cfg.scene.initial_measurements, log.t)
        initial = log.subset(range(n0))
        acq = LogAcquirer(log, used=range(n0))
        sched = AdaptiveSchedule(sel.slots, sel.pool_size, sel.batch, derive_seed(seed, "pool"), sel.mode)
        traj = run_adaptive(initial, grid, hyper_priors(cfg), potts_params(cfg), sched, acq,
                            vb_settings(cfg, seed), truth)
    _write_trajectory_outputs(out, traj, grid, side, sel.snapshots)
    rio.dump_json(out / "report.json", {"status": traj.status, "slots_completed": len(traj.records) - 1,
                                         "t_final": traj.data.t})
    _write_meta(out, cfg, seed, "adaptive")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, out: Path, seed: int) -> int:
    ev = cfg.evaluation
    report = run_mc(PairedExperiment(cfg.to_dict(), seed), ev.runs, seed, workers=ev.workers)
    rio.write_report_csv(out / "report.csv", report.rows())
    runs_rows = []
    for m in report.metrics:
        for s, trace in zip(report.seeds, report.runs[m]):
            runs_rows.extend((m, s, slot, float(v)) for slot, v in enumerate(trace))
    lines = ["metric,seed,slot,value"] + [f"{m},{s},{slot},{v!r}" for m, s, slot, v in runs_rows]
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "runs_ok": len(report.seeds),
        "failures": [{"seed": s, "error": e} for s, e in report.failures],
        "final": {m: {"mean": float(report.mean(m)[-1]), "std": float(report.std(m)[-1])} for m in report.metrics},
    }
    rio.dump_json(out / "summary.json", summary)
    _write_meta(out, cfg, seed, "evaluate")
    return EXIT_OK if report.seeds else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radiotomo", description="Radio tomographic imaging toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value; VALUE is parsed as JSON when possible")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        return p

    common(sub.add_parser("simulate", help="generate a synthetic scene and initial measurements"))
    rec = common(sub.add_parser("reconstruct", help="estimate the loss field from a measurement log"))
    rec.add_argument("--method", choices=["vb", "ridge", "tv"], default="vb")
    rec.add_argument("--input", help="directory holding scene.json and measurements.csv (and labels.csv)")
    rec.add_argument("--resume", help="checkpoint file from an earlier vb run")
    common(sub.add_parser("adaptive", help="run the adaptive measure/reconstruct loop"))
    common(sub.add_parser("evaluate", help="Monte Carlo comparison of adaptive and random selection"))
    return parser


def _input_overrides(input_dir: str) -> list[str]:
    d = Path(input_dir).resolve()
    out = [f"data.scene={d / 'scene.json'}", f"data.measurements={d / 'measurements.csv'}"]
    if (d / "labels.csv").is_file():
        out.append(f"data.labels={d / 'labels.csv'}")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        overrides = list(args.overrides)
        if getattr(args, "input", None):
            overrides = _input_overrides(args.input) + overrides
        cfg = load_config(args.config, overrides)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.seed)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out, args.seed, args.method, args.resume)
        if args.command == "adaptive":
            return cmd_adaptive(cfg, out, args.seed)
        return cmd_evaluate(cfg, out, args.seed)
    except ConfigError as exc:
        print(f"radiotomo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except rio.ParseError as exc:
        print(f"radiotomo: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"radiotomo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"radiotomo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"radiotomo: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
