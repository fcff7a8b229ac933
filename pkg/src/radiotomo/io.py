"""File formats for everything the command line reads or writes.

Floats are written with ``repr`` so that reading a file back recovers
every value exactly, which keeps write/read/write cycles byte-identical.
Sensor indices and labels are 1-based on disk and 0-based in memory.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .geometry import Geometry, Link
from .measurements import MeasurementSet
from .vb import VariationalState


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def _float(tok: str, path, line: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(path, line, f"not a number: {tok!r}") from None


def _int(tok: str, path, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, line, f"not an integer: {tok!r}") from None


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def dump_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None


# -- grids -------------------------------------------------------------------


def grid_rows(x, nx: int, ny: int) -> list[list]:
    """Split a vec-ordered field into ``ny`` rows of ``nx`` values."""
    x = np.asarray(x).reshape(-1)
    if x.size != nx * ny:
        raise ValueError(f"field has {x.size} entries, expected {nx * ny}")
    return [x[b * nx:(b + 1) * nx].tolist() for b in range(ny)]


def write_field_csv(path, x, nx: int, ny: int, sidecar: dict | None = None) -> None:
    """Write ``ny`` rows of ``nx`` values; row ``b`` holds grid points ``(., b)``."""
    lines = [",".join(_fmt(v) for v in row) for row in grid_rows(x, nx, ny)]
    _write_text(path, "\n".join(lines) + "\n")
    if sidecar is not None:
        dump_json(str(path) + ".json", {"nx": nx, "ny": ny, **sidecar})


def write_labels_csv(path, z, nx: int, ny: int, sidecar: dict | None = None) -> None:
    """Write 0-based labels as 1-based integers in the grid layout."""
    z = np.asarray(z, dtype=np.int64)
    lines = [",".join(str(v + 1) for v in row) for row in grid_rows(z, nx, ny)]
    _write_text(path, "\n".join(lines) + "\n")
    if sidecar is not None:
        dump_json(str(path) + ".json", {"nx": nx, "ny": ny, **sidecar})


def _read_grid(path, conv) -> tuple[list, int, int]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            vals = [conv(tok.strip(), path, ln) for tok in row]
            if rows and len(vals) != len(rows[0]):
                raise ParseError(path, ln, f"expected {len(rows[0])} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(path, None, "file is empty")
    return [v for r in rows for v in r], len(rows[0]), len(rows)


def read_field_csv(path) -> tuple[np.ndarray, int, int]:
    """Return ``(vec field, nx, ny)``."""
    vals, nx, ny = _read_grid(path, _float)
    return np.array(vals, dtype=float), nx, ny


def read_labels_csv(path) -> tuple[np.ndarray, int, int]:
    vals, nx, ny = _read_grid(path, _int)
    z = np.array(vals, dtype=np.int64)
    if z.min() < 1:
        raise ParseError(path, None, "labels must be >= 1")
    return z - 1, nx, ny


# -- measurement logs ----------------------------------------------------------

LOG_HEADER = ["tau", "n", "n_prime", "shadowing"]


def write_measurement_log(path, data: MeasurementSet, taus=None) -> None:
    taus = [0] * data.t if taus is None else list(taus)
    buf = _io.StringIO()
    buf.write(",".join(LOG_HEADER) + "\n")
    for tau, link, s in zip(taus, data.links, data.shadowing):
        buf.write(f"{int(tau)},{link.tx + 1},{link.rx + 1},{_fmt(s)}\n")
    _write_text(path, buf.getvalue())


def read_measurement_log(path, geometry: Geometry) -> tuple[MeasurementSet, list[int]]:
    """Parse a log and rebuild the weight columns from ``geometry``."""
    path = Path(path)
    links, values, taus = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LOG_HEADER:
            raise ParseError(path, 1, f"header must be {','.join(LOG_HEADER)}")
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, ln, f"expected 4 fields, found {len(row)}")
            tau, n, n2 = (_int(tok.strip(), path, ln) for tok in row[:3])
            s = _float(row[3].strip(), path, ln)
            if not (1 <= n <= geometry.sensors.N and 1 <= n2 <= geometry.sensors.N):
                raise ParseError(path, ln, f"sensor index out of range 1..{geometry.sensors.N}")
            if n == n2:
                raise ParseError(path, ln, "transmitter and receiver coincide")
            links.append(Link(n - 1, n2 - 1))
            values.append(s)
            taus.append(tau)
    W = geometry.weight_matrix(links)
    return MeasurementSet.from_arrays(W, values, links), taus


# -- scenes ----------------------------------------------------------------------


def write_scene(path, geometry: Geometry) -> None:
    dump_json(path, geometry.to_dict())


def read_scene(path) -> Geometry:
    d = load_json(path)
    try:
        return Geometry.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ParseError(path, None, str(exc)) from None


# -- checkpoints -----------------------------------------------------------------

_STATE_ARRAYS = ("field_mean", "field_var", "label_prob", "mean_mean", "mean_var", "prec_shape", "prec_scale")


def checkpoint_text(state: VariationalState, iteration: int, elbo_trace, converged: bool) -> str:
    header = {
        "format": "radiotomo-checkpoint/1",
        "n_points": state.n_points,
        "K": state.K,
        "iteration": int(iteration),
        "converged": bool(converged),
        "noise_shape": _fmt(state.noise_shape),
        "noise_scale": _fmt(state.noise_scale),
        "elbo_trace": [_fmt(v) for v in elbo_trace],
    }
    out = [json.dumps(header, sort_keys=True)]
    for name in _STATE_ARRAYS:
        arr = np.atleast_2d(getattr(state, name))
        if name in ("mean_mean", "mean_var", "prec_shape", "prec_scale"):
            arr = arr.reshape(1, -1)
        out.append(f"# {name} {arr.shape[0]} {arr.shape[1]}")
        out.extend(",".join(_fmt(v) for v in row) for row in arr)
    return "\n".join(out) + "\n"


def write_checkpoint(path, state: VariationalState, iteration: int, elbo_trace, converged: bool) -> None:
    _write_text(path, checkpoint_text(state, iteration, elbo_trace, converged))


def read_checkpoint(path) -> tuple[VariationalState, dict]:
    """Return the state (caches not yet computed) and the parsed header."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(path, None, "checkpoint is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(path, 1, f"bad header: {exc.msg}") from None
    if header.get("format") != "radiotomo-checkpoint/1":
        raise ParseError(path, 1, "unknown checkpoint format")
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "#":
            raise ParseError(path, i + 1, "expected a block header '# name rows cols'")
        name, r, c = parts[1], _int(parts[2], path, i + 1), _int(parts[3], path, i + 1)
        block = []
        for j in range(r):
            ln = i + 2 + j
            if ln > len(lines):
                raise ParseError(path, ln, f"block {name} is truncated")
            row = [_float(tok, path, ln) for tok in lines[ln - 1].split(",")]
            if len(row) != c:
                raise ParseError(path, ln, f"expected {c} values, found {len(row)}")
            block.append(row)
        arrays[name] = np.array(block, dtype=float)
        i += 1 + r
    missing = [n for n in _STATE_ARRAYS if n not in arrays]
    if missing:
        raise ParseError(path, None, f"missing blocks: {', '.join(missing)}")
    state = VariationalState(
        field_mean=arrays["field_mean"],
        field_var=arrays["field_var"],
        label_prob=arrays["label_prob"],
        noise_shape=float(header["noise_shape"]),
        noise_scale=float(header["noise_scale"]),
        mean_mean=arrays["mean_mean"].reshape(-1),
        mean_var=arrays["mean_var"].reshape(-1),
        prec_shape=arrays["prec_shape"].reshape(-1),
        prec_scale=arrays["prec_scale"].reshape(-1),
    )
    header["elbo_trace"] = [float(v) for v in header["elbo_trace"]]
    return state, header


# -- trajectories and reports ----------------------------------------------------


def write_trajectory(path, records) -> None:
    buf = _io.StringIO()
    buf.write("tau,t,elbo_final,labeling_error,selected_pairs\n")
    for r in records:
        err = "" if r.labeling_error is None else _fmt(r.labeling_error)
        pairs = ";".join(f"{p.tx + 1}-{p.rx + 1}" for p in r.selected)
        buf.write(f"{r.tau},{r.t},{_fmt(r.elbo_final)},{err},{pairs}\n")
    _write_text(path, buf.getvalue())


def write_elbo_trace(path, trace) -> None:
    _write_text(path, "iteration,elbo\n" + "".join(f"{i},{_fmt(v)}\n" for i, v in enumerate(trace)))


def write_report_csv(path, rows) -> None:
    """Rows of ``(metric, slot, mean, std)``."""
    buf = _io.StringIO()
    buf.write("metric,slot,mean,std\n")
    for m, slot, mu, sd in rows:
        buf.write(f"{m},{slot},{_fmt(mu)},{_fmt(sd)}\n")
    _write_text(path, buf.getvalue())
