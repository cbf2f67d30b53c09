"""Run configuration and on-disk formats.

Trajectory CSV (``format_version=1``)::

    # format_version=1
    # model=one_d
    # T=5
    k,s_k,t_k,tau_k,lambda_k,I1_k,I2_k,norm_dz_V,rejected_count
    0,0,0,0,0,0,0,0,0
    ...

Floats are written with 17 significant digits, so a written trajectory
reparses bit-identically.  State vectors go to a companion file
``<stem>_states.npy`` (or ``.csv``), one row per record.
"""
from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation
from .metric import DiagonalMetric, norm_V
from .scheme import Trajectory, step_size_stats, trajectory_from_arrays
from .stationarity import SolverOptions

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

FORMAT_VERSION = 1
CSV_COLUMNS = ("k", "s_k", "t_k", "tau_k", "lambda_k", "I1_k", "I2_k", "norm_dz_V", "rejected_count")
MODES = ("adaptive", "uniform", "nested")
MODELS = ("one_d", "fem2d")
_FLOAT = "%.17g"


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def states_path_for(csv_path, fmt: str = "npy") -> Path:
    p = Path(csv_path)
    return p.with_name(f"{p.stem}_states.{fmt}")


def write_trajectory(traj: Trajectory, csv_path, metric: DiagonalMetric | None = None, states: str = "npy", meta: dict | None = None) -> tuple[Path, Path]:
    """Write the per-step table and the state snapshots; returns both paths."""
    if states not in ("npy", "csv"):
        raise ContractViolation(f"states format must be 'npy' or 'csv', got {states!r}")
    csv_path = Path(csv_path)
    z = traj.z
    dz = np.diff(z, axis=0)
    ndz = np.zeros(len(traj))
    if len(dz):
        ndz[1:] = norm_V(dz, metric) if metric is not None else np.linalg.norm(dz, axis=1)
    header = {"format_version": FORMAT_VERSION, "model": traj.model_name}
    if traj.T is not None:
        header["T"] = repr(float(traj.T))
    if traj.tol is not None:
        header["tol"] = repr(float(traj.tol))
    header.update(meta or {})
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in header.items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for i, r in enumerate(traj.records):
            vals = (r.s, r.t, r.tau, r.lam, r.I1, r.I2, ndz[i])
            fh.write(f"{r.k}," + ",".join(_FLOAT % v for v in vals) + f",{r.rejected_count}\n")

    spath = states_path_for(csv_path, states)
    if states == "npy":
        np.save(spath, z)
    else:
        with open(spath, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# format_version={FORMAT_VERSION}\n")
            fh.write("k," + ",".join(f"z_{j}" for j in range(z.shape[1])) + "\n")
            for k, row in enumerate(z):
                fh.write(f"{k}," + ",".join(_FLOAT % v for v in row) + "\n")
    return csv_path, spath


def _read_table(path):
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = val.strip()
                continue
            lines.append(line)
    if not lines:
        raise ValueError(f"{path}: no header row")
    version = meta.get("format_version")
    if version is not None and int(version) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version}")
    cols = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for i, row in enumerate(rows):
        if len(row) != len(cols):
            raise ValueError(f"{path}: row {i + 1} has {len(row)} fields, expected {len(cols)}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(cols))
    return meta, cols, data


def read_states(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    _, cols, data = _read_table(path)
    if cols[0] != "k":
        raise ValueError(f"{path}: first column must be k")
    return data[:, 1:]


def read_trajectory(csv_path, states_path=None) -> Trajectory:
    """Inverse of :func:`write_trajectory`."""
    csv_path = Path(csv_path)
    meta, cols, data = _read_table(csv_path)
    missing = [c for c in CSV_COLUMNS if c not in cols]
    if missing:
        raise ValueError(f"{csv_path}: missing columns {missing}")
    col = {c: data[:, cols.index(c)] for c in CSV_COLUMNS}
    if states_path is None:
        cands = [states_path_for(csv_path, f) for f in ("npy", "csv")]
        found = [p for p in cands if p.exists()]
        if not found:
            raise FileNotFoundError(f"no state file next to {csv_path}")
        states_path = found[0]
    z = read_states(states_path)
    if z.shape[0] != data.shape[0]:
        raise ValueError(f"{states_path}: {z.shape[0]} states for {data.shape[0]} records")
    T = float(meta["T"]) if "T" in meta else None
    tol = float(meta["tol"]) if "tol" in meta else None
    return trajectory_from_arrays(
        col["s_k"], col["t_k"], z, T=T, model_name=meta.get("model", "custom"), tol=tol,
        tau=col["tau_k"][1:],
        lam=col["lambda_k"], I1=col["I1_k"], I2=col["I2_k"],
        rejected_count=col["rejected_count"].astype(int),
    )


def read_meta(csv_path) -> dict:
    meta = {}
    with open(csv_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, sep, val = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = val.strip()
    return meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(obj: dict, path) -> Path:
    path = Path(path)
    payload = {"format_version": FORMAT_VERSION, **_jsonable(obj)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return path


def run_summary(traj: Trajectory, segments, extra: dict | None = None) -> dict:
    out = {
        "kind": "run_summary",
        "model": traj.model_name,
        "tol": traj.tol,
        "T": traj.T,
        "S": traj.S,
        "N_tol": traj.N_tol,
        "n_steps": traj.n_steps,
        "reached_T": traj.reached_T,
        "t_end": float(traj.t[-1]),
        **traj.residuum_totals(),
        "sum_I1": float(sum(r.I1 for r in traj.records[1:])),
        "sum_I2": float(sum(r.I2 for r in traj.records[1:])),
        **step_size_stats(traj),
        "max_kkt": float(max((r.kkt_max for r in traj.records[1:]), default=0.0)),
        "fallback_steps": int(sum(r.fallback_used for r in traj.records[1:])),
        "regime_segments": [{"s0": g.s0, "s1": g.s1, "label": g.label} for g in segments],
    }
    out.update(extra or {})
    return out


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a run needs; no randomness is involved anywhere."""

    model: str = "one_d"
    n_per_side: int = 21
    mode: str = "adaptive"
    tol: float | None = 1e-3
    tol_sequence: list = field(default_factory=list)
    tau_init: float | None = None
    tau: float | None = None          # uniform mode; None: matched to an adaptive run
    nq: int = 8
    solver: SolverOptions = field(default_factory=SolverOptions)
    out_dir: str = "out"
    states: str = "npy"
    plots: bool = False
    workers: int = 1
    verify_nq: int = 64
    gates: dict = field(default_factory=dict)


_SECTIONS = {
    "model": {"kind": str, "n_per_side": int},
    "run": {"mode": str, "tol": float, "tol_sequence": list, "tau_init": float, "tau": float, "nq": int},
    "solver": {
        "newton_tol": float, "kkt_tol": float, "max_newton": int, "max_fallback": int,
        "armijo_c": float, "armijo_shrink": float, "max_backtracks": int,
        "stagnation_window": int, "gamma": float,
    },
    "output": {"dir": str, "states": str, "plots": bool},
    "sweep": {"workers": int},
    "verify": {"nq_fine": int, "normalization": float, "endtime": float, "absolute": float},
}


def _line_of(text: str, section: str | None, key: str | None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return None


def _coerce(value, typ, where, line):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}", line)
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}", line)
        return value
    if not isinstance(value, typ):
        raise ConfigError(f"{where} must be of type {typ.__name__}, got {value!r}", line)
    return value


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a validated :class:`RunConfig`.

    Errors carry the line number of the offending key where it can be found.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc

    version = raw.pop("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}", _line_of(text, None, "format_version"))
    cfg = RunConfig()
    solver_kw = {}
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section, None))
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", _line_of(text, None, section))
        for key, value in body.items():
            line = _line_of(text, section, key)
            typ = _SECTIONS[section].get(key)
            if typ is None:
                raise ConfigError(f"unknown key {section}.{key}", line)
            value = _coerce(value, typ, f"{section}.{key}", line)
            if section == "solver":
                solver_kw[key] = value
            elif section == "model":
                setattr(cfg, "model" if key == "kind" else key, value)
            elif section == "output":
                setattr(cfg, "out_dir" if key == "dir" else key, value)
            elif section == "sweep":
                cfg.workers = value
            elif section == "verify":
                if key == "nq_fine":
                    cfg.verify_nq = value
                else:
                    cfg.gates[key] = value
            else:
                setattr(cfg, key, value)
    _validate(cfg, text)
    try:
        cfg.solver = SolverOptions(**solver_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver options: {exc}", _line_of(text, "solver", None)) from exc
    return cfg


def _validate(cfg: RunConfig, text: str) -> None:
    def fail(msg, section, key):
        raise ConfigError(msg, _line_of(text, section, key))

    if cfg.model not in MODELS:
        fail(f"model.kind must be one of {MODELS}, got {cfg.model!r}", "model", "kind")
    if cfg.n_per_side < 3:
        fail("model.n_per_side must be >= 3", "model", "n_per_side")
    if cfg.mode not in MODES:
        fail(f"run.mode must be one of {MODES}, got {cfg.mode!r}", "run", "mode")
    if cfg.tol is not None and not (cfg.tol > 0.0 and math.isfinite(cfg.tol)):
        fail(f"run.tol must be positive, got {cfg.tol!r}", "run", "tol")
    seq = []
    for x in cfg.tol_sequence:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0.0:
            fail(f"run.tol_sequence entries must be positive numbers, got {x!r}", "run", "tol_sequence")
        seq.append(float(x))
    if any(b >= a for a, b in zip(seq, seq[1:])):
        fail("run.tol_sequence must be strictly decreasing", "run", "tol_sequence")
    cfg.tol_sequence = seq
    if cfg.tau_init is not None and not cfg.tau_init > 0.0:
        fail("run.tau_init must be positive", "run", "tau_init")
    if cfg.tau is not None and not cfg.tau > 0.0:
        fail("run.tau must be positive", "run", "tau")
    if cfg.nq < 2 or cfg.nq % 2:
        fail("run.nq must be an even integer >= 2", "run", "nq")
    if cfg.states not in ("npy", "csv"):
        fail("output.states must be 'npy' or 'csv'", "output", "states")
    if cfg.workers < 1:
        fail("sweep.workers must be >= 1", "sweep", "workers")
    if cfg.verify_nq < 2 or cfg.verify_nq % 2:
        fail("verify.nq_fine must be an even integer >= 2", "verify", "nq_fine")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
