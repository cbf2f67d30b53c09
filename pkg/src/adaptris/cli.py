"""Command-line interface: ``run``, ``verify``, ``sweep`` and ``dump-mesh``.

Exit codes: 0 success, 2 configuration or usage error, 3 solver failure,
4 verification failed, 5 file I/O or parse error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    ConfigError,
    ContractViolation,
    IndefiniteOperatorError,
    ModelEvaluationError,
    SolverError,
)
from .fem2d import build_mesh, dump_mesh_json, make_model_fem
from .io import (
    MODES,
    _jsonable,
    RunConfig,
    load_config,
    read_meta,
    read_trajectory,
    run_summary,
    write_json,
    write_trajectory,
)
from .model import make_model_1d
from .scheme import RunOptions, adaptive_run, nested_run, nesting_defect, uniform_run
from .verify import Gates, check_bv, classify_regimes

log = logging.getLogger("adaptris")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4, 5
SWEEP_COLUMNS = ("tol", "mode", "N_steps", "max_residuum", "sum_residuum", "S", "wall_time", "tau_min")


def build_model(kind: str, n_per_side: int = 21):
    if kind == "one_d":
        return make_model_1d()
    if kind == "fem2d":
        return make_model_fem(build_mesh(n_per_side))
    raise ConfigError(f"unknown model {kind!r}")


def _run_options(cfg: RunConfig) -> RunOptions:
    return RunOptions(nq=cfg.nq, solver=cfg.solver)


def _model_meta(cfg: RunConfig) -> dict:
    return {"n_per_side": cfg.n_per_side} if cfg.model == "fem2d" else {}


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _plot(traj, out_dir: Path, stem: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plots")
        return
    meta = {"Date": None}
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    ax1.plot(traj.s, traj.t, "-", lw=1, label="t")
    if traj.dim == 1:
        ax1.plot(traj.s, traj.z[:, 0], "-", lw=1, label="z")
    else:
        ax1.plot(traj.s, np.abs(traj.z).max(axis=1), "-", lw=1, label="max |z|")
    ax1.legend()
    ax2.semilogy(traj.s[1:], traj.tau, ".", ms=2)
    ax2.set_ylabel("step size")
    ax2.set_xlabel("s")
    fig.tight_layout()
    fig.savefig(out_dir / f"{stem}.svg", metadata=meta)
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_run(traj, mdl, cfg: RunConfig, out: Path, stem: str, extra: dict) -> dict:
    meta = {"mode": extra.get("mode", cfg.mode), **_model_meta(cfg)}
    write_trajectory(traj, out / f"{stem}.csv", mdl.metric, cfg.states, meta)
    segments = classify_regimes(traj, metric=mdl.metric)
    summary = run_summary(traj, segments, extra)
    write_json(summary, out / f"{stem}_summary.json")
    if cfg.plots:
        _plot(traj, out, stem)
    return summary


def cmd_run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    mdl = build_model(cfg.model, cfg.n_per_side)
    opts = _run_options(cfg)
    start = time.perf_counter()
    if cfg.mode == "nested":
        tols = cfg.tol_sequence or ([cfg.tol] if cfg.tol else [])
        if not tols:
            raise ConfigError("nested mode needs run.tol_sequence")
        levels = nested_run(mdl, tols, cfg.tau_init, opts)
        wall = time.perf_counter() - start
        for n, traj in enumerate(levels, start=1):
            defect = nesting_defect(levels[n - 2], traj) if n > 1 else 0.0
            _write_run(traj, mdl, cfg, out, f"trajectory_level{n}", {"mode": "nested", "level": n, "nesting_defect": defect})
        log.info("nested run: %d levels in %.2fs", len(levels), wall)
        return EXIT_OK
    if cfg.tol is None and cfg.mode == "adaptive":
        raise ConfigError("adaptive mode needs run.tol")
    if cfg.mode == "uniform":
        tau = cfg.tau
        if tau is None:
            if cfg.tol is None:
                raise ConfigError("uniform mode needs run.tau or run.tol")
            tau = float(adaptive_run(mdl, cfg.tol, cfg.tau_init, opts).tau.min())
        traj = uniform_run(mdl, tau, opts, tol=cfg.tol)
        extra = {"mode": "uniform", "tau_uniform": tau}
    else:
        traj = adaptive_run(mdl, cfg.tol, cfg.tau_init, opts)
        extra = {"mode": "adaptive"}
    extra["wall_time"] = time.perf_counter() - start
    summary = _write_run(traj, mdl, cfg, out, "trajectory", extra)
    log.info(
        "%s run: %d steps, S=%.6g, t_end=%.6g, %.2fs",
        extra["mode"], summary["n_steps"], summary["S"], summary["t_end"], extra["wall_time"],
    )
    return EXIT_OK


def cmd_verify(paths, model_kind, n_per_side, cfg: RunConfig, nq_fine, out) -> int:
    status = EXIT_OK
    reports = []
    for path in paths:
        meta = read_meta(path)
        kind = model_kind or meta.get("model")
        if kind not in ("one_d", "fem2d"):
            raise ConfigError(f"{path}: model unknown; pass --model")
        n = n_per_side or int(meta.get("n_per_side", cfg.n_per_side))
        traj = read_trajectory(path)
        mdl = build_model(kind, n)
        report = check_bv(traj, mdl, nq_fine or cfg.verify_nq)
        # I2 >= 0 is a property of scheme output, which carries its mode
        gates = Gates(i2_nonnegative="mode" in meta, **cfg.gates)
        results = report.gate_results(gates)
        ok = all(results.values())
        reports.append({"file": str(path), "model": kind, "passed": ok, "gates": results, "report": report.to_dict()})
        for name, passed in results.items():
            if not passed:
                log.error("%s: gate %s failed", path, name)
        if not ok:
            status = EXIT_VERIFY
    payload = {"kind": "verification_report", "files": reports}
    if out:
        write_json(payload, out)
    else:
        print(json.dumps(_jsonable(payload), indent=2))
    return status


def _sweep_one(job):
    mode, tol, cfg, out_dir, tau = job
    _kernels.warmup()
    mdl = build_model(cfg.model, cfg.n_per_side)
    opts = _run_options(cfg)
    start = time.perf_counter()
    if mode == "uniform":
        traj = uniform_run(mdl, tau, opts, tol=tol)
    else:
        traj = adaptive_run(mdl, tol, cfg.tau_init, opts)
    wall = time.perf_counter() - start
    write_trajectory(traj, Path(out_dir) / f"{mode}_tol{tol:g}.csv", mdl.metric, cfg.states, {"mode": mode, **_model_meta(cfg)})
    return _row(traj, mode, tol, wall)


def _row(traj, mode, tol, wall):
    totals = traj.residuum_totals()
    return {
        "tol": tol,
        "mode": mode,
        "N_steps": traj.n_steps,
        "max_residuum": totals["max_residuum"],
        "sum_residuum": totals["sum_residuum"],
        "S": traj.S,
        "wall_time": wall,
        "tau_min": float(traj.tau.min()),
    }


def _map(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


def cmd_sweep(cfg: RunConfig, modes, out: Path) -> int:
    tols = cfg.tol_sequence
    if len(tols) < 2:
        raise ConfigError("sweep needs at least two tolerances in run.tol_sequence")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    extra = {}
    if "adaptive" in modes or "uniform" in modes:
        adaptive = _map([("adaptive", tol, cfg, out, None) for tol in tols], cfg.workers)
        if "adaptive" in modes:
            rows.extend(adaptive)
        if "uniform" in modes:
            # uniform step = smallest accepted adaptive step at the same tol
            taus = [cfg.tau or r["tau_min"] for r in adaptive]
            rows.extend(_map([("uniform", tol, cfg, out, tau) for tol, tau in zip(tols, taus)], cfg.workers))
    if "nested" in modes:
        mdl = build_model(cfg.model, cfg.n_per_side)
        start = time.perf_counter()
        levels = nested_run(mdl, tols, cfg.tau_init, _run_options(cfg))
        wall = time.perf_counter() - start
        defects = []
        for n, traj in enumerate(levels, start=1):
            write_trajectory(traj, out / f"nested_level{n}.csv", mdl.metric, cfg.states, {"mode": "nested", **_model_meta(cfg)})
            rows.append(_row(traj, "nested", tols[n - 1], wall / len(levels)))
            if n > 1:
                defects.append(nesting_defect(levels[n - 2], traj))
        extra["nesting_defects"] = defects
        extra["nested_inclusion"] = all(d == 0.0 for d in defects)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writerow({c: c for c in SWEEP_COLUMNS})
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    write_json({"kind": "sweep_summary", "model": cfg.model, "tols": tols, "modes": list(modes), "rows": rows, **extra}, out / "sweep_summary.json")
    for row in rows:
        log.info("%-8s tol=%-8g N=%-6d max=%.3e sum=%.3e S=%.4g", row["mode"], row["tol"], row["N_steps"], row["max_residuum"], row["sum_residuum"], row["S"])
    return EXIT_OK


def cmd_dump_mesh(n_per_side: int, out: Path) -> int:
    dump_mesh_json(build_mesh(n_per_side), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptris", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML run configuration")
        sp.add_argument("--nq", type=int, help="Simpson subintervals per step (even)")

    r = sub.add_parser("run", help="compute one trajectory (or one nested family)")
    common(r)
    r.add_argument("--out", type=Path, help="output directory")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--tol", type=float)
    r.add_argument("--plots", action="store_true", help="write SVG plots (needs matplotlib)")

    v = sub.add_parser("verify", help="certify trajectory CSV files")
    common(v)
    v.add_argument("files", nargs="+", type=Path)
    v.add_argument("--model", choices=("one_d", "fem2d"))
    v.add_argument("--n-per-side", type=int)
    v.add_argument("--out", type=Path, help="report JSON path (default: stdout)")

    s = sub.add_parser("sweep", help="tolerance sweep comparing step-size strategies")
    common(s)
    s.add_argument("--out", type=Path)
    s.add_argument("--mode", default="adaptive,uniform", help="comma-separated subset of adaptive,uniform,nested")
    s.add_argument("--workers", type=int)

    d = sub.add_parser("dump-mesh", help="write the FEM mesh and operators as JSON")
    common(d)
    d.add_argument("--n-per-side", type=int)
    d.add_argument("--out", type=Path, required=True)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "nq", None) is not None:
        if args.nq < 2 or args.nq % 2:
            raise ConfigError("--nq must be an even integer >= 2")
        cfg = replace(cfg, nq=args.nq, verify_nq=args.nq if args.command == "verify" else cfg.verify_nq)
    if args.command == "run":
        if args.mode:
            cfg = replace(cfg, mode=args.mode)
        if args.tol is not None:
            if not args.tol > 0.0:
                raise ConfigError(f"--tol must be positive, got {args.tol}")
            cfg = replace(cfg, tol=args.tol)
        if args.plots:
            cfg = replace(cfg, plots=True)
    if args.command == "sweep" and args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "n_per_side", None) is not None:
        cfg = replace(cfg, n_per_side=args.n_per_side)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        out = args.out if getattr(args, "out", None) else Path(cfg.out_dir)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "verify":
            return cmd_verify(args.files, args.model, args.n_per_side, cfg, args.nq, args.out)
        if args.command == "sweep":
            modes = tuple(m.strip() for m in args.mode.split(",") if m.strip())
            bad = [m for m in modes if m not in MODES]
            if bad or not modes:
                raise ConfigError(f"--mode entries must be in {MODES}, got {args.mode!r}")
            return cmd_sweep(cfg, modes, out)
        return cmd_dump_mesh(cfg.n_per_side, out)
    except (ConfigError, ContractViolation) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (SolverError, ModelEvaluationError, IndefiniteOperatorError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (OSError, ValueError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
