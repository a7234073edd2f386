"""Command-line scenario runner.

Every subcommand reads one TOML scenario, writes CSV/JSON artifacts into its
output directory and finishes with ``manifest.json``.  Exit status: 0 on
success, 1 on solver or check failure, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import adaptedness_check, holder_exponent
from .config import ConfigError, RunConfig, load_config
from .fbsde import WindowFailure, global_continuation
from .grid import BlowUpError, GridSpec
from .inviscid import ShockError, inviscid_solve, viscosity_sweep
from .model import default_cutoff_level, reconstruct, transformed_force
from .noise import (BrownianPath, NoiseField, build_brownian, couple_brownian, mollify_in_time,
                    synthesize_noise_field, write_noise)
from .pde import CFLError, fd_solve_forward

logger = logging.getLogger("stochburgers")

ENV_OUT = "STOCHBURGERS_OUT"
DEFAULT_ROOT = "stochburgers-runs"
SUBCOMMANDS = ("solve-fd", "solve-fbsde", "solve-inviscid", "compare", "inviscid-sweep", "holder",
               "adaptedness", "report")
FAILURES = (WindowFailure, BlowUpError, CFLError, ShockError)


class CheckFailed(RuntimeError):
    """A subcommand's own acceptance check did not pass."""


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, out: Path, cfg: RunConfig | None, args: argparse.Namespace) -> None:
        self.command = command
        self.out = out
        self.cfg = cfg
        self.args = args
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.summary: dict = {}
        out.mkdir(parents=True, exist_ok=True)
        self._clear_previous()

    def _clear_previous(self) -> None:
        man = self.out / "manifest.json"
        if not man.exists():
            return
        try:
            old = json.loads(man.read_text())
        except (OSError, ValueError):
            return
        for entry in old.get("files", []):
            p = self.out / entry["name"]
            if p.is_file():
                p.unlink()

    @contextlib.contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = round(time.perf_counter() - t0, 6)

    def register(self, path: Path) -> Path:
        name = str(path.relative_to(self.out))
        if name not in self.files:
            self.files.append(name)
        return path

    def write_csv(self, name: str, header: list[str], rows: np.ndarray) -> Path:
        path = self.out / name
        rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
        return self.register(path)

    def write_json(self, name: str, obj) -> Path:
        path = self.out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return self.register(path)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        return self.register(path)

    def manifest(self, status: int, message: str = "") -> None:
        files = []
        for name in self.files:
            data = (self.out / name).read_bytes()
            files.append({"name": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        cfg = self.cfg
        man = {
            "subcommand": self.command,
            "status": status,
            "message": message,
            "config": None if cfg is None else cfg.source,
            "config_hash": None if cfg is None else cfg.hash,
            "seeds": {} if cfg is None else cfg.seeds,
            "threads": self.args.threads,
            "tol_override": self.args.tol,
            "versions": {"stochburgers": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "timings": self.timings,
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": files,
            "summary": self.summary,
        }
        (self.out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _noise(cfg: RunConfig, grid: GridSpec | None = None, seed: int | None = None) -> NoiseField:
    grid = grid or cfg.grid
    q = cfg.problem
    B = build_brownian(cfg.noise_seed if seed is None else seed, q.d, q.T, grid.steps)
    return _noise_from_path(cfg, B, grid)


def _noise_from_path(cfg: RunConfig, B: BrownianPath, grid: GridSpec) -> NoiseField:
    eta = synthesize_noise_field(cfg.problem.g, B, grid, cfg.problem.beta)
    return mollify_in_time(eta, cfg.mollify) if cfg.mollify else eta


def _field_rows(grid: GridSpec, times: np.ndarray, channels: dict[str, np.ndarray]):
    pts = grid.points()
    q = pts.shape[0]
    nt = len(times)
    cols = [np.repeat(np.arange(nt), q), np.repeat(times, q), np.tile(np.arange(q), nt)]
    cols += [np.tile(pts[:, a], nt) for a in range(grid.ndim)]
    header = ["j", "t", "node"] + [f"x{a}" for a in range(grid.ndim)]
    for name, arr in channels.items():
        flat = np.asarray(arr).reshape(nt * q, -1)
        cols += [flat[:, c] for c in range(flat.shape[1])]
        header += [f"{name}{c}" for c in range(flat.shape[1])]
    return header, np.column_stack(cols)


def _maybe_write_noise(run: Run, eta: NoiseField) -> None:
    if run.cfg.section("output").get("noise", False):
        csv_path, side = write_noise(eta, run.out / "noise.csv")
        run.register(csv_path)
        run.register(side)


def _tol(run: Run, section: str, key: str, default: float) -> float:
    if run.args.tol is not None:
        return float(run.args.tol)
    return float(run.cfg.section(section).get(key, default))


def _fbsde_extra(cfg: RunConfig) -> dict:
    return cfg.section("fbsde_extra")


def cmd_solve_fd(run: Run) -> int:
    cfg = run.cfg
    with run.timed("noise"):
        eta = _noise(cfg)
    _maybe_write_noise(run, eta)
    opts = cfg.section("fd")
    with run.timed("solve"):
        yhat = fd_solve_forward(cfg.problem, eta, cfg.grid, scheme=opts.get("scheme", "minmod"))
    y = reconstruct(yhat, eta)
    header, rows = _field_rows(cfg.grid, yhat.times, {"y": y.values, "yhat": yhat.values})
    run.write_csv("field.csv", header, rows)
    run.summary = {"sup_y": y.sup_norm(), "sup_yhat": yhat.sup_norm(), "stability": yhat.meta}
    run.write_json("summary.json", run.summary)
    return 0


def _window_rows(sol) -> np.ndarray:
    T = sol.ybar.grid.T
    rows = []
    for w in sol.windows:
        rho = w.rho
        rows.append([T - w.window.t1, T - w.window.t0, len(w.log), w.log[-1] if w.log else 0.0,
                     np.nan if rho is None else rho, float(w.converged)])
    return np.array(rows)


WINDOW_HEADER = ["t_start", "t_end", "sweeps", "last_distance", "rho", "converged"]


def cmd_solve_fbsde(run: Run) -> int:
    cfg = run.cfg
    mc = cfg.mc if run.args.tol is None else replace(cfg.mc, tol=float(run.args.tol))
    with run.timed("noise"):
        eta = _noise(cfg)
    _maybe_write_noise(run, eta)
    extra = _fbsde_extra(cfg)
    with run.timed("solve"):
        sol = global_continuation(cfg.problem, eta, cfg.grid, mc, cfg.policy, M=extra.get("M"),
                                  raise_on_failure=False)
    run.write_csv("windows.csv", WINDOW_HEADER, _window_rows(sol))
    run.summary = {"converged": sol.converged, "M": sol.M, "failed_window": sol.failed_window,
                   "sup_ybar": sol.ybar.sup_norm(), "stderr_max": float(np.max(sol.stderr))}
    if not sol.converged:
        run.write_json("summary.json", run.summary)
        raise WindowFailure(sol, sol.windows[-1].window)
    q = int(np.prod(cfg.grid.nodes))
    se = np.broadcast_to(sol.stderr[::-1][:, None], (len(sol.yhat.times), q))
    header, rows = _field_rows(cfg.grid, sol.yhat.times,
                               {"y": sol.y.values, "yhat": sol.yhat.values, "stderr": se})
    run.write_csv("field.csv", header, rows)
    run.write_json("summary.json", run.summary)
    return 0


def cmd_solve_inviscid(run: Run) -> int:
    cfg = run.cfg
    tol = _tol(run, "inviscid", "tol", 1e-9)
    with run.timed("noise"):
        eta = _noise(cfg)
    _maybe_write_noise(run, eta)
    opts = cfg.section("inviscid")
    with run.timed("solve"):
        sol = inviscid_solve(cfg.problem, eta, cfg.grid, cfg.policy, M=_fbsde_extra(cfg).get("M"), tol=tol,
                             max_iter=int(opts.get("max_iter", 100)),
                             shock_floor=float(opts.get("shock_floor", 0.0)))
    header, rows = _field_rows(cfg.grid, sol.yhat.times, {"y": sol.y.values, "yhat": sol.yhat.values})
    run.write_csv("field.csv", header, rows)
    run.write_csv("windows.csv", WINDOW_HEADER, _window_rows(sol))
    run.summary = {"converged": sol.converged, "M": sol.M, "sup_ybar": sol.ybar.sup_norm(),
                   "config_nu_ignored": cfg.problem.nu,
                   "jacobian_min": min(w.constants.get("jacobian_min", np.inf) for w in sol.windows)}
    run.write_json("summary.json", run.summary)
    return 0 if sol.converged else 1


def _refined(grid: GridSpec, r: int) -> GridSpec:
    nodes = tuple(m * r if grid.periodic else (m - 1) * r + 1 for m in grid.nodes)
    return GridSpec(grid.lower, grid.upper, nodes, grid.dt / r, grid.T, grid.periodic, grid.cfl_limit)


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    opts = cfg.section("compare")
    tol = _tol(run, "compare", "tol", 0.05)
    r = int(opts.get("refine", 4))
    if r < 1:
        raise ConfigError("compare.refine: must be a positive integer")
    fine = _refined(cfg.grid, r)
    with run.timed("noise"):
        eta_fine = _noise(cfg, fine)
        eta = eta_fine.restrict(cfg.grid)
    with run.timed("fd"):
        fd = fd_solve_forward(cfg.problem, eta_fine, fine, scheme=cfg.section("fd").get("scheme", "minmod"))
    with run.timed("fbsde"):
        sol = global_continuation(cfg.problem, eta, cfg.grid, cfg.mc, cfg.policy,
                                  M=_fbsde_extra(cfg).get("M"), raise_on_failure=False)
    run.write_csv("windows.csv", WINDOW_HEADER, _window_rows(sol))
    if not sol.converged:
        run.summary = {"converged": False, "failed_window": sol.failed_window}
        run.write_json("summary.json", run.summary)
        raise WindowFailure(sol, sol.windows[-1].window)
    sl = (slice(None, None, r),) + tuple(slice(None, None, r) for _ in cfg.grid.nodes)
    ref = fd.values[sl]
    diff = np.linalg.norm(sol.yhat.values - ref, axis=-1).reshape(len(sol.yhat.times), -1)
    scale = float(np.max(np.linalg.norm(ref, axis=-1)))
    per_t = diff.max(axis=1)
    rel = per_t / scale if scale > 0 else per_t
    run.write_csv("compare.csv", ["t", "sup_abs", "sup_rel"], np.column_stack([sol.yhat.times, per_t, rel]))
    rhos = [w.rho for w in sol.windows if w.rho is not None]
    passed = bool(rel.max() <= tol)
    run.summary = {"max_abs": float(per_t.max()), "max_rel": float(rel.max()), "fd_sup": scale, "tol": tol,
                   "passed": passed, "rho_max": max(rhos) if rhos else None, "refine": r, "M": sol.M}
    run.write_json("summary.json", run.summary)
    if not passed:
        raise CheckFailed(f"relative discrepancy {rel.max():.3e} exceeds tol {tol:.3e}")
    return 0


def cmd_inviscid_sweep(run: Run) -> int:
    cfg = run.cfg
    opts = cfg.section("sweep")
    if "nus" not in opts:
        raise ConfigError("sweep.nus: missing required field")
    with run.timed("noise"):
        eta = _noise(cfg)
    with run.timed("sweep"):
        rep = viscosity_sweep(cfg.problem, opts["nus"], eta, cfg.grid, cfg.mc, cfg.policy,
                              solver=opts.get("solver", "fbsde"), M=_fbsde_extra(cfg).get("M"),
                              wiggle=float(opts.get("wiggle", 1.1)), fit_points=int(opts.get("fit_points", 3)),
                              N=opts.get("N"))
    run.write_csv("sweep.csv", ["nu", "sup_err", "mean_err"], rep.table())
    run.summary = rep.to_dict()
    run.write_json("sweep.json", run.summary)
    if rep.partial:
        raise CheckFailed("some sweep members failed")
    floor = opts.get("min_exponent")
    if floor is not None and (rep.fit is None or rep.fit.exponent is None or rep.fit.exponent < floor):
        raise CheckFailed(f"fitted exponent below {floor}")
    return 0


def cmd_holder(run: Run) -> int:
    cfg = run.cfg
    opts = cfg.section("holder")
    count = int(opts.get("seeds", 100))
    first = int(opts.get("first_seed", cfg.noise_seed))
    steps = int(opts.get("steps", 16384))
    max_lag = int(opts.get("max_lag", 32))
    target = opts.get("target", "noise")
    lo, hi = opts.get("band", [0.4, 0.55])
    q = cfg.problem
    if target not in ("noise", "brownian"):
        raise ConfigError("holder.target: choose 'noise' or 'brownian'")
    grid = GridSpec(q.domain.lower, q.domain.upper, cfg.grid.nodes, q.T / steps, q.T, q.domain.periodic)
    rows = []
    with run.timed("estimate"):
        for s in range(first, first + count):
            B = build_brownian(s, q.d, q.T, steps)
            series = B.values if target == "brownian" else _noise_from_path(cfg, B, grid).values
            est = holder_exponent(series, max_lag)
            rows.append([s, np.nan if est.degenerate else est.exponent, np.nan if est.degenerate else est.r2])
    rows = np.array(rows)
    run.write_csv("holder.csv", ["seed", "exponent", "r2"], rows)
    ex = rows[:, 1]
    ok = np.isfinite(ex)
    frac = float(np.mean((ex[ok] >= lo) & (ex[ok] <= hi))) if ok.any() else 0.0
    run.summary = {"seed_count": count, "degenerate": int((~ok).sum()), "band": [lo, hi], "fraction_in_band": frac,
                   "mean_exponent": float(np.mean(ex[ok])) if ok.any() else None, "max_lag": max_lag,
                   "steps": steps, "target": target}
    run.write_json("holder.json", run.summary)
    return 0


def cmd_adaptedness(run: Run) -> int:
    cfg = run.cfg
    opts = cfg.section("adaptedness")
    q, grid = cfg.problem, cfg.grid
    t_split = float(opts.get("t_split", q.T / 2))
    solver = opts.get("solver", "fd")
    seed_b = int(opts.get("seed_b", cfg.noise_seed + 1))
    A = build_brownian(cfg.noise_seed, q.d, q.T, grid.steps)
    B = couple_brownian(A, t_split, seed_b)
    M = _fbsde_extra(cfg).get("M")
    if solver == "fbsde" and M is None:
        # fixed before either run so both solves use the same cutoff
        M = default_cutoff_level(q, transformed_force(q, _noise_from_path(cfg, A, grid)))
    policy = replace(cfg.policy, breakpoints=tuple(sorted(set(cfg.policy.breakpoints) | {t_split})))
    if solver not in ("fd", "fbsde"):
        raise ConfigError("adaptedness.solver: choose 'fd' or 'fbsde'")
    results = {}

    def solve(path: BrownianPath):
        eta = _noise_from_path(cfg, path, grid)
        if solver == "fd":
            out = fd_solve_forward(q, eta, grid, scheme=cfg.section("fd").get("scheme", "minmod"))
        else:
            out = global_continuation(q, eta, grid, cfg.mc, policy, M=M).yhat
        results[len(results)] = out
        return out

    with run.timed("solve"):
        rep = adaptedness_check(solve, t_split, A, B)
    a, b = results[0], results[1]
    diff = np.max(np.abs(a.values - b.values).reshape(len(a.times), -1), axis=1)
    run.write_csv("adaptedness.csv", ["t", "max_abs_diff"], np.column_stack([a.times, diff]))
    run.summary = {**asdict(rep), "solver": solver, "seed_a": cfg.noise_seed, "seed_b": seed_b, "M": M}
    run.write_json("adaptedness.json", run.summary)
    if not rep.passed:
        raise CheckFailed(f"outputs diverge at t={rep.first_divergence}")
    return 0


PLOT_SOURCES = {
    "compare.csv": ("rel.dat", ("t", "sup_rel")),
    "sweep.csv": ("sup_err.dat", ("nu", "sup_err")),
    "holder.csv": ("exponent.dat", ("seed", "exponent")),
    "adaptedness.csv": ("diff.dat", ("t", "max_abs_diff")),
}


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    header = path.read_text().splitlines()[0].split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def cmd_report(run: Run) -> int:
    opts = run.cfg.section("report") if run.cfg is not None else {}
    inputs = [Path(p) for p in opts.get("inputs", [])]
    if not inputs:
        inputs = sorted(p for p in run.out.parent.iterdir() if p.is_dir() and p != run.out
                        and (p / "manifest.json").exists())
    lines = ["# stochburgers run report", ""]
    if not inputs:
        lines.append("No runs with a manifest were found.")
    for d in inputs:
        man_path = d / "manifest.json"
        if not man_path.exists():
            raise ConfigError(f"report.inputs: {d} has no manifest.json")
        man = json.loads(man_path.read_text())
        lines += [f"## {man['subcommand']} ({d.name})", "",
                  f"- status: {man['status']}" + (f" ({man['message']})" if man.get("message") else ""),
                  f"- config hash: `{man.get('config_hash')}`",
                  f"- seeds: {json.dumps(man.get('seeds', {}), sort_keys=True)}"]
        for key, val in sorted(man.get("summary", {}).items()):
            if isinstance(val, (int, float, str, bool)) or val is None:
                lines.append(f"- {key}: {val}")
        for entry in man.get("files", []):
            src = PLOT_SOURCES.get(entry["name"])
            if src is None:
                continue
            header, data = _read_csv(d / entry["name"])
            cols = [header.index(c) for c in src[1]]
            name = f"{d.name}_{src[0]}"
            run.write_csv(name, list(src[1]), data[:, cols])
            lines.append(f"- plot data: `{name}` ({src[1][0]} vs {src[1][1]})")
        lines.append("")
    run.write_text("report.md", "\n".join(lines) + "\n")
    run.summary = {"runs": len(inputs)}
    return 0


HELP = {
    "solve-fd": "finite-difference solve of the transformed equation",
    "solve-fbsde": "Monte Carlo FBSDE solve with window stitching",
    "solve-inviscid": "zero-viscosity characteristics solve",
    "compare": "FBSDE against a refined FD run on shared noise",
    "inviscid-sweep": "distance to the zero-viscosity solution over a viscosity list",
    "holder": "time-Hoelder exponent of the noise over many seeds",
    "adaptedness": "bitwise check on two drivers coupled up to t_split",
    "report": "assemble earlier runs into report.md and plot data",
}

HANDLERS = {
    "solve-fd": cmd_solve_fd,
    "solve-fbsde": cmd_solve_fbsde,
    "solve-inviscid": cmd_solve_inviscid,
    "compare": cmd_compare,
    "inviscid-sweep": cmd_inviscid_sweep,
    "holder": cmd_holder,
    "adaptedness": cmd_adaptedness,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario TOML file")
    common.add_argument("--out", type=Path, help=f"output directory (default: ${ENV_OUT} or "
                                                 f"./{DEFAULT_ROOT}, plus the subcommand name)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    common.add_argument("--tol", type=float, help="override the subcommand's tolerance")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="stochburgers", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(ENV_OUT, DEFAULT_ROOT)) / args.command


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        if args.config is None:
            if args.command != "report":
                raise ConfigError("--config: required for this subcommand")
        else:
            cfg = load_config(args.config, seed=args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
    except ConfigError as exc:
        print(f"stochburgers: config error: {exc}", file=sys.stderr)
        return 2
    run = Run(args.command, _out_dir(args), cfg, args)
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    status, message = 0, ""
    with limits:
        try:
            status = HANDLERS[args.command](run)
        except ConfigError as exc:
            status, message = 2, str(exc)
            print(f"stochburgers: config error: {exc}", file=sys.stderr)
        except (CheckFailed, *FAILURES) as exc:
            status, message = 1, f"{type(exc).__name__}: {exc}"
            print(f"stochburgers: {message}", file=sys.stderr)
    run.manifest(status, message)
    if status == 0:
        print(f"stochburgers {args.command}: wrote {len(run.files)} files to {run.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
