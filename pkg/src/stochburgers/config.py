"""TOML scenario files: parsing, validation and hashing.

A scenario names a problem (a preset or explicit h, f, g), a grid, the noise
seed and per-subcommand settings.  Every error names the offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fbsde import MCConfig, WindowPolicy
from .grid import GridSpec
from .model import BurgersProblem, Domain
from .presets import build_diffusion, build_force, build_initial, reference_problem

__all__ = ["ConfigError", "RunConfig", "config_hash", "load_config", "parse_config"]

PROBLEM_PRESETS = ("reference", "zero", "sine-wave")
SECTIONS = ("problem", "grid", "noise", "fbsde", "windows", "fd", "compare", "sweep", "holder",
            "adaptedness", "inviscid", "report", "output")


class ConfigError(ValueError):
    """Invalid scenario; the message starts with the dotted field name."""


@dataclass
class RunConfig:
    problem: BurgersProblem
    grid: GridSpec
    noise_seed: int
    mollify: int
    mc: MCConfig
    policy: WindowPolicy
    sections: dict
    raw: dict
    source: str = "<dict>"
    hash: str = ""
    seeds: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))


def config_hash(raw: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of the parsed file."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {p}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: TOML syntax error in {p}: {exc}") from None
    return parse_config(raw, str(p), seed)


def _get(tbl: Mapping[str, Any], key: str, where: str, kind=float, default=..., check=None):
    name = f"{where}.{key}"
    if key not in tbl:
        if default is ...:
            raise ConfigError(f"{name}: missing required field")
        return default
    val = tbl[key]
    try:
        if kind is bool:
            if not isinstance(val, bool):
                raise TypeError
            out = val
        elif kind is int:
            if isinstance(val, bool) or not float(val).is_integer():
                raise TypeError
            out = int(val)
        elif kind is float:
            if isinstance(val, bool):
                raise TypeError
            out = float(val)
        else:
            out = kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {val!r}") from None
    if check is not None and not check(out):
        raise ConfigError(f"{name}: value {val!r} out of range")
    return out


def _table(raw: Mapping[str, Any], key: str, where: str = "") -> dict:
    name = f"{where}.{key}" if where else key
    tbl = raw.get(key, {})
    if not isinstance(tbl, dict):
        raise ConfigError(f"{name}: expected a table")
    return tbl


def _reject_unknown(tbl: Mapping[str, Any], allowed, where: str) -> None:
    extra = sorted(set(tbl) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}: unknown field (allowed: {', '.join(sorted(allowed))})")


def _mode_entries(tbl: Mapping[str, Any], where: str) -> dict:
    """Convert ``omega_pi`` / ``phase_pi`` (multiples of pi) to radians."""
    out = dict(tbl)
    modes = []
    for k, e in enumerate(tbl.get("modes", [])):
        if not isinstance(e, dict):
            raise ConfigError(f"{where}.modes[{k}]: expected an inline table")
        e = dict(e)
        for key in ("omega", "phase"):
            pk = f"{key}_pi"
            if pk in e:
                if key in e:
                    raise ConfigError(f"{where}.modes[{k}].{key}: give either {key} or {pk}")
                v = e.pop(pk)
                e[key] = [math.pi * float(u) for u in v] if isinstance(v, list) else math.pi * float(v)
        if "amp" not in e:
            raise ConfigError(f"{where}.modes[{k}].amp: missing required field")
        if "omega" not in e:
            raise ConfigError(f"{where}.modes[{k}].omega: missing required field")
        modes.append(e)
    if modes:
        out["modes"] = modes
    return out


def _problem(raw: Mapping[str, Any]) -> BurgersProblem:
    tbl = _table(raw, "problem")
    if not tbl:
        raise ConfigError("problem: missing required table")
    _reject_unknown(tbl, ("nu", "T", "beta", "name", "preset", "noise_amp", "domain", "h", "f", "g"), "problem")
    nu = _get(tbl, "nu", "problem", float, check=lambda v: v >= 0)
    T = _get(tbl, "T", "problem", float, check=lambda v: v > 0)
    beta = _get(tbl, "beta", "problem", float, 0.5, lambda v: 0 < v < 1)
    name = _get(tbl, "name", "problem", str, "")
    preset = _get(tbl, "preset", "problem", str, None)
    if preset is not None and preset not in PROBLEM_PRESETS:
        raise ConfigError(f"problem.preset: unknown preset {preset!r} (choose from {', '.join(PROBLEM_PRESETS)})")
    if preset == "reference":
        for key in ("domain", "h", "f", "g"):
            if key in tbl:
                raise ConfigError(f"problem.{key}: not allowed with preset 'reference'")
        amp = _get(tbl, "noise_amp", "problem", float, 0.3)
        q = reference_problem(nu, T, amp, name or "reference-1d")
        return BurgersProblem(q.nu, q.T, q.domain, q.h, q.f, q.g, beta, name=q.name)
    if "noise_amp" in tbl:
        raise ConfigError("problem.noise_amp: only used with preset 'reference'")
    dtbl = _table(tbl, "domain", "problem")
    _reject_unknown(dtbl, ("lower", "upper", "periodic"), "problem.domain")
    lower = tuple(float(v) for v in dtbl.get("lower", [-1.0]))
    upper = tuple(float(v) for v in dtbl.get("upper", [1.0]))
    if len(lower) != len(upper) or not lower or any(b <= a for a, b in zip(lower, upper)):
        raise ConfigError("problem.domain.upper: must exceed lower componentwise with equal length")
    dom = Domain(lower, upper, _get(dtbl, "periodic", "problem.domain", bool, True))
    defaults = {"zero": ("zero", "zero", "zero"), "sine-wave": ("sine", "zero", "zero"), None: ("zero", "zero", "zero")}
    hk, fk, gk = defaults[preset]
    # sine-wave: h_1 = -prod_a sin(2 pi x_a / L_a), one period per axis
    hp = {"modes": [{"amp": -1.0, "omega": [2 * math.pi / (b - a) for a, b in zip(lower, upper)]}]} \
        if preset == "sine-wave" else {}
    specs = {}
    for key, kind, params in (("h", hk, hp), ("f", fk, {}), ("g", gk, {})):
        sub = _table(tbl, key, "problem")
        where = f"problem.{key}"
        if sub:
            kind = _get(sub, "kind", where, str, kind)
            params = _mode_entries({k: v for k, v in sub.items() if k != "kind"}, where)
        specs[key] = (kind, params, where)
    built = {}
    for key, builder in (("h", build_initial), ("f", build_force), ("g", build_diffusion)):
        kind, params, where = specs[key]
        try:
            if key == "g":
                params = dict(params)
                d = _get(params, "d", where, int, 1, lambda v: v > 0)
                params.pop("d", None)
                built[key] = builder(kind, dom, d, params)
            else:
                built[key] = builder(kind, dom, params)
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: {exc.args[0] if exc.args else exc}") from None
    h, f, g = built["h"], built["f"], built["g"]
    return BurgersProblem(nu, T, dom, h, f, g, beta, name=name or (preset or "custom"))


def _grid(raw: Mapping[str, Any], problem: BurgersProblem) -> GridSpec:
    tbl = _table(raw, "grid")
    _reject_unknown(tbl, ("nodes", "dt", "steps", "cfl_limit"), "grid")
    nodes = tbl.get("nodes", 64)
    nodes = (int(nodes),) * problem.n if isinstance(nodes, int) else tuple(int(v) for v in nodes)
    if len(nodes) != problem.n:
        raise ConfigError(f"grid.nodes: expected {problem.n} entries, got {len(nodes)}")
    if "dt" in tbl and "steps" in tbl:
        raise ConfigError("grid.dt: give either dt or steps")
    if "steps" in tbl:
        dt = problem.T / _get(tbl, "steps", "grid", int, check=lambda v: v > 0)
    else:
        dt = _get(tbl, "dt", "grid", float, problem.T / 64, lambda v: v > 0)
    try:
        return GridSpec(problem.domain.lower, problem.domain.upper, nodes, dt, problem.T,
                        problem.domain.periodic, _get(tbl, "cfl_limit", "grid", float, 0.5))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _dataclass_from(cls, tbl: Mapping[str, Any], where: str, **over):
    names = {f.name: f for f in fields(cls)}
    _reject_unknown(tbl, names, where)
    kw = {}
    for key, val in tbl.items():
        default = names[key].default
        kind = type(default) if default is not None and not isinstance(default, tuple) else None
        if kind in (int, float, bool, str):
            kw[key] = _get(tbl, key, where, kind)
        elif isinstance(default, tuple):
            kw[key] = tuple(float(v) for v in val)
        else:
            kw[key] = val
    kw.update(over)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: Mapping[str, Any], source: str = "<dict>", seed: int | None = None) -> RunConfig:
    """Validate a parsed TOML mapping; ``seed`` overrides every seed in the file."""
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section (allowed: {', '.join(SECTIONS)})")
    problem = _problem(raw)
    grid = _grid(raw, problem)
    ntbl = _table(raw, "noise")
    _reject_unknown(ntbl, ("seed", "mollify"), "noise")
    noise_seed = _get(ntbl, "seed", "noise", int, 0, lambda v: v >= 0) if seed is None else int(seed)
    mollify = _get(ntbl, "mollify", "noise", int, 0, lambda v: v >= 0)
    ftbl = dict(_table(raw, "fbsde"))
    extra = {}
    if "M" in ftbl:
        extra["M"] = _get(ftbl, "M", "fbsde", float, check=lambda v: v > 0)
        del ftbl["M"]
    mc = _dataclass_from(MCConfig, ftbl, "fbsde", **({"seed": int(seed)} if seed is not None else {}))
    policy = _dataclass_from(WindowPolicy, _table(raw, "windows"), "windows")
    sections = {k: _table(raw, k) for k in ("fd", "compare", "sweep", "holder", "adaptedness", "inviscid",
                                             "report", "output")}
    sections["fbsde_extra"] = extra
    out = RunConfig(problem, grid, noise_seed, mollify, mc, policy, sections, dict(raw), source)
    out.hash = config_hash({"config": raw, "seed_override": seed})
    out.seeds = {"noise": noise_seed, "fbsde": mc.seed}
    return out
