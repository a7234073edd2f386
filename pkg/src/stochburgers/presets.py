"""Named presets for h, f and g plus the reference problem family."""
from __future__ import annotations

from typing import Any, Mapping, Sequence

import numpy as np

from .model import BurgersProblem, Domain, ForceSpec, InitialSpec
from .noise import DiffusionSpec
from .profiles import Factor, SpatialMode, TimeProfile

__all__ = [
    "INITIAL_PRESETS",
    "FORCE_PRESETS",
    "DIFFUSION_PRESETS",
    "build_diffusion",
    "build_force",
    "build_initial",
    "reference_problem",
    "sine_mode",
]

INITIAL_PRESETS = ("zero", "constant", "sine", "gaussian", "linear")
FORCE_PRESETS = ("zero", "damping", "sine")
DIFFUSION_PRESETS = ("zero", "constant", "sine", "gaussian")


def sine_mode(comp: int, amp: float, omegas: Sequence[float], phases: Sequence[float] | None = None,
              source: int = 0, time: TimeProfile | None = None) -> SpatialMode:
    """Product ``prod_a sin(omega_a x_a + phase_a)``; ``omega_a = 0`` with phase pi/2 gives 1."""
    phases = phases if phases is not None else [0.0] * len(omegas)
    facs = tuple(Factor("const") if w == 0 and abs(p - np.pi / 2) < 1e-15 else Factor("sin", w, p)
                 for w, p in zip(omegas, phases))
    return SpatialMode(comp, float(amp), facs, source, time or TimeProfile())


def _const_mode(comp: int, amp: float, n: int, source: int = 0,
                time: TimeProfile | None = None) -> SpatialMode:
    return SpatialMode(comp, float(amp), (Factor("const"),) * n, source, time or TimeProfile())


def _gauss_mode(comp: int, amp: float, center: Sequence[float], width: float, source: int = 0,
                time: TimeProfile | None = None) -> SpatialMode:
    facs = tuple(Factor("gauss", center=float(c), width=float(width)) for c in center)
    return SpatialMode(comp, float(amp), facs, source, time or TimeProfile())


def _time(params: Mapping[str, Any]) -> TimeProfile:
    a = float(params.get("modulation", 0.0))
    return TimeProfile("cos", a, float(params.get("modulation_omega", 0.0))) if a else TimeProfile()


def _modes(entries: Sequence[Mapping[str, Any]], n: int, field: str) -> tuple[SpatialMode, ...]:
    """Sine modes from dicts with keys comp, amp, omega (list), phase (list), source."""
    out = []
    for k, e in enumerate(entries):
        try:
            omegas = list(np.broadcast_to(np.asarray(e["omega"], dtype=float), (n,)))
            phases = list(np.broadcast_to(np.asarray(e.get("phase", 0.0), dtype=float), (n,)))
            out.append(sine_mode(int(e.get("comp", 0)), float(e["amp"]), omegas, phases,
                                 int(e.get("source", 0)), _time(e)))
        except KeyError as exc:
            raise KeyError(f"{field}.modes[{k}] is missing {exc.args[0]!r}") from None
    return tuple(out)


def build_initial(kind: str, domain: Domain, params: Mapping[str, Any] | None = None) -> InitialSpec:
    params = dict(params or {})
    n = domain.n
    if kind == "zero":
        return InitialSpec(n, periods=domain.periods)
    if kind == "constant":
        value = np.broadcast_to(np.asarray(params.get("value", 1.0), dtype=float), (n,))
        return InitialSpec(n, offset=tuple(value), periods=domain.periods)
    if kind == "sine":
        return InitialSpec(n, modes=_modes(params.get("modes", []), n, "h"), periods=domain.periods)
    if kind == "gaussian":
        amp = np.broadcast_to(np.asarray(params.get("amp", 1.0), dtype=float), (n,))
        center = params.get("center", [0.5 * (a + b) for a, b in zip(domain.lower, domain.upper)])
        width = float(params.get("width", 0.25))
        modes = tuple(_gauss_mode(i, amp[i], center, width) for i in range(n) if amp[i] != 0)
        return InitialSpec(n, modes=modes, periods=domain.periods)
    if kind == "linear":
        if domain.periodic:
            raise ValueError("linear initial data need a box domain")
        A = np.asarray(params.get("matrix", np.eye(n)), dtype=float).reshape(n, n)
        b = np.broadcast_to(np.asarray(params.get("offset", 0.0), dtype=float), (n,))
        return InitialSpec(n, offset=tuple(b), linear=tuple(map(tuple, A)), periods=domain.periods)
    raise ValueError(f"unknown initial preset {kind!r}; choose from {INITIAL_PRESETS}")


def build_force(kind: str, domain: Domain, params: Mapping[str, Any] | None = None) -> ForceSpec:
    params = dict(params or {})
    n = domain.n
    damping = float(params.get("damping", 0.0))
    if kind == "zero":
        return ForceSpec(n, periods=domain.periods)
    if kind == "damping":
        return ForceSpec(n, damping=float(params.get("damping", 1.0)), periods=domain.periods)
    if kind == "sine":
        return ForceSpec(n, damping=damping, modes=_modes(params.get("modes", []), n, "f"),
                         periods=domain.periods)
    raise ValueError(f"unknown force preset {kind!r}; choose from {FORCE_PRESETS}")


def build_diffusion(kind: str, domain: Domain, d: int, params: Mapping[str, Any] | None = None
                    ) -> DiffusionSpec:
    params = dict(params or {})
    n = domain.n
    support = "periodic" if domain.periodic else "box"
    if kind == "zero":
        return DiffusionSpec(n, d, (), support, domain.periods)
    if kind == "constant":
        G = np.asarray(params.get("matrix", np.ones((d, n))), dtype=float).reshape(d, n)
        modes = tuple(_const_mode(i, G[k, i], n, k, _time(params))
                      for k in range(d) for i in range(n) if G[k, i] != 0)
        return DiffusionSpec(n, d, modes, support, domain.periods)
    if kind == "sine":
        return DiffusionSpec(n, d, _modes(params.get("modes", []), n, "g"), support, domain.periods)
    if kind == "gaussian":
        amp = float(params.get("amp", 1.0))
        center = params.get("center", [0.5 * (a + b) for a, b in zip(domain.lower, domain.upper)])
        width = float(params.get("width", 0.25))
        modes = tuple(_gauss_mode(i, amp, center, width, i % d, _time(params)) for i in range(n))
        return DiffusionSpec(n, d, modes, "gaussian", domain.periods)
    raise ValueError(f"unknown diffusion preset {kind!r}; choose from {DIFFUSION_PRESETS}")


def reference_problem(nu: float = 0.1, T: float = 0.25, noise_amp: float = 0.3,
                      name: str = "reference-1d") -> BurgersProblem:
    """Smooth 1-D periodic instance on [-1, 1] shared by the solver cross-checks."""
    dom = Domain((-1.0,), (1.0,), True)
    pi = np.pi
    h = build_initial("sine", dom, {"modes": [
        {"amp": 0.5, "omega": pi, "phase": 0.0},
        {"amp": 0.2, "omega": 2 * pi, "phase": pi / 2},
    ]})
    f = build_force("sine", dom, {"damping": 0.5, "modes": [{"amp": 0.3, "omega": pi, "phase": pi / 2}]})
    g = build_diffusion("sine", dom, 1, {"modes": [
        {"amp": noise_amp, "omega": pi, "phase": pi / 2},
        {"amp": 0.5 * noise_amp, "omega": 2 * pi, "phase": 0.0},
    ]})
    return BurgersProblem(nu, T, dom, h, f, g, beta=0.5, name=name)
