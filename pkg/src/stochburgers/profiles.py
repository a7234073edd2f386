"""Closed-form separable profiles with analytic derivatives.

A spatial mode is a product of one-dimensional factors, one per axis. Each
factor knows its derivatives of every order, so tensors of mixed partials
are assembled exactly (no finite differencing anywhere).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e

__all__ = [
    "Factor",
    "TimeProfile",
    "SpatialMode",
    "mode_tensor",
    "multi_indices",
    "mode_from_dict",
    "mode_to_dict",
]


@dataclass(frozen=True)
class Factor:
    """One-dimensional profile.

    kind is one of ``"const"``, ``"sin"`` (``sin(omega*x + phase)``) or
    ``"gauss"`` (``exp(-(x-center)**2 / (2 width**2))``).  For gaussian
    factors on a periodic axis the offset is wrapped to the nearest image.
    """

    kind: str = "const"
    omega: float = 1.0
    phase: float = 0.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("const", "sin", "gauss"):
            raise ValueError(f"unknown factor kind {self.kind!r}")
        if self.kind == "gauss" and not self.width > 0:
            raise ValueError("gaussian width must be positive")

    def derivative(self, x: np.ndarray, order: int, period: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "const":
            return np.ones_like(x) if order == 0 else np.zeros_like(x)
        if self.kind == "sin":
            return self.omega**order * np.sin(self.omega * x + self.phase + order * np.pi / 2)
        u = x - self.center
        if period is not None:
            u = u - period * np.round(u / period)
        u = u / self.width
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        return (-1) ** order * hermite_e.hermeval(u, coef) * np.exp(-0.5 * u * u) / self.width**order


@dataclass(frozen=True)
class TimeProfile:
    """Temporal modulation ``1 + a*cos(omega*t)`` (``kind="cos"``) or 1."""

    kind: str = "const"
    a: float = 0.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("const", "cos"):
            raise ValueError(f"unknown time profile {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.ones_like(t)
        return 1.0 + self.a * np.cos(self.omega * t)


@dataclass(frozen=True)
class SpatialMode:
    """``amp * tau(t) * prod_a factor_a(x_a)`` feeding output component ``comp``.

    ``source`` indexes the driving Brownian component (only used by
    diffusion coefficients).
    """

    comp: int
    amp: float
    factors: tuple[Factor, ...]
    source: int = 0
    time: TimeProfile = field(default_factory=TimeProfile)


def multi_indices(n: int, order: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(n), repeat=order))


def mode_tensor(mode: SpatialMode, points: np.ndarray, order: int,
                periods: tuple[float | None, ...] | None = None) -> np.ndarray:
    """Derivative tensor of the spatial factor product (amplitude excluded).

    Returns an array of shape ``(P,) + (n,)*order``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p, n = points.shape
    if len(mode.factors) != n:
        raise ValueError(f"mode has {len(mode.factors)} factors for {n}-dimensional points")
    periods = periods or (None,) * n
    cache: dict[tuple[int, ...], np.ndarray] = {}
    out = np.empty((p,) + (n,) * order)
    for idx in multi_indices(n, order):
        counts = tuple(idx.count(a) for a in range(n))
        if counts not in cache:
            val = np.ones(p)
            for a, fac in enumerate(mode.factors):
                val = val * fac.derivative(points[:, a], counts[a], periods[a])
            cache[counts] = val
        out[(slice(None),) + idx] = cache[counts]
    return out


def mode_to_dict(mode: SpatialMode) -> dict:
    return {
        "comp": mode.comp,
        "amp": mode.amp,
        "source": mode.source,
        "time": {"kind": mode.time.kind, "a": mode.time.a, "omega": mode.time.omega},
        "factors": [
            {"kind": f.kind, "omega": f.omega, "phase": f.phase, "center": f.center, "width": f.width}
            for f in mode.factors
        ],
    }


def mode_from_dict(data: dict) -> SpatialMode:
    return SpatialMode(
        comp=int(data["comp"]),
        amp=float(data["amp"]),
        source=int(data.get("source", 0)),
        time=TimeProfile(**data.get("time", {})),
        factors=tuple(Factor(**f) for f in data["factors"]),
    )
