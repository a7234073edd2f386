"""Space-time grids, grid fields and multilinear interpolation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "BlowUpError",
    "GridSpec",
    "SpaceTimeField",
    "grid_gradient",
    "interpolate",
    "time_index",
]


class BlowUpError(FloatingPointError):
    """A field became non-finite; ``time`` is the first offending time."""

    def __init__(self, time: float, message: str | None = None) -> None:
        self.time = float(time)
        super().__init__(message or f"non-finite values first at t={self.time:.6g}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform spatial grid plus a uniform time step on [0, T].

    Periodic axes use ``nodes`` points with the upper endpoint identified with
    the lower one; box axes include both endpoints.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nodes: tuple[int, ...]
    dt: float
    T: float
    periodic: bool = True
    cfl_limit: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        if not (len(self.lower) == len(self.upper) == len(self.nodes)) or not self.nodes:
            raise ValueError("lower, upper and nodes must have the same positive length")
        if any(m < 8 for m in self.nodes):
            raise ValueError(f"need at least 8 nodes per dimension, got {self.nodes}")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise ValueError("upper must exceed lower on every axis")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not a whole number of steps dt={self.dt}")

    @property
    def ndim(self) -> int:
        return len(self.nodes)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.periodic:
            return tuple(L / m for L, m in zip(self.lengths, self.nodes))
        return tuple(L / (m - 1) for L, m in zip(self.lengths, self.nodes))

    @property
    def periods(self) -> tuple[float | None, ...]:
        return self.lengths if self.periodic else (None,) * self.ndim

    def axes(self) -> list[np.ndarray]:
        return [a + h * np.arange(m) for a, h, m in zip(self.lower, self.spacing, self.nodes)]

    def mesh(self) -> np.ndarray:
        """Node coordinates with shape ``(*nodes, n)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Node coordinates flattened to ``(P, n)`` in C order."""
        return self.mesh().reshape(-1, self.ndim)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map points into the fundamental cell (identity on box grids)."""
        if not self.periodic:
            return x
        lo = np.asarray(self.lower)
        L = np.asarray(self.lengths)
        return lo + np.mod(x - lo, L)

    def with_time(self, dt: float, T: float) -> "GridSpec":
        return GridSpec(self.lower, self.upper, self.nodes, dt, T, self.periodic, self.cfl_limit)

    def same_space(self, other: "GridSpec") -> bool:
        return (self.lower == other.lower and self.upper == other.upper
                and self.nodes == other.nodes and self.periodic == other.periodic)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "nodes": list(self.nodes),
                "dt": self.dt, "T": self.T, "periodic": self.periodic}


def time_index(times: np.ndarray, t: float, tol: float = 1e-9) -> int:
    """Index of grid time ``t``; raises ``ValueError`` when off-grid."""
    times = np.asarray(times)
    j = int(np.argmin(np.abs(times - t)))
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    if abs(times[j] - t) > tol * max(1.0, abs(dt)):
        raise ValueError(f"t={t} is not a grid time")
    return j


def interpolate(values: np.ndarray, grid: GridSpec, points: np.ndarray, order: int = 1) -> np.ndarray:
    """Interpolation of nodal data at arbitrary points.

    ``values`` has shape ``(*nodes, ...)``; the result has shape
    ``(P, ...)``.  Periodic grids wrap, box grids extend constantly.
    ``order=1`` is multilinear; ``order=3`` uses cubic splines.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if order == 3:
        return _spline(values, grid, points)
    if order != 1:
        raise ValueError("interpolation order must be 1 or 3")
    lo, hs = grid.lower, grid.spacing
    idx0, idx1, wts = [], [], []
    for a in range(grid.ndim):
        m = grid.nodes[a]
        s = (points[:, a] - lo[a]) / hs[a]
        if grid.periodic:
            fl = np.floor(s)
            w = s - fl
            i0 = np.mod(fl.astype(np.int64), m)
            i1 = np.mod(i0 + 1, m)
        else:
            s = np.clip(s, 0.0, m - 1)
            i0 = np.minimum(np.floor(s).astype(np.int64), m - 2)
            w = s - i0
            i1 = i0 + 1
        idx0.append(i0)
        idx1.append(i1)
        wts.append(w)
    out = None
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        weight = np.ones(points.shape[0])
        index = []
        for a, c in enumerate(corner):
            weight = weight * (wts[a] if c else 1.0 - wts[a])
            index.append(idx1[a] if c else idx0[a])
        term = values[tuple(index)]
        term = term * weight.reshape((-1,) + (1,) * (term.ndim - 1))
        out = term if out is None else out + term
    return out


def _spline(values: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    n = grid.ndim
    coords = np.empty((n, points.shape[0]))
    for a in range(n):
        s = (points[:, a] - grid.lower[a]) / grid.spacing[a]
        coords[a] = s if grid.periodic else np.clip(s, 0.0, grid.nodes[a] - 1)
    mode = "grid-wrap" if grid.periodic else "nearest"
    trail = values.shape[n:]
    flat = values.reshape(grid.nodes + (-1,))
    out = np.stack([ndimage.map_coordinates(flat[..., c], coords, order=3, mode=mode)
                    for c in range(flat.shape[-1])], axis=-1)
    return out.reshape((points.shape[0],) + trail)


def grid_gradient(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Second-order central differences; ``values`` is ``(*nodes, c)``.

    Returns ``(*nodes, c, n)`` with entry ``[..., i, l] = d_l values_i``.
    """
    grads = []
    for a, h in enumerate(grid.spacing):
        if grid.periodic:
            d = (np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2 * h)
        else:
            d = np.gradient(values, h, axis=a, edge_order=2)
        grads.append(d)
    return np.stack(grads, axis=-1)


@dataclass
class SpaceTimeField:
    """Nodal field on a time grid; ``values`` has shape ``(Nt, *nodes, c)``."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    gradient: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        expect = (len(self.times),) + self.grid.nodes
        if self.values.shape[: 1 + self.grid.ndim] != expect:
            raise ValueError(f"values shape {self.values.shape} does not match {expect}")
        bad = ~np.isfinite(self.values.reshape(len(self.times), -1)).all(axis=1)
        if bad.any():
            raise BlowUpError(self.times[int(np.argmax(bad))])

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def at(self, j: int, points: np.ndarray) -> np.ndarray:
        return interpolate(self.values[j], self.grid, points)

    def sup_norm(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def same_layout(self, other: "SpaceTimeField") -> bool:
        return (self.grid.same_space(other.grid) and self.values.shape == other.values.shape
                and np.array_equal(self.times, other.times))

    def window(self, j0: int, j1: int) -> "SpaceTimeField":
        grad = None if self.gradient is None else self.gradient[j0:j1 + 1]
        return SpaceTimeField(self.grid, self.times[j0:j1 + 1], self.values[j0:j1 + 1], grad,
                              dict(self.meta))
