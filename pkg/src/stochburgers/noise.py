"""Brownian drivers and the stochastic-integral field eta(t, x).

The diffusion coefficient is a finite sum of separable modes
``g[k, i](t, x) = sum_m amp_m tau_m(t) phi_m(x)``, so the left-point Ito sum
factorises into scalar coefficient processes

    I_m(t_j) = sum_{l<j} tau_m(t_l) dB_{k_m, l}

times fixed spatial profiles.  Every operation acting in time (mollifying,
truncating, reversing) only touches ``I``; spatial derivatives of any order
and off-grid evaluations stay exact.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec, time_index
from .profiles import SpatialMode, mode_from_dict, mode_tensor, mode_to_dict

__all__ = [
    "BrownianPath",
    "DiffusionSpec",
    "NoiseField",
    "build_brownian",
    "couple_brownian",
    "mollify_in_time",
    "read_noise",
    "stopping_time_T_N",
    "synthesize_noise_field",
    "truncate_noise",
    "write_noise",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BrownianPath:
    """Brownian increments on the uniform grid ``k*T/steps``."""

    dim: int
    T: float
    steps: int
    increments: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        inc = np.array(self.increments, dtype=float)
        if inc.shape != (self.steps, self.dim):
            raise ValueError(f"increments shape {inc.shape} != {(self.steps, self.dim)}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def values(self) -> np.ndarray:
        out = np.zeros((self.steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def build_brownian(seed: int, dim: int, T: float, steps: int) -> BrownianPath:
    """Seeded ``dim``-dimensional Brownian increments on ``steps`` uniform steps."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if int(steps) < 1 or int(steps) != steps:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    if int(dim) < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((int(steps), int(dim))) * np.sqrt(T / steps)
    return BrownianPath(int(dim), float(T), int(steps), inc, seed)


def couple_brownian(path: BrownianPath, t_split: float, seed: int) -> BrownianPath:
    """Path sharing the increments of ``path`` on [0, t_split], fresh afterwards."""
    j = time_index(path.times, t_split)
    fresh = build_brownian(seed, path.dim, path.T, path.steps).increments
    inc = np.concatenate([path.increments[:j], fresh[j:]], axis=0)
    return BrownianPath(path.dim, path.T, path.steps, inc, seed)


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion coefficient g(t, x) as a sum of separable modes.

    Parameters
    ----------
    n, d : int
        Spatial dimension and number of driving Brownian components.
    modes : tuple of SpatialMode
        ``mode.source`` selects the Brownian component, ``mode.comp`` the
        output component.
    support : str
        Descriptor of spatial decay (``"periodic"``, ``"gaussian"``, ...),
        informational only.
    """

    n: int
    d: int
    modes: tuple[SpatialMode, ...] = ()
    support: str = "periodic"
    periods: tuple[float | None, ...] | None = None

    def __post_init__(self) -> None:
        for m in self.modes:
            if not (0 <= m.comp < self.n and 0 <= m.source < self.d):
                raise ValueError(f"mode indices out of range: comp={m.comp}, source={m.source}")
            if len(m.factors) != self.n:
                raise ValueError("each mode needs one factor per spatial dimension")

    def derivative(self, t: float, x: np.ndarray, order: int = 0) -> np.ndarray:
        """Spatial derivative tensor, shape ``(P, d, n) + (n,)*order``."""
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], self.d, self.n) + (self.n,) * order)
        for m in self.modes:
            out[:, m.source, m.comp] += (m.amp * float(m.time(t))) * mode_tensor(m, x, order, self.periods)
        return out

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.derivative(t, x, 0)


@dataclass(frozen=True)
class NoiseField:
    """Space-time field eta on ``grid`` with exact spatial derivatives.

    ``coeffs[j, m]`` holds the coefficient process of mode ``m`` at ``t_j``.
    """

    grid: GridSpec
    modes: tuple[SpatialMode, ...]
    coeffs: np.ndarray
    beta: float = 0.5
    seed: int | None = None
    label: str = "eta"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=float).reshape(self.grid.steps + 1, len(self.modes))
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.grid.ndim

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def is_zero(self) -> bool:
        return not self.modes or not np.any(self.coeffs)

    def replace_coeffs(self, coeffs: np.ndarray, label: str) -> "NoiseField":
        return NoiseField(self.grid, self.modes, coeffs, self.beta, self.seed, label)

    def restrict(self, grid: GridSpec) -> "NoiseField":
        """The same realization on a coarser grid whose time step is a multiple of ours."""
        ratio = grid.dt / self.grid.dt
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9 * ratio or abs(grid.T - self.grid.T) > 1e-12:
            raise ValueError("target grid must share T and use a whole multiple of the time step")
        if grid.lower != self.grid.lower or grid.upper != self.grid.upper or grid.periodic != self.grid.periodic:
            raise ValueError("target grid covers a different domain")
        return NoiseField(grid, self.modes, self.coeffs[::factor], self.beta, self.seed,
                          f"{self.label}:every{factor}")

    def _groups(self) -> tuple[np.ndarray, list[list[int]]]:
        """Modes sharing one coefficient process, merged so eta = sum_g c_g(t) phi_g(x).

        Summing the spatial parts first keeps ``eta = G(x) B_t`` exact for
        time-constant integrands.
        """
        if "groups" not in self._cache:
            groups: list[list[int]] = []
            for k in range(len(self.modes)):
                for grp in groups:
                    if np.array_equal(self.coeffs[:, grp[0]], self.coeffs[:, k]):
                        grp.append(k)
                        break
                else:
                    groups.append([k])
            cols = np.array([grp[0] for grp in groups], dtype=int)
            self._cache["groups"] = (cols, groups)
        return self._cache["groups"]

    def _basis(self, points: np.ndarray, order: int) -> np.ndarray:
        """``(P, G, n, n**order)`` basis per coefficient group, amplitudes folded in."""
        p = points.shape[0]
        r = self.n**order
        _, groups = self._groups()
        out = np.zeros((p, len(groups), self.n, r))
        for g, grp in enumerate(groups):
            for k in grp:
                m = self.modes[k]
                out[:, g, m.comp, :] += m.amp * mode_tensor(m, points, order, self.grid.periods).reshape(p, r)
        return out

    def _grid_basis(self, order: int) -> np.ndarray:
        key = ("basis", order)
        if key not in self._cache:
            self._cache[key] = self._basis(self.grid.points(), order)
        return self._cache[key]

    def _c(self) -> np.ndarray:
        return self.coeffs[:, self._groups()[0]]

    def evaluate(self, j: int, points: np.ndarray, order: int = 0) -> np.ndarray:
        """Order-``order`` derivative tensor of eta(t_j, .) at arbitrary points.

        Shape ``(P, n) + (n,)*order``; index ``[p, i, l1, ...]`` is
        ``d_l1 ... eta_i``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        shape = (points.shape[0], self.n) + (self.n,) * order
        if not self.modes:
            return np.zeros(shape)
        basis = self._basis(points, order)
        return np.einsum("m,pmir->pir", self._c()[j], basis).reshape(shape)

    def at_nodes(self, j: int, order: int = 0) -> np.ndarray:
        """Channel ``order`` at time ``t_j`` on the nodes, shape ``(*nodes, n, ...)``."""
        shape = self.grid.nodes + (self.n,) + (self.n,) * order
        if not self.modes:
            return np.zeros(shape)
        return np.einsum("m,pmir->pir", self._c()[j], self._grid_basis(order)).reshape(shape)

    def channel(self, order: int = 0) -> np.ndarray:
        """Channel ``order`` at all times, shape ``(Nt+1, *nodes, n, ...)``."""
        shape = (self.grid.steps + 1,) + self.grid.nodes + (self.n,) + (self.n,) * order
        if not self.modes:
            return np.zeros(shape)
        return np.einsum("jm,pmir->jpir", self._c(), self._grid_basis(order)).reshape(shape)

    @property
    def values(self) -> np.ndarray:
        return self.channel(0)

    def ck_norms(self, k: int = 4) -> np.ndarray:
        """Grid max over channels of order ``<= k`` at each time."""
        if not 0 <= k <= 4:
            raise ValueError("derivative order must lie in 0..4")
        norms = np.zeros(self.grid.steps + 1)
        if not self.modes:
            return norms
        for order in range(k + 1):
            basis = self._grid_basis(order)
            for j in range(self.grid.steps + 1):
                val = np.einsum("m,pmir->pir", self._c()[j], basis)
                norms[j] = max(norms[j], float(np.max(np.abs(val))))
        return norms

    def time_reversed(self) -> "NoiseField":
        label = self.label[:-9] if self.label.endswith(":reversed") else self.label + ":reversed"
        return self.replace_coeffs(self.coeffs[::-1], label)

    def metadata(self) -> dict:
        return {"grid": self.grid.to_dict(), "beta": self.beta, "seed": self.seed,
                "label": self.label, "modes": [mode_to_dict(m) for m in self.modes]}


def synthesize_noise_field(g: DiffusionSpec, B: BrownianPath, grid: GridSpec,
                           beta: float = 0.5) -> NoiseField:
    """Left-point Ito sum ``eta(t_j, x) = sum_{l<j} g(t_l, x) dB_l``."""
    if B.steps != grid.steps or abs(B.T - grid.T) > 1e-12 * grid.T:
        raise ValueError(f"Brownian grid (T={B.T}, steps={B.steps}) does not match "
                         f"requested grid (T={grid.T}, steps={grid.steps})")
    if g.n != grid.ndim:
        raise ValueError(f"diffusion is {g.n}-dimensional but grid is {grid.ndim}-dimensional")
    if g.d != B.dim:
        raise ValueError(f"diffusion expects {g.d} Brownian components, path has {B.dim}")
    coeffs = np.zeros((grid.steps + 1, len(g.modes)))
    t_left = B.times[:-1]
    for k, m in enumerate(g.modes):
        np.cumsum(m.time(t_left) * B.increments[:, m.source], out=coeffs[1:, k])
    return NoiseField(grid, g.modes, coeffs, beta, B.seed)


def _bump_weights(m: int, dt: float) -> np.ndarray:
    half = int(np.floor(1.0 / (m * dt)))
    s = m * dt * np.arange(-half, half + 1)
    w = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return w / w.sum()


def mollify_in_time(eta: NoiseField, m: int) -> NoiseField:
    """Convolve with the standard bump of radius 1/m (trapezoidal weights).

    The field is extended by 0 before t=0 and by eta(T) after T.  When
    ``1/m`` does not exceed one step the field is returned unchanged.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    w = _bump_weights(int(m), eta.grid.dt)
    half = (len(w) - 1) // 2
    if half == 0:
        return eta.replace_coeffs(eta.coeffs, f"{eta.label}:m{m}")
    c = eta.coeffs
    ext = np.concatenate([np.zeros((half, c.shape[1])), c, np.repeat(c[-1:], half, axis=0)])
    out = np.zeros_like(c)
    for k, wk in enumerate(w):
        out += wk * ext[k:k + c.shape[0]]
    return eta.replace_coeffs(out, f"{eta.label}:m{m}")


def stopping_time_T_N(eta: NoiseField, N: float) -> float:
    """Last grid time before the C^4 grid norm first exceeds ``N``.

    Returns ``T`` when the norm never exceeds ``N``; floored at the first
    positive grid time.
    """
    norms = eta.ck_norms(4)
    over = np.nonzero(norms > N)[0]
    if over.size == 0:
        return float(eta.grid.T)
    return float(eta.times[max(int(over[0]) - 1, 1)])


def truncate_noise(eta: NoiseField, t_stop: float) -> NoiseField:
    """Frozen field ``eta(t ^ t_stop, x)``."""
    j = time_index(eta.times, t_stop)
    c = np.array(eta.coeffs)
    c[j:] = c[j]
    return eta.replace_coeffs(c, f"{eta.label}:stop{t_stop:.6g}")


def write_noise(eta: NoiseField, path: str | Path, max_order: int = 2) -> tuple[Path, Path]:
    """CSV dump of value and derivative channels plus a JSON sidecar.

    The sidecar carries the coefficient processes, so ``read_noise`` replays
    the field exactly.
    """
    path = Path(path)
    n = eta.n
    header = ["j", "t", "node"] + [f"x{a}" for a in range(n)]
    chans = []
    for order in range(max_order + 1):
        chans.append(eta.channel(order).reshape(eta.grid.steps + 1, -1, n ** (order + 1)))
        header += [f"d{order}_{c}" for c in range(n ** (order + 1))]
    pts = eta.grid.points()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, t in enumerate(eta.times):
            for p in range(pts.shape[0]):
                row = [j, _fmt(t), p] + [_fmt(v) for v in pts[p]]
                for ch in chans:
                    row += [_fmt(v) for v in ch[j, p]]
                w.writerow(row)
    side = path.with_suffix(".json")
    meta = eta.metadata()
    meta["coeffs"] = eta.coeffs.tolist()
    side.write_text(json.dumps(meta, indent=1))
    return path, side


def read_noise(sidecar: str | Path) -> NoiseField:
    meta = json.loads(Path(sidecar).read_text())
    gd = meta["grid"]
    grid = GridSpec(tuple(gd["lower"]), tuple(gd["upper"]), tuple(gd["nodes"]), gd["dt"], gd["T"],
                    gd["periodic"])
    modes = tuple(mode_from_dict(m) for m in meta["modes"])
    coeffs = np.array(meta["coeffs"], dtype=float).reshape(grid.steps + 1, len(modes))
    return NoiseField(grid, modes, coeffs, meta["beta"], meta["seed"], meta["label"])


def _fmt(v: float) -> str:
    return "%.17g" % v
