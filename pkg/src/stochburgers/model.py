"""Problem definition, substitution y = yhat + eta and the transformed force.

With ``v = yhat + eta`` (or ``zeta_M(yhat) + eta`` under the cutoff) the
random PDE for ``yhat`` carries the force

    F(t, x, yhat) = f(t, x, yhat + eta) + nu * lap(eta) - (v . grad) eta,

where ``((v . grad) eta)_i = sum_k v_k d_k eta_i``.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import GridSpec, SpaceTimeField
from .noise import DiffusionSpec, NoiseField
from .profiles import SpatialMode, mode_tensor

__all__ = [
    "BurgersProblem",
    "Domain",
    "ForceSpec",
    "InitialSpec",
    "TransformedForce",
    "cutoff_force",
    "cutoff_map",
    "default_cutoff_level",
    "reconstruct",
    "smooth_step",
    "substitute",
    "time_reverse",
    "transformed_force",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Domain:
    """Periodic torus or truncated box with constant extension."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic: bool = True

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def periods(self) -> tuple[float | None, ...]:
        if not self.periodic:
            return (None,) * self.n
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    def grid(self, nodes: tuple[int, ...] | int, dt: float, T: float) -> GridSpec:
        if isinstance(nodes, int):
            nodes = (nodes,) * self.n
        return GridSpec(self.lower, self.upper, tuple(nodes), dt, T, self.periodic)


@dataclass(frozen=True)
class InitialSpec:
    """``h(x) = offset + A x + sum of modes`` with exact gradient and Hessian."""

    n: int
    offset: tuple[float, ...] | None = None
    linear: tuple[tuple[float, ...], ...] | None = None
    modes: tuple[SpatialMode, ...] = ()
    periods: tuple[float | None, ...] | None = None

    def derivative(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        """Shape ``(P, n) + (n,)*order``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], self.n) + (self.n,) * order)
        if order == 0:
            if self.offset is not None:
                out += np.asarray(self.offset)
            if self.linear is not None:
                out += x @ np.asarray(self.linear).T
        elif order == 1 and self.linear is not None:
            out += np.asarray(self.linear)
        for m in self.modes:
            out[:, m.comp] += m.amp * mode_tensor(m, x, order, self.periods)
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.derivative(x, 0)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.derivative(x, 1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self.derivative(x, 2)


@dataclass(frozen=True)
class ForceSpec:
    """``f(t, x, y) = -damping * y + sum of modes`` (forcing independent of y)."""

    n: int
    damping: float = 0.0
    modes: tuple[SpatialMode, ...] = ()
    periods: tuple[float | None, ...] | None = None

    def forcing(self, t: float, x: np.ndarray, order: int = 0) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], self.n) + (self.n,) * order)
        for m in self.modes:
            out[:, m.comp] += (m.amp * float(m.time(t))) * mode_tensor(m, x, order, self.periods)
        return out

    def __call__(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.forcing(t, x) - self.damping * np.asarray(y)

    def grad_x(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.forcing(t, x, 1)

    def grad_y(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(x).shape[0]
        return np.broadcast_to(-self.damping * np.eye(self.n), (p, self.n, self.n)).copy()

    def growth_constant(self) -> float:
        bound = sum(abs(m.amp) * (1.0 + abs(m.time.a)) for m in self.modes)
        return max(abs(self.damping), bound)

    @property
    def is_zero(self) -> bool:
        return self.damping == 0 and not self.modes


@dataclass(frozen=True)
class BurgersProblem:
    """Data of the stochastic Burgers equation.

    Parameters
    ----------
    nu : float
        Viscosity (``>= 0``).
    T : float
        Horizon.
    h, f, g :
        Initial profile, force and diffusion coefficient.
    beta : float
        Hoelder target in (0, 1).
    L : float or None
        Growth/Lipschitz constant of ``f``; derived from the preset when
        omitted.
    """

    nu: float
    T: float
    domain: Domain
    h: InitialSpec
    f: ForceSpec
    g: DiffusionSpec
    beta: float = 0.5
    L: float | None = None
    name: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.nu < 0:
            raise ValueError(f"viscosity must be non-negative, got {self.nu}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        n = self.domain.n
        if not (self.h.n == self.f.n == self.g.n == n):
            raise ValueError("h, f, g and domain disagree on the dimension")
        if self.L is None:
            object.__setattr__(self, "L", self.f.growth_constant())

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def d(self) -> int:
        return self.g.d

    def with_nu(self, nu: float) -> "BurgersProblem":
        return replace(self, nu=float(nu))

    def grid(self, nodes, dt: float) -> GridSpec:
        return self.domain.grid(nodes, dt, self.T)


def smooth_step(s: np.ndarray, order: int = 0) -> np.ndarray:
    """``S(s) = psi(s) / (psi(s) + psi(1-s))`` with ``psi(s) = exp(-1/s)``.

    ``order=1`` returns ``S'``.  S is 0 for s <= 0 and 1 for s >= 1.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    mid = (s > 0) & (s < 1)
    if order == 0:
        out[s >= 1] = 1.0
    u = s[mid]
    # ratio form avoids under/overflow: S = 1 / (1 + exp(1/u - 1/(1-u)))
    e = np.exp(np.clip(1.0 / u - 1.0 / (1.0 - u), -700, 700))
    val = 1.0 / (1.0 + e)
    if order == 0:
        out[mid] = val
    else:
        out[mid] = val * (1.0 - val) * (1.0 / u**2 + 1.0 / (1.0 - u) ** 2)
    return out


def cutoff_map(y: np.ndarray, M: float, jacobian: bool = False):
    """``zeta_M(y) = xi_M(|y|) y`` with ``xi_M(r) = 1 - S(r - M)``.

    With ``jacobian=True`` returns ``(zeta, dzeta/dy)``.
    """
    if not M > 0:
        raise ValueError(f"cutoff level must be positive, got {M}")
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1, keepdims=True)
    xi = 1.0 - smooth_step(r - M)
    z = xi * y
    if not jacobian:
        return z
    n = y.shape[-1]
    dxi = -smooth_step(r - M, order=1)
    safe = np.where(r > 0, r, 1.0)
    unit = y / safe
    jac = xi[..., None] * np.eye(n) + (dxi * safe)[..., None] * unit[..., :, None] * unit[..., None, :]
    return z, jac


@dataclass(frozen=True)
class TransformedForce:
    """Force of the random PDE for ``yhat`` and its first derivatives.

    All evaluators take a time index ``j`` into ``noise.times``; the force
    spec is queried at ``T - t_j`` when ``reversed`` is set.
    """

    f: ForceSpec
    noise: NoiseField
    nu: float
    M: float | None = None
    reversed: bool = False

    @property
    def n(self) -> int:
        return self.noise.n

    def _t(self, j: int) -> float:
        t = float(self.noise.times[j])
        return self.noise.grid.T - t if self.reversed else t

    def _v(self, y: np.ndarray, eta: np.ndarray, jac: bool = False):
        if self.M is None:
            return (y + eta, None) if jac else y + eta
        if jac:
            z, dz = cutoff_map(y, self.M, jacobian=True)
            return z + eta, dz
        return cutoff_map(y, self.M) + eta

    def __call__(self, j: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        t = self._t(j)
        if self.noise.is_zero:
            return self.f(t, x, y)
        eta = self.noise.evaluate(j, x, 0)
        d1 = self.noise.evaluate(j, x, 1)
        lap = np.trace(self.noise.evaluate(j, x, 2), axis1=-2, axis2=-1)
        v = self._v(y, eta)
        return self.f(t, x, y + eta) + self.nu * lap - np.einsum("pik,pk->pi", d1, v)

    def grad_y(self, j: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``[p, i, l] = dF_i / dyhat_l``."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        t = self._t(j)
        if self.noise.is_zero:
            return self.f.grad_y(t, x, y)
        eta = self.noise.evaluate(j, x, 0)
        d1 = self.noise.evaluate(j, x, 1)
        _, dz = self._v(y, eta, jac=True)
        adv = d1 if dz is None else np.einsum("pik,pkl->pil", d1, dz)
        return self.f.grad_y(t, x, y + eta) - adv

    def grad_x(self, j: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``[p, i, l] = dF_i / dx_l`` at fixed ``yhat``."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        t = self._t(j)
        if self.noise.is_zero:
            return self.f.grad_x(t, x, y)
        eta = self.noise.evaluate(j, x, 0)
        d1 = self.noise.evaluate(j, x, 1)
        d2 = self.noise.evaluate(j, x, 2)
        d3 = self.noise.evaluate(j, x, 3)
        v = self._v(y, eta)
        out = self.f.grad_x(t, x, y + eta) + np.einsum("pik,pkl->pil", self.f.grad_y(t, x, y + eta), d1)
        out = out + self.nu * np.einsum("pikkl->pil", d3)
        out = out - np.einsum("pik,pkl->pil", d1, d1) - np.einsum("pk,pikl->pil", v, d2)
        return out

    def on_nodes(self, j: int, grid: GridSpec, y: np.ndarray) -> np.ndarray:
        """Force on the nodes for nodal ``y`` of shape ``(*nodes, n)``."""
        n = self.n
        t = self._t(j)
        pts = grid.points()
        yf = y.reshape(-1, n)
        if self.noise.is_zero:
            return self.f(t, pts, yf).reshape(y.shape)
        eta = self.noise.at_nodes(j, 0).reshape(-1, n)
        d1 = self.noise.at_nodes(j, 1).reshape(-1, n, n)
        lap = np.trace(self.noise.at_nodes(j, 2).reshape(-1, n, n, n), axis1=-2, axis2=-1)
        v = self._v(yf, eta)
        out = self.f(t, pts, yf + eta) + self.nu * lap - np.einsum("pik,pk->pi", d1, v)
        return out.reshape(y.shape)


def transformed_force(problem: BurgersProblem, eta: NoiseField) -> TransformedForce:
    """Force of the random PDE obtained from ``yhat = y - eta``."""
    if not isinstance(eta, NoiseField):
        raise ValueError("transformed force needs a NoiseField with derivative channels")
    if eta.n != problem.n:
        raise ValueError("noise field dimension does not match the problem")
    return TransformedForce(problem.f, eta, problem.nu)


def cutoff_force(F: TransformedForce, M: float) -> TransformedForce:
    """``F^M``: the advection-of-eta argument ``yhat`` replaced by ``zeta_M(yhat)``."""
    if not M > 0:
        raise ValueError(f"cutoff level must be positive, got {M}")
    return replace(F, M=float(M))


def default_cutoff_level(problem: BurgersProblem, F: TransformedForce) -> float:
    """``2 sup|h| + T sup|F(., ., 0)|`` over the grid nodes and times."""
    grid = F.noise.grid
    pts = grid.points()
    sup_h = float(np.max(np.linalg.norm(problem.h(pts), axis=-1)))
    zero = np.zeros((grid.nodes) + (problem.n,))
    sup_f = 0.0
    for j in range(grid.steps + 1):
        sup_f = max(sup_f, float(np.max(np.linalg.norm(F.on_nodes(j, grid, zero), axis=-1))))
    M = 2.0 * sup_h + problem.T * sup_f
    return M if M > 0 else 1.0


def _check_layout(a: SpaceTimeField, eta: NoiseField) -> None:
    if not a.grid.same_space(eta.grid) or a.values.shape[0] != eta.grid.steps + 1:
        raise ValueError("field and noise grids do not match")
    if not np.allclose(a.times, eta.times, rtol=0, atol=1e-12):
        raise ValueError("field and noise time grids do not match")


def _digest(a: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(a).tobytes(), digest_size=16).hexdigest()


def substitute(y: SpaceTimeField, eta: NoiseField) -> SpaceTimeField:
    """``yhat = y - eta`` on the grid.

    The rounding residual ``y - fl(yhat + eta)`` rides along in ``meta`` so
    that ``reconstruct`` returns ``y`` bit for bit; it is ignored once the
    values change.
    """
    _check_layout(y, eta)
    vals = y.values - eta.values
    meta = dict(y.meta)
    meta["roundoff"] = (_digest(vals), _digest(eta.values), y.values - (vals + eta.values))
    return SpaceTimeField(y.grid, y.times, vals, None, meta)


def reconstruct(yhat: SpaceTimeField, eta: NoiseField) -> SpaceTimeField:
    """``y = yhat + eta`` on the grid."""
    _check_layout(yhat, eta)
    meta = dict(yhat.meta)
    ev = eta.values
    out = yhat.values + ev
    tag = meta.pop("roundoff", None)
    if tag is not None and tag[0] == _digest(yhat.values) and tag[1] == _digest(ev):
        out = out + tag[2]
    return SpaceTimeField(yhat.grid, yhat.times, out, None, meta)


def time_reverse(obj, T: float | None = None):
    """Index reversal ``t -> T - t`` of fields, noise fields and forces.

    An involution on the uniform grid.
    """
    if isinstance(obj, SpaceTimeField):
        grad = None if obj.gradient is None else obj.gradient[::-1].copy()
        times = obj.times if T is None else T - obj.times[::-1]
        return SpaceTimeField(obj.grid, times, obj.values[::-1].copy(), grad, dict(obj.meta))
    if isinstance(obj, NoiseField):
        return obj.time_reversed()
    if isinstance(obj, TransformedForce):
        return replace(obj, noise=obj.noise.time_reversed(), reversed=not obj.reversed)
    raise TypeError(f"cannot time-reverse {type(obj).__name__}")
