"""Finite-difference reference solver and the 1-D Cole-Hopf oracle.

The solver advances the random PDE for ``yhat`` forward in time:

* advection ``-(eta + yhat) . grad yhat`` explicitly, upwinded on the total
  velocity (first order, or MUSCL with a minmod limiter);
* the force ``F`` explicitly at the left time point;
* diffusion ``nu * lap`` implicitly, one tridiagonal solve per axis.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import erf, logsumexp, roots_hermite

from .grid import BlowUpError, GridSpec, SpaceTimeField, grid_gradient
from .model import BurgersProblem, InitialSpec, TransformedForce, transformed_force
from .noise import NoiseField

__all__ = [
    "CFLError",
    "antiderivative_1d",
    "cole_hopf_oracle_1d",
    "fd_solve_forward",
    "periodic_shift_check",
    "shift_problem",
]

logger = logging.getLogger(__name__)

SCHEMES = ("minmod", "upwind1")


class CFLError(ValueError):
    """Advective CFL bound violated; ``required_dt`` would satisfy it."""

    def __init__(self, cfl: float, required_dt: float, time: float) -> None:
        self.cfl = cfl
        self.required_dt = required_dt
        self.time = time
        super().__init__(f"CFL number {cfl:.3g} at t={time:.4g} exceeds the limit; "
                         f"use dt <= {required_dt:.6g}")


def _shift(u: np.ndarray, k: int, axis: int, periodic: bool) -> np.ndarray:
    """``out[i] = u[i - k]`` along ``axis``; box grids repeat the edge value."""
    if periodic:
        return np.roll(u, k, axis=axis)
    m = u.shape[axis]
    idx = np.clip(np.arange(m) - k, 0, m - 1)
    return np.take(u, idx, axis=axis)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _advection(u: np.ndarray, vel: np.ndarray, grid: GridSpec, scheme: str) -> np.ndarray:
    """Upwind approximation of ``(vel . grad) u`` for nodal ``u``, ``vel`` of shape ``(*nodes, n)``."""
    out = np.zeros_like(u)
    for a, h in enumerate(grid.spacing):
        dm = u - _shift(u, 1, a, grid.periodic)
        dp = _shift(u, -1, a, grid.periodic) - u
        if scheme == "minmod":
            s = _minmod(dm, dp)
            back = (dm + 0.5 * (s - _shift(s, 1, a, grid.periodic))) / h
            fwd = (dp - 0.5 * (_shift(s, -1, a, grid.periodic) - s)) / h
        else:
            back, fwd = dm / h, dp / h
        va = vel[..., a:a + 1]
        out += va * np.where(va > 0, back, fwd)
    return out


class _ImplicitDiffusion:
    """Solves ``(I - nu dt D_aa) u = b`` axis by axis."""

    def __init__(self, grid: GridSpec, nu: float) -> None:
        self.grid = grid
        self.ops = []
        for h, m in zip(grid.spacing, grid.nodes):
            r = nu * grid.dt / h**2
            if grid.periodic:
                col = np.zeros(m)
                col[0], col[1], col[-1] = 1 + 2 * r, -r, -r
                self.ops.append(col)
            else:
                ab = np.zeros((3, m))
                ab[0, 1:] = -r
                ab[1, :] = 1 + 2 * r
                ab[1, 0] = ab[1, -1] = 1 + r
                ab[2, :-1] = -r
                self.ops.append(ab)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        for a, op in enumerate(self.ops):
            moved = np.moveaxis(u, a, 0)
            flat = moved.reshape(moved.shape[0], -1)
            if self.grid.periodic:
                sol = linalg.solve_circulant(op, flat, baxis=0)
            else:
                sol = linalg.solve_banded((1, 1), op, flat)
            u = np.moveaxis(sol.reshape(moved.shape), 0, a)
        return u


def fd_solve_forward(problem: BurgersProblem, eta: NoiseField, grid: GridSpec | None = None, *,
                     force: TransformedForce | None = None, advect: bool = True,
                     scheme: str = "minmod", with_gradient: bool = False) -> SpaceTimeField:
    """Solve the random PDE for ``yhat`` on the frozen noise realisation.

    Parameters
    ----------
    problem : BurgersProblem
    eta : NoiseField
        Frozen noise; its grid fixes the time step unless ``grid`` is given
        (which must then agree with it).
    force : TransformedForce, optional
        Defaults to ``transformed_force(problem, eta)``.
    advect : bool
        ``False`` drops the advection term (pure reaction-diffusion).
    scheme : {"minmod", "upwind1"}
        Limited second-order upwinding or plain first-order upwinding.

    Returns
    -------
    SpaceTimeField
        ``yhat`` on every grid time; ``meta["stability"]`` records the
        largest CFL number met.

    Raises
    ------
    CFLError
        When ``max|eta + yhat| dt / h`` exceeds ``grid.cfl_limit``.
    BlowUpError
        When the field becomes non-finite.
    """
    grid = grid or eta.grid
    if not grid.same_space(eta.grid) or grid.steps != eta.grid.steps or abs(grid.dt - eta.grid.dt) > 1e-14:
        raise ValueError("solver grid and noise grid differ")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    F = force if force is not None else transformed_force(problem, eta)
    n = problem.n
    pts = grid.points()
    u = (problem.h(pts) - eta.evaluate(0, pts)).reshape(grid.nodes + (n,))
    diffuse = _ImplicitDiffusion(grid, problem.nu) if problem.nu > 0 else None
    out = np.empty((grid.steps + 1,) + grid.nodes + (n,))
    out[0] = u
    hmin = min(grid.spacing)
    max_cfl = 0.0
    for j in range(grid.steps):
        rhs = F.on_nodes(j, grid, u)
        if advect:
            vel = u + eta.at_nodes(j, 0)
            speed = float(np.max(np.abs(vel))) if vel.size else 0.0
            cfl = max(speed * grid.dt / h for h in grid.spacing)
            max_cfl = max(max_cfl, cfl)
            if cfl > grid.cfl_limit:
                raise CFLError(cfl, grid.cfl_limit * hmin / speed, float(grid.times[j]))
            rhs = rhs - _advection(u, vel, grid, scheme)
        u = u + grid.dt * rhs
        if diffuse is not None:
            u = diffuse(u)
        if not np.all(np.isfinite(u)):
            raise BlowUpError(grid.times[j + 1])
        out[j + 1] = u
    grad = None
    if with_gradient:
        grad = np.stack([grid_gradient(out[j], grid) for j in range(grid.steps + 1)])
    meta = {"stability": {"max_cfl": max_cfl, "cfl_limit": grid.cfl_limit}, "scheme": scheme,
            "solver": "fd"}
    return SpaceTimeField(grid, grid.times, out, grad, meta)


def antiderivative_1d(h: InitialSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-form primitive of a one-dimensional preset profile (up to a constant)."""
    if h.n != 1:
        raise ValueError("Cole-Hopf oracle is one-dimensional")
    c0 = 0.0 if h.offset is None else float(h.offset[0])
    a = 0.0 if h.linear is None else float(h.linear[0][0])
    modes = list(h.modes)
    for m in modes:
        if m.factors[0].kind == "sin" and m.factors[0].omega == 0:
            raise ValueError("zero-frequency sine factor; use a constant offset")

    def phi(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = c0 * x + 0.5 * a * x * x
        for m in modes:
            fac = m.factors[0]
            if fac.kind == "const":
                out = out + m.amp * x
            elif fac.kind == "sin":
                out = out - m.amp / fac.omega * np.cos(fac.omega * x + fac.phase)
            else:
                z = (x - fac.center) / (np.sqrt(2.0) * fac.width)
                out = out + m.amp * fac.width * np.sqrt(np.pi / 2) * erf(z)
        return out

    return phi


def cole_hopf_oracle_1d(nu: float, h: InitialSpec, t: float, x, *, start_order: int = 32,
                        max_order: int = 8192, tol: float = 1e-8) -> np.ndarray:
    """Exact viscous Burgers solution in 1-D via the Hopf formula.

    ``y = int (x-xi)/t K dxi / int K dxi`` with
    ``K = exp(-(x-xi)^2/(4 nu t) - Phi(xi)/(2 nu))`` and ``Phi' = h``,
    evaluated by Gauss-Hermite quadrature in log-sum-exp form.  The order
    doubles until successive values agree to ``tol``.
    """
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        return h(x[:, None])[:, 0]
    phi = antiderivative_1d(h)
    s = np.sqrt(4.0 * nu * t)

    def quad(order: int) -> np.ndarray:
        z, w = roots_hermite(order)
        keep = w > 0
        z, lw = z[keep], np.log(w[keep])
        lg = lw[None, :] - phi(x[:, None] - s * z[None, :]) / (2.0 * nu)
        num_pos = logsumexp(lg, b=np.maximum(z, 0)[None, :], axis=1)
        num_neg = logsumexp(lg, b=np.maximum(-z, 0)[None, :], axis=1)
        den = logsumexp(lg, axis=1)
        return (s / t) * (np.exp(num_pos - den) - np.exp(num_neg - den))

    order = start_order
    prev = quad(order)
    while order < max_order:
        order *= 2
        cur = quad(order)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise ArithmeticError(f"Hopf quadrature did not converge by order {max_order}")


def _shift_modes(modes, offset):
    out = []
    for m in modes:
        facs = []
        for fac, a in zip(m.factors, offset):
            if fac.kind == "sin":
                facs.append(replace(fac, phase=fac.phase + fac.omega * a))
            elif fac.kind == "gauss":
                facs.append(replace(fac, center=fac.center - a))
            else:
                facs.append(fac)
        out.append(replace(m, factors=tuple(facs)))
    return tuple(out)


def shift_problem(problem: BurgersProblem, offset) -> BurgersProblem:
    """Problem with every datum translated: ``h_s(x) = h(x + offset)`` etc."""
    if problem.h.linear is not None:
        raise ValueError("linear initial data are not periodic")
    offset = tuple(float(a) for a in offset)
    h = replace(problem.h, modes=_shift_modes(problem.h.modes, offset))
    f = replace(problem.f, modes=_shift_modes(problem.f.modes, offset))
    g = replace(problem.g, modes=_shift_modes(problem.g.modes, offset))
    return replace(problem, h=h, f=f, g=g)


def periodic_shift_check(problem: BurgersProblem, eta: NoiseField, shift, **solver_kw) -> float:
    """``max |solve(shifted data) - shift(solve(data))|`` over the space-time grid.

    ``shift`` counts whole nodes per axis.
    """
    grid = eta.grid
    if not grid.periodic:
        raise ValueError("shift check needs a periodic grid")
    shift = np.atleast_1d(np.asarray(shift))
    if shift.shape != (grid.ndim,) or np.any(shift != np.round(shift)):
        raise ValueError(f"shift must be a whole number of nodes per axis, got {shift}")
    shift = tuple(int(s) % m for s, m in zip(shift, grid.nodes))
    offset = tuple(s * h for s, h in zip(shift, grid.spacing))
    base = fd_solve_forward(problem, eta, **solver_kw)
    moved_problem = shift_problem(problem, offset)
    moved_eta = eta if not any(shift) else NoiseField(
        grid, _shift_modes(eta.modes, offset), eta.coeffs, eta.beta, eta.seed, eta.label + ":shifted")
    moved = fd_solve_forward(moved_problem, moved_eta, **solver_kw)
    axes = tuple(range(1, grid.ndim + 1))
    expect = np.roll(base.values, tuple(-s for s in shift), axis=axes)
    return float(np.max(np.abs(moved.values - expect))) if expect.size else 0.0
