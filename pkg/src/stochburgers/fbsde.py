"""Local FBSDE solver for the time-reversed random PDE and global stitching.

Reversed time ``s = T - t`` turns the random PDE into the backward problem

    ybar(s) = terminal + int_s^T' [nu lap ybar - (etabar + ybar).grad ybar + Fbar] dr,

whose solution satisfies ``Y_s = ybar(s, X_s)`` along

    X_s = x - int (etabar(r, X_r) + Yhat(r, X_r)) dr + sqrt(2 nu) (W_s - W_tau),
    Y_s = terminal(X_T') + int_s^T' Fbar(r, X_r, Y_r) dr - int Z dW.

``picard_local_solve`` iterates the feedback ``Yhat`` (a grid field) through
one Euler forward sweep and one least-squares Monte Carlo backward sweep until
successive feedback fields agree to ``tol``.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .grid import GridSpec, SpaceTimeField, grid_gradient, interpolate
from .model import (BurgersProblem, InitialSpec, TransformedForce, cutoff_force,
                    default_cutoff_level, time_reverse, transformed_force)
from .noise import BrownianPath, NoiseField
from .regression import Basis, Fit, least_squares, make_basis

__all__ = [
    "FbsdeBatch",
    "GlobalSolution",
    "LocalSolution",
    "MCConfig",
    "MarkovReport",
    "Window",
    "WindowPolicy",
    "derivative_fbsde_solve",
    "estimate_constants",
    "estimate_window_length",
    "euler_forward",
    "global_continuation",
    "markov_identity_check",
    "picard_local_solve",
    "regress_backward",
]

logger = logging.getLogger(__name__)


def estimate_window_length(K: float, C: float, safety: float = 1.0, T: float = 1.0) -> float:
    """``gamma = safety / (1 + K + K^2 + C)`` capped at ``min(1, T)``."""
    if K < 0 or C < 0:
        raise ValueError("K and C must be non-negative")
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    return min(safety / (1.0 + K + K * K + C), 1.0, T)


@dataclass(frozen=True)
class Window:
    """Index range ``[j0, j1]`` of the reversed time grid with step ``dt``."""

    j0: int
    j1: int
    dt: float

    def __post_init__(self) -> None:
        if not 0 <= self.j0 < self.j1:
            raise ValueError(f"bad window indices ({self.j0}, {self.j1})")

    @property
    def steps(self) -> int:
        return self.j1 - self.j0

    @property
    def t0(self) -> float:
        return self.j0 * self.dt

    @property
    def t1(self) -> float:
        return self.j1 * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.j0, self.j1 + 1)


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo settings of the local solver.

    Parameters
    ----------
    paths : int
        Number of simulated paths.
    basis : {"auto", "trig", "legendre", "poly", "hat"}
        Regression basis; ``auto`` picks trig on tori and Legendre on boxes.
    order : int
        Basis order per axis.
    tol : float
        Picard stopping tolerance on the sup-grid distance between sweeps.
    max_sweeps : int
    seed : int
        Base seed; window seeds derive from ``(seed, window start)``.
    inner : int
        Fixed-point evaluations resolving the implicit Y step.
    control_variate : bool
        Subtract ``sqrt(2 nu) grad(fit_{k+1})(X_k) dW_k`` from the regression
        target (mean zero, lowers the variance).
    gradient : bool
        Solve the derivative FBSDE for the gradient channel after
        convergence; otherwise the channel holds central differences.
    """

    paths: int = 20000
    basis: str = "auto"
    order: int = 6
    tol: float = 2e-3
    max_sweeps: int = 30
    seed: int = 0
    inner: int = 3
    control_variate: bool = True
    gradient: bool = False
    extend: str = "constant"

    def __post_init__(self) -> None:
        if self.paths < 2:
            raise ValueError("need at least two paths")
        if self.extend not in ("constant", "error"):
            raise ValueError("extend must be 'constant' or 'error'")


class Terminal(Protocol):
    def __call__(self, x: np.ndarray) -> np.ndarray: ...
    def gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class FbsdeBatch:
    """Monte Carlo ensemble over one window.

    ``X``, ``Y`` have shape ``(paths, steps+1, n)``; ``Z`` ``(paths, steps+1, n, n)``
    (last slice unused).  ``dX``/``dY`` map a direction ``k`` to arrays shaped
    like ``X``.
    """

    window: Window
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    dW: np.ndarray
    seeds: tuple[int, ...]
    dX: dict = field(default_factory=dict)
    dY: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.X.shape[0]


@dataclass
class LocalSolution:
    """Grid solution of the reversed problem over one window."""

    window: Window
    grid: GridSpec
    values: np.ndarray
    gradient: np.ndarray | None
    log: list[float]
    converged: bool
    stderr: np.ndarray
    batch: FbsdeBatch | None = None
    fits: list | None = None
    M: float | None = None
    constants: dict = field(default_factory=dict)
    status: str = "converged"
    gradient_source: str = "finite-difference"
    initial: Callable | None = None
    fit_grad_stderr: np.ndarray | None = None
    gradient_stderr: float | None = None

    @property
    def times(self) -> np.ndarray:
        return self.window.times

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def lipschitz(self) -> float:
        g = self.gradient if self.gradient is not None else np.stack(
            [grid_gradient(v, self.grid) for v in self.values])
        return float(np.max(np.abs(g))) if g.size else 0.0

    @property
    def rho(self) -> float | None:
        """Largest ratio ``d_{k+1}/d_k`` past the first sweep (``None`` if undefined)."""
        d = np.asarray(self.log)
        if d.size < 3:
            return None
        prev, nxt = d[1:-1], d[2:]
        mask = prev > 0
        if not mask.any():
            return None
        return float(np.max(nxt[mask] / prev[mask]))

    @property
    def bound_ok(self) -> bool:
        return self.M is None or self.sup_norm <= self.M

    def to_field(self) -> SpaceTimeField:
        meta = {"solver": "fbsde", "window": [self.window.t0, self.window.t1], "log": list(self.log),
                "converged": self.converged, "status": self.status}
        return SpaceTimeField(self.grid, self.times, self.values, self.gradient, meta)

    def metadata(self) -> dict:
        return {"window": [self.window.t0, self.window.t1], "steps": self.window.steps,
                "log": [float(v) for v in self.log], "converged": self.converged,
                "status": self.status, "rho": self.rho, "sup_norm": self.sup_norm,
                "lipschitz": self.lipschitz, "M": self.M, "bound_ok": self.bound_ok,
                "stderr_max": float(np.max(self.stderr)) if self.stderr.size else 0.0,
                "gradient_source": self.gradient_source, "constants": self.constants}


class _InitialTerminal:
    """Terminal condition from an initial profile."""

    def __init__(self, h: InitialSpec) -> None:
        self.h = h

    def __call__(self, x):
        return self.h(x)

    def gradient(self, x):
        return self.h.gradient(x)


class _FitTerminal:
    """Value function ``c(x) + dt F(j, x, .)`` at the first step of a solved window."""

    def __init__(self, fit: Fit, F: TransformedForce, j: int, dt: float, inner: int, n: int) -> None:
        self.fit, self.F, self.j, self.dt, self.inner, self.n = fit, F, j, dt, inner, n

    def __call__(self, x):
        x = np.atleast_2d(x)
        c = self.fit(x).reshape(-1, self.n)
        y = c.copy()
        for _ in range(self.inner):
            y = c + self.dt * self.F(self.j, x, y)
        return y

    def gradient(self, x):
        x = np.atleast_2d(x)
        y = self(x)
        gc = self.fit.gradient(x).reshape(-1, self.n, self.n)
        Fy = self.F.grad_y(self.j, x, y)
        Fx = self.F.grad_x(self.j, x, y)
        return gc + self.dt * (Fx + np.einsum("pik,pkl->pil", Fy, gc))


def _as_terminal(terminal) -> Terminal:
    if isinstance(terminal, InitialSpec):
        return _InitialTerminal(terminal)
    return terminal


class _GridFeedback:
    def __init__(self, values: np.ndarray, grid: GridSpec, extend: str = "constant") -> None:
        self.values, self.grid, self.extend = values, grid, extend

    def __call__(self, k: int, x: np.ndarray) -> np.ndarray:
        if self.extend == "error" and not self.grid.periodic:
            lo, hi = np.asarray(self.grid.lower), np.asarray(self.grid.upper)
            if np.any(x < lo) or np.any(x > hi):
                raise ValueError("feedback evaluated outside its interpolation domain")
        return interpolate(self.values[k], self.grid, x)

    def gradient(self, k: int, x: np.ndarray) -> np.ndarray:
        return interpolate(grid_gradient(self.values[k], self.grid), self.grid, x)


def _seeds(seed: int, j0: int) -> tuple[np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), int(j0)])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def sample_start_points(grid: GridSpec, paths: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified uniform points on the domain (per-axis strata in 1-D)."""
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    if grid.ndim == 1:
        u = (np.arange(paths) + rng.random(paths)) / paths
        return (lo + (hi - lo) * u)[:, None]
    return lo + (hi - lo) * rng.random((paths, grid.ndim))


def euler_forward(x0: np.ndarray, window: Window, feedback, eta_bar: NoiseField | None, nu: float,
                  W, grid: GridSpec | None = None) -> np.ndarray:
    """Euler scheme ``X_{k+1} = X_k - (etabar + Yhat)(X_k) dt + sqrt(2 nu) dW_k``.

    Parameters
    ----------
    x0 : array
        Start point(s), ``(n,)`` or ``(P, n)``.
    feedback : callable ``(k, X) -> (P, n)`` or None
        Current ``Yhat`` at local step ``k``; ``None`` means zero.
    eta_bar : NoiseField or None
        Reversed noise, indexed by ``window.j0 + k``.
    W : BrownianPath or array
        Increments ``(steps, n)`` shared by all paths, or ``(P, steps, n)``.
    grid : GridSpec, optional
        When periodic, positions are wrapped into the fundamental cell.

    Returns
    -------
    ndarray ``(P, steps+1, n)``.
    """
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p, n = X0.shape
    dW = W.increments if isinstance(W, BrownianPath) else np.asarray(W, dtype=float)
    if dW.ndim == 2:
        dW = np.broadcast_to(dW, (p,) + dW.shape)
    if dW.shape[1] != window.steps:
        raise ValueError(f"driver has {dW.shape[1]} steps, window has {window.steps}")
    X = np.empty((p, window.steps + 1, n))
    X[:, 0] = X0
    amp = np.sqrt(2.0 * nu)
    for k in range(window.steps):
        x = X[:, k]
        drift = np.zeros_like(x)
        if eta_bar is not None and not eta_bar.is_zero:
            drift += eta_bar.evaluate(window.j0 + k, x)
        if feedback is not None:
            drift += feedback(k, x)
        nxt = x - drift * window.dt
        if nu > 0:
            nxt = nxt + amp * dW[:, k]
        X[:, k + 1] = grid.wrap(nxt) if grid is not None else nxt
    return X


@dataclass
class BackwardResult:
    Y: np.ndarray
    Z: np.ndarray
    fits: list
    stderr: np.ndarray
    nodes: np.ndarray | None
    basis: Basis
    grad_stderr: np.ndarray | None = None


def regress_backward(X: np.ndarray, terminal, F: TransformedForce, nu: float, window: Window,
                     dW: np.ndarray | None = None, basis: Basis | None = None, inner: int = 3,
                     control_variate: bool = True, grid: GridSpec | None = None) -> BackwardResult:
    """Least-squares Monte Carlo backward sweep.

    ``Y_k = E[Y_{k+1} | X_k] + dt F(t_k, X_k, Y_k)`` (implicit, ``inner``
    fixed-point evaluations) and ``Z_k = E[(Y_{k+1} - E_k Y_{k+1}) dW_k^T | X_k] / dt``.
    Conditional expectations are least-squares fits on ``basis``.  With
    ``nu = 0`` every path is deterministic given its start, so ``Y`` is the
    per-path recursion and ``Z`` vanishes.

    ``stderr[k]`` accumulates (root-sum-square from the terminal) the
    standard error of the fitted mean, maximised over the grid nodes.
    """
    terminal = _as_terminal(terminal)
    p, m, n = X.shape
    steps = m - 1
    if steps != window.steps:
        raise ValueError("path length does not match the window")
    if basis is None:
        if grid is None:
            raise ValueError("need a basis or a grid")
        basis = make_basis("auto", 6, grid)
    grid = grid or basis.grid
    nodes_x = grid.points()
    Y = np.empty((p, m, n))
    Z = np.zeros((p, m, n, n))
    Y[:, steps] = terminal(X[:, steps])
    nodes = np.empty((m,) + grid.nodes + (n,))
    nodes[steps] = terminal(nodes_x).reshape(grid.nodes + (n,))
    se = np.zeros(m)
    gse = np.zeros(m)
    fits: list = [None] * m
    dt = window.dt
    grad_next: Callable | None = terminal.gradient
    for k in range(steps - 1, -1, -1):
        j = window.j0 + k
        x = X[:, k]
        if nu == 0:
            y = Y[:, k + 1].copy()
            for _ in range(inner):
                y = Y[:, k + 1] + dt * F(j, x, y)
            Y[:, k] = y
            basis, (fit,) = least_squares(basis, x, [y])
            fits[k] = fit
            nodes[k] = fit(nodes_x).reshape(grid.nodes + (n,))
            se[k] = float(np.max(fit.se(nodes_x)))
            gse[k] = float(np.max(fit.gradient_se(nodes_x)))
            continue
        target = Y[:, k + 1]
        if control_variate and dW is not None and grad_next is not None:
            target = target - np.sqrt(2.0 * nu) * np.einsum("pil,pl->pi", grad_next(x), dW[:, k])
        basis, (fit,) = least_squares(basis, x, [target])
        c = fit(x).reshape(p, n)
        y = c.copy()
        for _ in range(inner):
            y = c + dt * F(j, x, y)
        Y[:, k] = y
        if dW is not None:
            # centring by the fitted mean leaves the estimator unbiased and kills its noise for constant Y
            zt = (Y[:, k + 1] - c)[:, :, None] * dW[:, k][:, None, :] / dt
            Z[:, k] = fit.project(x, zt)(x).reshape(p, n, n)
        fits[k] = fit
        cn = fit(nodes_x).reshape(-1, n)
        yn = cn.copy()
        for _ in range(inner):
            yn = cn + dt * F(j, nodes_x, yn)
        nodes[k] = yn.reshape(grid.nodes + (n,))
        se[k] = float(np.max(fit.se(nodes_x)))
        gse[k] = float(np.max(fit.gradient_se(nodes_x)))
        grad_next = (lambda xx, f=fit: f.gradient(xx).reshape(-1, n, n))
    acc = np.sqrt(np.cumsum(se[::-1] ** 2)[::-1])
    gacc = np.sqrt(np.cumsum(gse[::-1] ** 2)[::-1])
    return BackwardResult(Y, Z, fits, acc, nodes, basis, gacc)


def picard_local_solve(problem: BurgersProblem, F_bar: TransformedForce, terminal, window: Window,
                       grid: GridSpec, mc: MCConfig = MCConfig(), *, M: float | None = None,
                       feedback0: np.ndarray | None = None, seed: int | None = None,
                       gamma_max: float | None = None) -> LocalSolution:
    """Picard iteration of the feedback field over one window.

    Each sweep simulates ``euler_forward`` with the current feedback and runs
    ``regress_backward``; the nodal values become the next feedback.  The
    same start points and driver increments are reused in every sweep, so the
    iteration is a deterministic map.

    Returns a LocalSolution whose ``status`` is ``"converged"`` or
    ``"not-converged"`` (never silently accepted).
    """
    terminal = _as_terminal(terminal)
    eta_bar = F_bar.noise
    n = problem.n
    if gamma_max is not None and window.t1 - window.t0 > gamma_max * (1 + 1e-12):
        warnings.warn(f"window length {window.t1 - window.t0:.4g} exceeds the estimated "
                      f"contraction length {gamma_max:.4g}", RuntimeWarning, stacklevel=2)
    rng_x, rng_w = _seeds(mc.seed if seed is None else seed, window.j0)
    x0 = sample_start_points(grid, mc.paths, rng_x)
    dW = rng_w.standard_normal((mc.paths, window.steps, n)) * np.sqrt(window.dt)
    basis = make_basis(mc.basis, mc.order, grid)
    if feedback0 is None:
        term_nodes = terminal(grid.points()).reshape(grid.nodes + (n,))
        feedback0 = np.broadcast_to(term_nodes, (window.steps + 1,) + term_nodes.shape).copy()
    fb = feedback0
    log: list[float] = []
    converged = False
    res = X = None
    t_start = time.perf_counter()
    for sweep in range(mc.max_sweeps):
        X = euler_forward(x0, window, _GridFeedback(fb, grid, mc.extend), eta_bar, problem.nu, dW, grid)
        res = regress_backward(X, terminal, F_bar, problem.nu, window, dW, basis, mc.inner,
                               mc.control_variate, grid)
        basis = res.basis
        dist = float(np.max(np.abs(res.nodes - fb))) if fb.size else 0.0
        log.append(dist)
        fb = res.nodes
        logger.debug("window [%.4g, %.4g] sweep %d: distance %.3e", window.t0, window.t1, sweep + 1, dist)
        if dist < mc.tol:
            converged = True
            break
    logger.info("window [%.4g, %.4g]: %d sweeps, last distance %.3e (%.2fs)", window.t0, window.t1,
                len(log), log[-1], time.perf_counter() - t_start)
    batch = FbsdeBatch(window, X, res.Y, res.Z, dW, (int(mc.seed if seed is None else seed), window.j0))
    sol = LocalSolution(window, grid, fb, None, log, converged, res.stderr, batch, res.fits, M,
                        status="converged" if converged else "not-converged")
    sol.initial = _FitTerminal(res.fits[0], F_bar, window.j0, window.dt, mc.inner, n)
    sol.fit_grad_stderr = res.grad_stderr
    if mc.gradient:
        der = derivative_fbsde_solve(problem, F_bar, sol, terminal, mc=mc)
        sol.gradient = der.G
        sol.gradient_source = "derivative-fbsde"
        sol.gradient_stderr = der.stderr
    else:
        sol.gradient = np.stack([grid_gradient(v, grid) for v in fb])
    if M is not None and not sol.bound_ok:
        logger.warning("sup|ybar| = %.4g exceeds the bound M = %.4g", sol.sup_norm, M)
    return sol


@dataclass
class DerivativeResult:
    """Decoupling gradient ``G`` on the nodes and the pathwise channels."""

    G: np.ndarray
    dX: dict
    dY: dict
    stderr: float


def derivative_fbsde_solve(problem: BurgersProblem, F_bar: TransformedForce, base: LocalSolution,
                           terminal, directions=None, mc: MCConfig = MCConfig()) -> DerivativeResult:
    """First-derivative processes along the converged base paths.

    With ``A_k = I - dt (grad etabar + grad Yhat)(X_k)`` the linear system

        dX_{k+1} = A_k dX_k,
        dY_k = E_k[dY_{k+1}] + dt (F_x dX_k + F_y dY_k),

    is solved through the decoupling field ``dY_k = G_k(X_k) dX_k``:

        (I - dt F_y) G_k = E[G_{k+1}(X_{k+1}) A_k | X_k] + dt F_x,

    with ``G`` at the final step equal to the terminal gradient.  ``dX`` and
    ``dY`` are returned for every requested direction ``e_k``.
    """
    terminal = _as_terminal(terminal)
    if not hasattr(terminal, "gradient"):
        raise ValueError("derivative processes need the terminal gradient")
    batch = base.batch
    if batch is None or base.fits is None:
        raise ValueError("base solution carries no path batch")
    window, grid = base.window, base.grid
    n = problem.n
    X = batch.X
    p, m, _ = X.shape
    steps = m - 1
    dt = window.dt
    fb = _GridFeedback(base.values, grid, mc.extend)
    eta_bar = F_bar.noise
    nodes_x = grid.points()
    basis = make_basis(mc.basis, mc.order, grid)
    eye = np.eye(n)
    G_paths = terminal.gradient(X[:, steps])
    G_nodes = np.empty((m,) + grid.nodes + (n, n))
    G_nodes[steps] = terminal.gradient(nodes_x).reshape(grid.nodes + (n, n))
    A = np.empty((p, steps, n, n))
    se_acc = 0.0

    def dG_next(xx, h=1e-5):
        return np.stack([(terminal.gradient(xx + h * e) - terminal.gradient(xx - h * e)) / (2 * h)
                         for e in eye], axis=-1)
    for k in range(steps - 1, -1, -1):
        j = window.j0 + k
        x = X[:, k]
        Jb = fb.gradient(k, x)
        if not eta_bar.is_zero:
            Jb = Jb + eta_bar.evaluate(j, x, 1)
        A[:, k] = eye - dt * Jb
        target = np.einsum("pik,pkl->pil", G_paths, A[:, k])
        if problem.nu > 0 and mc.control_variate:
            # grad G_{k+1}(X_k) contracted with the Brownian step, mean zero given X_k
            jump = np.sqrt(2.0 * problem.nu) * np.einsum("pilm,pm->pil", dG_next(x), batch.dW[:, k])
            target = target - np.einsum("pik,pkl->pil", jump, A[:, k])
        y = batch.Y[:, k]
        basis, (fit,) = least_squares(basis, x, [target.reshape(p, -1)])
        dG_next = (lambda xx, f=fit: f.gradient(xx).reshape(-1, n, n, n))
        cond = fit(x).reshape(p, n, n)
        Fy = F_bar.grad_y(j, x, y)
        Fx = F_bar.grad_x(j, x, y)
        G_paths = np.linalg.solve(eye - dt * Fy, cond + dt * Fx)
        yn = base.values[k].reshape(-1, n)
        condn = fit(nodes_x).reshape(-1, n, n)
        Gn = np.linalg.solve(eye - dt * F_bar.grad_y(j, nodes_x, yn), condn + dt * F_bar.grad_x(j, nodes_x, yn))
        G_nodes[k] = Gn.reshape(grid.nodes + (n, n))
        se_acc = float(np.sqrt(se_acc**2 + np.max(fit.se(nodes_x)) ** 2))
    if directions is None:
        directions = range(n)
    dX, dY = {}, {}
    for d in directions:
        e = np.zeros((p, n))
        e[:, d] = 1.0
        xs = np.empty((p, m, n))
        xs[:, 0] = e
        for k in range(steps):
            xs[:, k + 1] = np.einsum("pij,pj->pi", A[:, k], xs[:, k])
        dX[d] = xs
        ys = np.empty((p, m, n))
        ys[:, steps] = np.einsum("pij,pj->pi", terminal.gradient(X[:, steps]), xs[:, steps])
        dY[d] = ys
    for d in directions:
        for k in range(steps):
            Gk = interpolate(G_nodes[k], grid, X[:, k])
            dY[d][:, k] = np.einsum("pij,pj->pi", Gk, dX[d][:, k])
    return DerivativeResult(G_nodes, dX, dY, se_acc)


@dataclass(frozen=True)
class MarkovReport:
    max_discrepancy: float
    mean_discrepancy: float
    tolerance: float
    passed: bool
    samples: int


def markov_identity_check(solution: LocalSolution, problem: BurgersProblem, F_bar: TransformedForce,
                          terminal, samples: int = 20000, mc: MCConfig = MCConfig(),
                          seed: int = 12345, tol_markov: float | None = None) -> MarkovReport:
    """Compare ``Y_t`` of fresh paths with ``ybar(t, X_t)`` read off the solution grid.

    Fresh start points and increments are drawn from ``seed``; the paths use
    the converged feedback and an independent backward regression.  The
    default tolerance is ``3 tol + 3 sqrt(se_solution^2 + se_fresh^2)``.
    """
    terminal = _as_terminal(terminal)
    window, grid = solution.window, solution.grid
    n = problem.n
    rng_x, rng_w = _seeds(seed, window.j0)
    x0 = sample_start_points(grid, samples, rng_x)
    dW = rng_w.standard_normal((samples, window.steps, n)) * np.sqrt(window.dt)
    fb = _GridFeedback(solution.values, grid, mc.extend)
    X = euler_forward(x0, window, fb, F_bar.noise, problem.nu, dW, grid)
    res = regress_backward(X, terminal, F_bar, problem.nu, window, dW, make_basis(mc.basis, mc.order, grid),
                           mc.inner, mc.control_variate, grid)
    disc = np.empty((samples, window.steps + 1))
    for k in range(window.steps + 1):
        disc[:, k] = np.linalg.norm(res.Y[:, k] - fb(k, X[:, k]), axis=-1)
    s_sol = float(np.max(solution.stderr)) if solution.stderr.size else 0.0
    s_new = float(np.max(res.stderr)) if res.stderr.size else 0.0
    tol = tol_markov if tol_markov is not None else 3 * mc.tol + 3 * np.hypot(s_sol, s_new)
    mx = float(np.max(disc))
    return MarkovReport(mx, float(np.mean(disc)), float(tol), mx <= tol, samples)


def estimate_constants(F_bar: TransformedForce, terminal, window: Window, grid: GridSpec,
                       M: float | None = None, terminal_grad_sup: float | None = None,
                       terminal_hess_sup: float | None = None, probe_step: int = 1,
                       fd_step: float = 1e-4) -> dict:
    """Grid estimates of K and C over the window.

    ``K = sup|grad h| + sup|d_x eta| + sup(|F_x| + |F_y|)`` and
    ``C = sup|grad^2 h| + sup|d_xx eta| + sup(|F_xx| + |F_yy| + |F_xy|)``,
    with ``y`` probed on ``{-R, 0, R}^n`` (``R = M + 1`` or 1) and the second
    derivatives of F taken by central differences of the analytic first
    derivatives.  Sup-norms are Frobenius norms of the tensors.
    """
    terminal = _as_terminal(terminal)
    pts = grid.points()
    n = grid.ndim
    if terminal_grad_sup is None:
        terminal_grad_sup = float(np.max(np.linalg.norm(terminal.gradient(pts).reshape(len(pts), -1), axis=1)))
    if terminal_hess_sup is None:
        if hasattr(terminal, "h"):
            hess = terminal.h.hessian(pts)
        else:
            hess = np.stack([(terminal.gradient(pts + fd_step * e) - terminal.gradient(pts - fd_step * e))
                             / (2 * fd_step) for e in np.eye(n)], axis=-1)
        terminal_hess_sup = float(np.max(np.linalg.norm(hess.reshape(len(pts), -1), axis=1)))
    R = (M + 1.0) if M is not None else 1.0
    probes = [np.array(c, dtype=float) for c in np.array(np.meshgrid(*[[-R, 0.0, R]] * n)).T.reshape(-1, n)]
    eta = F_bar.noise
    k1 = k2 = 0.0
    c1 = c2 = 0.0
    for j in range(window.j0, window.j1 + 1, probe_step):
        if not eta.is_zero:
            k1 = max(k1, float(np.max(np.linalg.norm(eta.evaluate(j, pts, 1).reshape(len(pts), -1), axis=1))))
            c1 = max(c1, float(np.max(np.linalg.norm(eta.evaluate(j, pts, 2).reshape(len(pts), -1), axis=1))))
        for yv in probes:
            y = np.broadcast_to(yv, pts.shape)
            Fx = F_bar.grad_x(j, pts, y)
            Fy = F_bar.grad_y(j, pts, y)
            k2 = max(k2, float(np.max(np.linalg.norm(Fx.reshape(len(pts), -1), axis=1)
                                      + np.linalg.norm(Fy.reshape(len(pts), -1), axis=1))))
            fxx = fyy = fxy = 0.0
            for e in np.eye(n):
                dxx = (F_bar.grad_x(j, pts + fd_step * e, y) - F_bar.grad_x(j, pts - fd_step * e, y)) / (2 * fd_step)
                dyy = (F_bar.grad_y(j, pts, y + fd_step * e) - F_bar.grad_y(j, pts, y - fd_step * e)) / (2 * fd_step)
                dxy = (F_bar.grad_x(j, pts, y + fd_step * e) - F_bar.grad_x(j, pts, y - fd_step * e)) / (2 * fd_step)
                fxx = fxx + np.sum(dxx.reshape(len(pts), -1) ** 2, axis=1)
                fyy = fyy + np.sum(dyy.reshape(len(pts), -1) ** 2, axis=1)
                fxy = fxy + np.sum(dxy.reshape(len(pts), -1) ** 2, axis=1)
            c2 = max(c2, float(np.max(np.sqrt(fxx) + np.sqrt(fyy) + np.sqrt(fxy))))
    K = terminal_grad_sup + k1 + k2
    C = terminal_hess_sup + c1 + c2
    return {"K": K, "C": C, "grad_terminal": terminal_grad_sup, "hess_terminal": terminal_hess_sup}


@dataclass(frozen=True)
class WindowPolicy:
    """How the horizon is split into local solves.

    ``mode``: ``"single"`` (one window), ``"fixed"`` (windows of ``length``)
    or ``"adaptive"`` (length from ``estimate_window_length`` on the window's
    own constants, with the previous slice's gradient bound added to K).
    ``breakpoints`` (original times) are always window junctions.
    """

    mode: str = "single"
    length: float | None = None
    safety: float = 1.0
    breakpoints: tuple[float, ...] = ()
    probe_step: int = 4

    def __post_init__(self) -> None:
        if self.mode not in ("single", "fixed", "adaptive"):
            raise ValueError(f"unknown window mode {self.mode!r}")
        if self.mode == "fixed" and not (self.length and self.length > 0):
            raise ValueError("fixed windows need a positive length")


@dataclass
class GlobalSolution:
    """Stitched solution on [0, T].

    ``ybar`` lives on the reversed grid; ``yhat`` and ``y`` on the original.
    """

    ybar: SpaceTimeField
    yhat: SpaceTimeField | None
    y: SpaceTimeField | None
    windows: list[LocalSolution]
    converged: bool
    failed_window: tuple[float, float] | None
    M: float
    stderr: np.ndarray

    def metadata(self) -> dict:
        return {"converged": self.converged, "failed_window": self.failed_window, "M": self.M,
                "sup_norm": self.ybar.sup_norm(), "windows": [w.metadata() for w in self.windows]}


class WindowFailure(RuntimeError):
    def __init__(self, partial: GlobalSolution, window: Window) -> None:
        self.partial = partial
        self.window = window
        super().__init__(f"local solve on reversed window [{window.t0:.4g}, {window.t1:.4g}] did not converge")


def _junction_indices(policy: WindowPolicy, steps: int, dt: float) -> list[int]:
    marks = {0, steps}
    for b in policy.breakpoints:
        i = int(round(b / dt))
        if abs(i * dt - b) > 1e-9 * max(1.0, b) or not 0 <= i <= steps:
            raise ValueError(f"breakpoint {b} is not a grid time in [0, T]")
        marks.add(i)
    return sorted(marks)


def global_continuation(problem: BurgersProblem, eta: NoiseField, grid: GridSpec | None = None,
                        mc: MCConfig = MCConfig(), policy: WindowPolicy = WindowPolicy(), *,
                        M: float | None = None, cutoff: bool = True, raise_on_failure: bool = True,
                        local_solver: Callable | None = None) -> GlobalSolution:
    """Solve on successive windows and stitch the result on [0, T].

    Windows advance in original time from 0 (the reversed problem's terminal
    end).  The first window uses ``h`` as terminal condition; every later one
    uses the value function of the previous window's first step, so junction
    slices are shared exactly.  ``y = ybar(T - t) + eta`` is reconstructed at
    the end.

    ``local_solver(problem, F_bar, terminal, window, grid, M=, gamma_max=)``
    replaces the Monte Carlo Picard solve when given.
    """
    grid = grid or eta.grid
    if not grid.same_space(eta.grid) or grid.steps != eta.grid.steps:
        raise ValueError("solver grid and noise grid differ")
    F = transformed_force(problem, eta)
    if M is None:
        M = default_cutoff_level(problem, F)
    if cutoff:
        F = cutoff_force(F, M)
    F_bar = time_reverse(F)
    Nt = grid.steps
    dt = grid.dt
    n = problem.n
    junctions = _junction_indices(policy, Nt, dt)
    ybar = np.full((Nt + 1,) + grid.nodes + (n,), np.nan)
    gbar = np.full((Nt + 1,) + grid.nodes + (n, n), np.nan)
    se = np.zeros(Nt + 1)
    terminal = _as_terminal(problem.h)
    windows: list[LocalSolution] = []
    ia = 0
    prev_grad_sup = None
    failed = None
    while ia < Nt:
        stop = min(i for i in junctions if i > ia)
        if policy.mode == "single":
            ib = stop
        elif policy.mode == "fixed":
            ib = min(stop, ia + max(1, int(round(policy.length / dt))))
        else:
            ib = stop
            for _ in range(2):
                trial = Window(Nt - ib, Nt - ia, dt)
                const = estimate_constants(F_bar, terminal, trial, grid, M, probe_step=policy.probe_step)
                K = const["K"] + (prev_grad_sup or 0.0)
                gam = estimate_window_length(K, const["C"], policy.safety, problem.T)
                nsteps = max(1, int(np.floor(gam / dt + 1e-9)))
                if ia + nsteps >= ib:
                    break
                ib = ia + nsteps
        window = Window(Nt - ib, Nt - ia, dt)
        const = estimate_constants(F_bar, terminal, window, grid, M, probe_step=policy.probe_step) \
            if policy.mode == "adaptive" else {}
        gamma = None
        if const:
            const["K1"] = const["K"] + (prev_grad_sup or 0.0)
            gamma = estimate_window_length(const["K1"], const["C"], policy.safety, problem.T)
            const["gamma"] = gamma
        if local_solver is None:
            sol = picard_local_solve(problem, F_bar, terminal, window, grid, mc, M=M, gamma_max=gamma)
        else:
            sol = local_solver(problem, F_bar, terminal, window, grid, M=M, gamma_max=gamma)
        sol.constants = {**sol.constants, **const}
        windows.append(sol)
        rev = slice(window.j0, window.j1 + 1)
        vals = sol.values.copy()
        if ia > 0:
            vals[-1] = ybar[window.j1]
        ybar[rev] = vals
        gbar[rev] = sol.gradient
        se[rev] = np.sqrt(sol.stderr**2 + (se[window.j1] ** 2 if ia > 0 else 0.0))
        if not sol.converged:
            failed = (window.t0, window.t1)
            break
        terminal = sol.initial
        prev_grad_sup = float(np.max(np.abs(sol.gradient[0])))
        ia = ib
    ok = failed is None
    bar_field = None
    if ok:
        label = "fbsde" if local_solver is None else getattr(local_solver, "label", "custom")
        bar_field = SpaceTimeField(grid, grid.times, ybar, gbar, {"solver": label, "M": M})
        yhat = time_reverse(bar_field)
        yhat.gradient = None
        yfield = SpaceTimeField(grid, grid.times, yhat.values + eta.values, None, {"solver": label})
        out = GlobalSolution(bar_field, yhat, yfield, windows, True, None, M, se)
        if out.ybar.sup_norm() > M:
            logger.warning("global sup-norm %.4g exceeds M = %.4g", out.ybar.sup_norm(), M)
        return out
    jlo = windows[-1].window.j0
    part = SpaceTimeField(grid, grid.times[jlo:], ybar[jlo:], gbar[jlo:], {"solver": "fbsde", "partial": True})
    partial = GlobalSolution(part, None, None, windows, False, failed, M, se)
    if raise_on_failure:
        raise WindowFailure(partial, windows[-1].window)
    return partial
