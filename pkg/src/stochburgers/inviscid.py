"""Zero-viscosity characteristics solver and the vanishing-viscosity sweep.

At ``nu = 0`` the forward equation of the reversed problem is an ODE, so for
every grid point ``(tau, x)`` the pair

    X_s = x - int_tau^s (etabar + ybar)(r, X_r) dr,
    Y_s = terminal(X_T') + int_s^T' Fbar(r, X_r, Y_r) dr

is integrated deterministically and ``ybar(tau, x) = Y_tau``.  The feedback
``ybar`` inside the forward drift is iterated to a fixed point.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import RateFit, rate_fit
from .fbsde import (GlobalSolution, LocalSolution, MCConfig, Window, WindowFailure, WindowPolicy,
                    _as_terminal, estimate_constants, estimate_window_length, global_continuation)
from .grid import BlowUpError, GridSpec, grid_gradient, interpolate
from .model import (BurgersProblem, InitialSpec, TransformedForce, cutoff_force, default_cutoff_level,
                    time_reverse, transformed_force)
from .noise import NoiseField, build_brownian, stopping_time_T_N, synthesize_noise_field, truncate_noise
from .pde import CFLError, fd_solve_forward

__all__ = [
    "ExistenceWindow",
    "ShockError",
    "SweepReport",
    "SweepRow",
    "characteristics_fixed_point",
    "fold_monitor",
    "min_fold_jacobian",
    "implicit_characteristics_1d",
    "inviscid_solve",
    "local_existence_window",
    "trace_characteristics",
    "viscosity_sweep",
]

logger = logging.getLogger(__name__)


class ShockError(RuntimeError):
    """The characteristics map lost injectivity inside the requested window."""

    def __init__(self, time: float, jacobian: float) -> None:
        self.time = time
        self.jacobian = jacobian
        super().__init__(f"characteristics cross near original time {time:.4g} "
                         f"(forward Jacobian {jacobian:.3g})")


class _GridTerminal:
    """Cubic (or multilinear) interpolant of a nodal slice, used as the next window's terminal."""

    def __init__(self, values: np.ndarray, grid: GridSpec, order: int = 3) -> None:
        self.values = values
        self.grid = grid
        self.order = order
        self._grad = grid_gradient(values, grid)

    def __call__(self, x):
        return interpolate(self.values, self.grid, np.atleast_2d(x), self.order)

    def gradient(self, x):
        return interpolate(self._grad, self.grid, np.atleast_2d(x), self.order)


def _drift(eta_bar: NoiseField, V: np.ndarray, grid: GridSpec, j: int, k: int, x: np.ndarray,
           order: int = 3) -> np.ndarray:
    out = interpolate(V[k], grid, x, order)
    if not eta_bar.is_zero:
        out = out + eta_bar.evaluate(j, x)
    return out


def _integrate(F_bar: TransformedForce, terminal, window: Window, grid: GridSpec, V: np.ndarray,
               starts: np.ndarray, x0: np.ndarray, block: int = 32):
    """Explicit-midpoint forward and backward sweeps from every ``(start, x0)`` pair.

    Returns ``Y`` at the start times, ``(len(starts), Q, n)``.
    """
    eta_bar = F_bar.noise
    dt = window.dt
    steps = window.steps
    q, n = x0.shape
    Y0 = np.empty((len(starts), q, n))
    for b0 in range(0, len(starts), block):
        js = starts[b0:b0 + block]
        nb = len(js)
        k_lo = int(js.min())
        X = np.empty((steps + 1 - k_lo, nb, q, n))
        X[0] = x0
        for k in range(k_lo, steps):
            x = X[k - k_lo].reshape(-1, n)
            j = window.j0 + k
            v0 = _drift(eta_bar, V, grid, j, k, x)
            xh = x - 0.5 * dt * v0
            vh = 0.5 * (_drift(eta_bar, V, grid, j, k, xh) + _drift(eta_bar, V, grid, j + 1, k + 1, xh))
            nxt = (x - dt * vh).reshape(nb, q, n)
            active = (js <= k)[:, None, None]
            X[k + 1 - k_lo] = np.where(active, nxt, X[k - k_lo])
        Y = terminal(X[-1].reshape(-1, n)).reshape(nb, q, n)
        for k in range(steps - 1, k_lo - 1, -1):
            x1 = X[k + 1 - k_lo].reshape(-1, n)
            xm = 0.5 * (X[k - k_lo] + X[k + 1 - k_lo]).reshape(-1, n)
            j = window.j0 + k
            y1 = Y.reshape(-1, n)
            yh = y1 + 0.5 * dt * F_bar(j + 1, x1, y1)
            fh = 0.5 * (F_bar(j, xm, yh) + F_bar(j + 1, xm, yh))
            nxt = (y1 + dt * fh).reshape(nb, q, n)
            active = (js <= k)[:, None, None]
            Y = np.where(active, nxt, Y)
        Y0[b0:b0 + nb] = Y
    return Y0


def fold_monitor(F_bar: TransformedForce, terminal, window: Window, grid: GridSpec) -> np.ndarray:
    """Discrete Jacobian determinant of the original-time characteristics map.

    Characteristics start at the nodes at the window's terminal slice and
    carry ``yhat`` along ``x' = eta + yhat``, ``yhat' = F`` (Heun steps, no
    feedback field).  Entry ``r`` is the grid minimum of ``det(d x / d xi)``
    at local index ``r``; it turns non-positive once characteristics cross.
    """
    terminal = _as_terminal(terminal)
    eta_bar = F_bar.noise
    n = grid.ndim
    pts = grid.points()
    dt = window.dt
    x = pts.copy()
    y = terminal(pts).reshape(-1, n)
    out = np.empty(window.steps + 1)
    out[window.steps] = 1.0

    def rhs(j, x, y):
        v = y if eta_bar.is_zero else y + eta_bar.evaluate(j, x)
        return v, F_bar(j, x, y)

    for k in range(window.steps, 0, -1):
        j = window.j0 + k
        v1, f1 = rhs(j, x, y)
        v2, f2 = rhs(j - 1, x + dt * v1, y + dt * f1)
        x = x + 0.5 * dt * (v1 + v2)
        y = y + 0.5 * dt * (f1 + f2)
        disp = (x - pts).reshape(grid.nodes + (n,))
        J = np.eye(n) + grid_gradient(disp, grid).reshape(-1, n, n)
        out[k - 1] = float(np.min(np.linalg.det(J)))
    return out


def characteristics_fixed_point(problem: BurgersProblem, F_bar: TransformedForce, terminal, window: Window,
                                grid: GridSpec, tol: float = 1e-9, max_iter: int = 100, *,
                                M: float | None = None, feedback0: np.ndarray | None = None,
                                gamma_max: float | None = None, shock_floor: float = 0.0,
                                block: int = 32) -> LocalSolution:
    """Fixed point of the characteristics map on one window of the reversed grid.

    Every sweep integrates all characteristics with the current nodal
    feedback (explicit midpoint in both directions) and replaces the feedback
    by the values ``Y_tau``.  The sweep stops once successive fields agree to
    ``tol`` in the grid sup-norm.

    The shock guard runs first: a ``fold_monitor`` determinant at or below
    ``shock_floor`` anywhere in the window raises ShockError.

    Returns
    -------
    LocalSolution
        ``stderr`` is zero and ``batch`` is ``None``.  ``constants`` holds
        ``jacobian_min``, the smallest monitored determinant.
    """
    if problem.nu != 0:
        raise ValueError(f"characteristics need nu = 0, got {problem.nu}")
    terminal = _as_terminal(terminal)
    n = problem.n
    if gamma_max is not None and window.t1 - window.t0 > gamma_max * (1 + 1e-12):
        warnings.warn(f"window length {window.t1 - window.t0:.4g} exceeds the estimated "
                      f"contraction length {gamma_max:.4g}", RuntimeWarning, stacklevel=2)
    jac = fold_monitor(F_bar, terminal, window, grid)
    folded = np.nonzero(jac <= shock_floor)[0]
    if folded.size:
        # local index r sits at original time T - t_{j0+r}
        raise ShockError(float(F_bar.noise.grid.T - window.times[folded.max()]), float(jac.min()))
    pts = grid.points()
    starts = np.arange(window.steps + 1)
    if feedback0 is None:
        term_nodes = terminal(pts).reshape(grid.nodes + (n,))
        feedback0 = np.broadcast_to(term_nodes, (window.steps + 1,) + term_nodes.shape).copy()
    V = np.array(feedback0, dtype=float)
    log: list[float] = []
    converged = False
    t_start = time.perf_counter()
    for _ in range(max_iter):
        Y0 = _integrate(F_bar, terminal, window, grid, V, starts, pts, block)
        new = Y0.reshape(V.shape)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(float(window.t0))
        dist = float(np.max(np.abs(new - V)))
        log.append(dist)
        V = new
        if dist < tol:
            converged = True
            break
    logger.info("characteristics on [%.4g, %.4g]: %d sweeps, last distance %.3e (%.2fs)", window.t0,
                window.t1, len(log), log[-1], time.perf_counter() - t_start)
    grad = np.stack([grid_gradient(v, grid) for v in V])
    sol = LocalSolution(window, grid, V, grad, log, converged, np.zeros(window.steps + 1), None, None, M,
                        constants={"jacobian_min": float(jac.min())},
                        status="converged" if converged else "not-converged")
    sol.initial = _GridTerminal(V[0], grid)
    return sol


def trace_characteristics(solution: LocalSolution, F_bar: TransformedForce, terminal, start: int,
                          points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions and values along the characteristics of a solved window.

    Starts at local index ``start`` from ``points`` and returns ``(X, Y)``
    of shape ``(steps + 1 - start, P, n)``, with ``Y`` from the backward ODE.
    """
    window, grid = solution.window, solution.grid
    terminal = _as_terminal(terminal)
    eta_bar = F_bar.noise
    V = solution.values
    n = grid.ndim
    dt = window.dt
    x0 = np.atleast_2d(np.asarray(points, dtype=float))
    X = [x0]
    for k in range(start, window.steps):
        x = X[-1]
        j = window.j0 + k
        xh = x - 0.5 * dt * _drift(eta_bar, V, grid, j, k, x)
        vh = 0.5 * (_drift(eta_bar, V, grid, j, k, xh) + _drift(eta_bar, V, grid, j + 1, k + 1, xh))
        X.append(x - dt * vh)
    X = np.stack(X)
    Y = np.empty_like(X)
    Y[-1] = terminal(X[-1]).reshape(-1, n)
    for r in range(len(X) - 2, -1, -1):
        j = window.j0 + start + r
        y1 = Y[r + 1]
        xm = 0.5 * (X[r] + X[r + 1])
        yh = y1 + 0.5 * dt * F_bar(j + 1, X[r + 1], y1)
        Y[r] = y1 + dt * 0.5 * (F_bar(j, xm, yh) + F_bar(j + 1, xm, yh))
    return X, Y


def inviscid_solve(problem: BurgersProblem, eta: NoiseField, grid: GridSpec | None = None,
                   policy: WindowPolicy = WindowPolicy(), *, M: float | None = None, tol: float = 1e-9,
                   max_iter: int = 100, cutoff: bool = True, raise_on_failure: bool = True,
                   shock_floor: float = 0.0) -> GlobalSolution:
    """Global zero-viscosity solution stitched over the windows of ``policy``.

    A window whose characteristics fold raises ShockError.
    """
    if problem.nu != 0:
        problem = problem.with_nu(0.0)

    def local(problem, F_bar, terminal, window, grid, *, M=None, gamma_max=None):
        return characteristics_fixed_point(problem, F_bar, terminal, window, grid, tol, max_iter, M=M,
                                           gamma_max=gamma_max, shock_floor=shock_floor)

    local.label = "characteristics"
    return global_continuation(problem, eta, grid, MCConfig(), policy, M=M, cutoff=cutoff,
                               raise_on_failure=raise_on_failure, local_solver=local)


def min_fold_jacobian(solution: GlobalSolution) -> float:
    """Smallest monitored characteristics determinant over all windows."""
    return min(w.constants.get("jacobian_min", np.inf) for w in solution.windows)


def implicit_characteristics_1d(h: InitialSpec, t: float, x, *, iters: int = 200) -> np.ndarray:
    """Classical inviscid solution ``y(t, x) = h(xi)`` with ``x = xi + h(xi) t``.

    ``xi`` is found by bisection, which is valid before the first shock
    (``1 + h'(xi) t > 0`` everywhere).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if h.n != 1:
        raise ValueError("implicit characteristics oracle is one-dimensional")
    probe = np.linspace(-1.0, 1.0, 2049) if h.periods is None else \
        np.linspace(0.0, h.periods[0], 4097)
    bound = float(np.max(np.abs(h(probe[:, None])))) * abs(t) + 1e-12
    lo = x - bound - 1e-9
    hi = x + bound + 1e-9

    def resid(xi):
        return xi + h(xi[:, None])[:, 0] * t - x

    r_lo = resid(lo)
    if np.any(r_lo > 0) or np.any(resid(hi) < 0):
        raise ValueError("bisection bracket failed; is h bounded on the probed range?")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        rm = resid(mid)
        left = rm < 0
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
        if np.max(hi - lo) < 1e-15 * max(1.0, float(np.max(np.abs(x)))):
            break
    return h((0.5 * (lo + hi))[:, None])[:, 0]


@dataclass(frozen=True)
class ExistenceWindow:
    """``S = min(beta, T_N)`` for one truncation level ``N``."""

    S: float
    beta: float
    T_N: float
    K: float
    C: float
    N: float


def local_existence_window(problem: BurgersProblem, eta: NoiseField, N: float, *, safety: float = 1.0,
                           M: float | None = None, probe_step: int = 4) -> ExistenceWindow:
    """Stopping time ``S`` of the truncated problem.

    ``T_N`` comes from the C^4 grid norm of ``eta``; ``beta`` is the window
    length estimate for the constants of the force built on the truncated
    noise.
    """
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    T_N = stopping_time_T_N(eta, N)
    eta_N = truncate_noise(eta, T_N)
    F = transformed_force(problem, eta_N)
    if M is None:
        M = default_cutoff_level(problem, F)
    F_bar = time_reverse(cutoff_force(F, M))
    grid = eta.grid
    const = estimate_constants(F_bar, problem.h, Window(0, grid.steps, grid.dt), grid, M,
                               probe_step=probe_step)
    beta = estimate_window_length(const["K"], const["C"], safety, problem.T)
    return ExistenceWindow(min(beta, T_N), beta, T_N, const["K"], const["C"], float(N))


@dataclass
class SweepRow:
    nu: float
    sup_err: float
    mean_err: float
    converged: bool = True


@dataclass
class SweepReport:
    """Distances ``sup |yhat_nu - yhat_0|`` over a viscosity list."""

    rows: list[SweepRow]
    fit: RateFit | None
    monotone: bool
    partial: bool
    solver: str
    jacobian_min: float
    T: float
    M: float
    existence: ExistenceWindow | None = None
    notes: list[str] = field(default_factory=list)

    def table(self) -> np.ndarray:
        return np.array([[r.nu, r.sup_err, r.mean_err] for r in self.rows])

    def to_dict(self) -> dict:
        out = {"solver": self.solver, "T": self.T, "M": self.M, "monotone": self.monotone,
               "partial": self.partial, "jacobian_min": self.jacobian_min, "notes": list(self.notes),
               "rows": [asdict(r) for r in self.rows]}
        out["fit"] = None if self.fit is None else asdict(self.fit)
        out["existence"] = None if self.existence is None else asdict(self.existence)
        return out


def _distance(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    d = np.linalg.norm(a - b, axis=-1)
    return float(np.max(d)), float(np.mean(d))


def viscosity_sweep(problem: BurgersProblem, nus: Sequence[float], eta: NoiseField | None = None,
                    grid: GridSpec | None = None, mc: MCConfig = MCConfig(),
                    policy: WindowPolicy = WindowPolicy(), *, solver: str = "fbsde", M: float | None = None,
                    wiggle: float = 1.1, fit_points: int = 3, tol: float = 1e-9, N: float | None = None,
                    fd_options: dict | None = None, progress: Callable[[float, float], None] | None = None
                    ) -> SweepReport:
    """Distance of each viscous solution to the characteristics solution.

    All members share ``eta`` and the cutoff level ``M`` (by default the
    largest default level over the list and ``nu = 0``).  The exponent is
    fitted on the ``fit_points`` smallest viscosities; monotonicity allows
    each error to exceed its predecessor (larger ``nu``) by ``wiggle``.

    A member whose solve fails is recorded with ``converged = False`` and
    marks the report ``partial``.  The zero-viscosity reference raises
    ShockError when its characteristics cross before ``T``; ``jacobian_min``
    reports how close the instance came.
    """
    nus = sorted((float(v) for v in nus), reverse=True)
    if len(nus) < 3:
        raise ValueError("need at least three viscosities")
    if min(nus) <= 0:
        raise ValueError("viscosities must be positive")
    notes = []
    if max(nus) / min(nus) < 10:
        notes.append(f"viscosity list spans a factor {max(nus) / min(nus):.3g} (< one decade)")
    if solver not in ("fbsde", "fd"):
        raise ValueError(f"unknown solver {solver!r}")
    if grid is None:
        grid = eta.grid if eta is not None else problem.grid(64, problem.T / 64)
    if eta is None:
        eta = synthesize_noise_field(problem.g, build_brownian(0, problem.g.d, problem.T, grid.steps), grid)
    if M is None:
        M = max(default_cutoff_level(problem.with_nu(v), transformed_force(problem.with_nu(v), eta))
                for v in nus + [0.0])
    ref = inviscid_solve(problem.with_nu(0.0), eta, grid, policy, M=M, tol=tol)
    rows: list[SweepRow] = []
    for v in nus:
        q = problem.with_nu(v)
        try:
            if solver == "fbsde":
                out = global_continuation(q, eta, grid, mc, policy, M=M).yhat.values
            else:
                out = fd_solve_forward(q, eta, grid, **(fd_options or {})).values
        except (WindowFailure, BlowUpError, CFLError) as exc:
            logger.warning("sweep member nu=%g failed: %s", v, exc)
            rows.append(SweepRow(v, float("nan"), float("nan"), False))
            continue
        sup, mean = _distance(out, ref.yhat.values)
        rows.append(SweepRow(v, sup, mean))
        if progress is not None:
            progress(v, sup)
    ok = [r for r in rows if r.converged]
    partial = len(ok) < len(rows)
    # distances at round-off level count as zero
    floor = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(ref.yhat.values))))
    monotone = all(b.sup_err <= wiggle * a.sup_err + floor for a, b in zip(ok, ok[1:]))
    tail = ok[-fit_points:]
    fit = None
    if len(tail) >= 3:
        errs = np.array([r.sup_err for r in tail])
        if np.all(errs > floor):
            fit = rate_fit([r.nu for r in tail], errs)
        else:
            fit = RateFit(None, None, True)
    existence = local_existence_window(problem, eta, N, M=M) if N is not None else None
    return SweepReport(rows, fit, monotone, partial, solver, min_fold_jacobian(ref), problem.T, float(M),
                       existence, notes)
