"""Least-squares regression bases for conditional expectations."""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg, sparse
from scipy.sparse.linalg import spsolve

from .grid import GridSpec

__all__ = ["Basis", "Fit", "RegressionError", "make_basis"]

logger = logging.getLogger(__name__)

BASES = ("trig", "legendre", "hat")


class RegressionError(np.linalg.LinAlgError):
    pass


class Basis:
    """Tensor-product regression basis on the solver domain.

    ``trig``: ``1, cos(k w x), sin(k w x)`` per axis with ``w = 2 pi / L``,
    ``k <= order`` (periodic domains).  ``legendre``: Legendre polynomials of
    degree ``<= order`` per axis on the box rescaled to [-1, 1].  ``hat``:
    piecewise-linear nodal functions of the grid (``order`` ignored).
    """

    def __init__(self, kind: str, order: int, grid: GridSpec) -> None:
        if kind not in BASES:
            raise ValueError(f"unknown basis {kind!r}; choose from {BASES}")
        if kind == "trig" and not grid.periodic:
            raise ValueError("trigonometric basis needs a periodic domain")
        if order < 0:
            raise ValueError("basis order must be non-negative")
        self.kind = kind
        self.order = int(order)
        self.grid = grid
        self.n = grid.ndim
        if kind == "trig":
            self.size = (2 * order + 1) ** self.n
        elif kind == "legendre":
            self.size = (order + 1) ** self.n
        else:
            self.size = int(np.prod(grid.nodes))

    def degraded(self) -> "Basis":
        if self.kind == "hat" or self.order == 0:
            raise RegressionError("regression design is singular at order 0")
        return Basis(self.kind, self.order - 1, self.grid)

    def _axis(self, u: np.ndarray, a: int, deriv: bool) -> np.ndarray:
        """1-D basis values (or derivatives) along axis ``a``, shape ``(P, m)``."""
        lo, hi = self.grid.lower[a], self.grid.upper[a]
        if self.kind == "trig":
            w = 2 * np.pi / (hi - lo)
            k = np.arange(1, self.order + 1)
            arg = w * (u[:, None] - lo) * k
            if not deriv:
                return np.concatenate([np.ones((u.size, 1)), np.cos(arg), np.sin(arg)], axis=1)
            return np.concatenate([np.zeros((u.size, 1)), -w * k * np.sin(arg), w * k * np.cos(arg)], axis=1)
        s = 2.0 * (u - lo) / (hi - lo) - 1.0
        cols = []
        for deg in range(self.order + 1):
            c = np.zeros(deg + 1)
            c[deg] = 1.0
            if deriv:
                cols.append(legendre.legval(s, legendre.legder(c)) * 2.0 / (hi - lo))
            else:
                cols.append(legendre.legval(s, c))
        return np.stack(cols, axis=1)

    def _tensor(self, x: np.ndarray, deriv_axis: int | None) -> np.ndarray:
        facs = [self._axis(x[:, a], a, deriv_axis == a) for a in range(self.n)]
        out = facs[0]
        for f in facs[1:]:
            out = (out[:, :, None] * f[:, None, :]).reshape(x.shape[0], -1)
        return out

    def design(self, x: np.ndarray):
        x = np.atleast_2d(x)
        if self.kind == "hat":
            return self._hat(x)
        return self._tensor(x, None)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """``(P, size, n)`` derivatives of the basis functions."""
        x = np.atleast_2d(x)
        if self.kind == "hat":
            return self._hat_gradient(x)
        return np.stack([self._tensor(x, a) for a in range(self.n)], axis=-1)

    def _hat_weights(self, x: np.ndarray):
        g = self.grid
        idx0, idx1, wts, inv_h = [], [], [], []
        for a in range(self.n):
            m, h = g.nodes[a], g.spacing[a]
            s = (x[:, a] - g.lower[a]) / h
            if g.periodic:
                fl = np.floor(s)
                w = s - fl
                i0 = np.mod(fl.astype(np.int64), m)
                i1 = np.mod(i0 + 1, m)
            else:
                s = np.clip(s, 0, m - 1)
                i0 = np.minimum(np.floor(s).astype(np.int64), m - 2)
                w = s - i0
                i1 = i0 + 1
            idx0.append(i0)
            idx1.append(i1)
            wts.append(w)
            inv_h.append(1.0 / h)
        return idx0, idx1, wts, inv_h

    def _hat(self, x: np.ndarray):
        idx0, idx1, wts, _ = self._hat_weights(x)
        p = x.shape[0]
        rows, cols, vals = [], [], []
        for corner in itertools.product((0, 1), repeat=self.n):
            w = np.ones(p)
            flat = np.zeros(p, dtype=np.int64)
            for a, c in enumerate(corner):
                w = w * (wts[a] if c else 1 - wts[a])
                flat = flat * self.grid.nodes[a] + (idx1[a] if c else idx0[a])
            rows.append(np.arange(p))
            cols.append(flat)
            vals.append(w)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(p, self.size))

    def _hat_gradient(self, x: np.ndarray) -> np.ndarray:
        idx0, idx1, wts, inv_h = self._hat_weights(x)
        p = x.shape[0]
        out = np.zeros((p, self.size, self.n))
        for corner in itertools.product((0, 1), repeat=self.n):
            flat = np.zeros(p, dtype=np.int64)
            for a, c in enumerate(corner):
                flat = flat * self.grid.nodes[a] + (idx1[a] if c else idx0[a])
            for d in range(self.n):
                w = np.ones(p)
                for a, c in enumerate(corner):
                    if a == d:
                        w = w * (inv_h[a] if c else -inv_h[a])
                    else:
                        w = w * (wts[a] if c else 1 - wts[a])
                np.add.at(out, (np.arange(p), flat, d), w)
        return out


@dataclass
class Fit:
    """Least-squares fit of targets on a basis.

    ``coef`` has shape ``(size, c)``; ``se`` evaluates the standard error of
    the fitted mean at new points (max over components).
    """

    basis: Basis
    coef: np.ndarray
    resid_var: np.ndarray
    _rinv: np.ndarray | None = None
    _gram: object | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.basis.design(x) @ self.coef)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """``(P, c, n)``."""
        return np.einsum("psl,sc->pcl", self.basis.gradient(x), self.coef)

    def _leverage(self, B) -> np.ndarray:
        if self._rinv is not None:
            return np.sum((np.asarray(B) @ self._rinv) ** 2, axis=1)
        Bd = B.toarray() if sparse.issparse(B) else np.asarray(B)
        sol = spsolve(self._gram, Bd.T)
        sol = sol.toarray() if sparse.issparse(sol) else np.asarray(sol).reshape(Bd.shape[1], -1)
        return np.sum(Bd * sol.T, axis=1)

    def project(self, x: np.ndarray, y: np.ndarray) -> "Fit":
        """Fit another target sampled at the same points, reusing the factorisation."""
        A = self.basis.design(x)
        y2 = y.reshape(x.shape[0], -1)
        rhs = np.asarray(A.T @ y2)
        if self._rinv is not None:
            coef = self._rinv @ (self._rinv.T @ rhs)
        else:
            coef = np.asarray(spsolve(self._gram, rhs)).reshape(self.basis.size, -1)
        res = y2 - A @ coef
        rv = np.sum(res**2, axis=0) / max(x.shape[0] - self.basis.size, 1)
        return Fit(self.basis, coef, rv, self._rinv, self._gram)

    def se(self, x: np.ndarray) -> np.ndarray:
        lev = self._leverage(self.basis.design(x))
        return np.sqrt(np.maximum(lev, 0.0) * float(np.max(self.resid_var)))

    def gradient_se(self, x: np.ndarray) -> np.ndarray:
        """Standard error of the fitted gradient, ``(P, n)`` (max over components)."""
        D = self.basis.gradient(x)
        lev = np.stack([self._leverage(D[:, :, a]) for a in range(D.shape[2])], axis=1)
        return np.sqrt(np.maximum(lev, 0.0) * float(np.max(self.resid_var)))


def make_basis(kind: str | None, order: int, grid: GridSpec) -> Basis:
    if kind in (None, "auto"):
        kind = "trig" if grid.periodic else "legendre"
    if kind == "poly":
        kind = "legendre"
    return Basis(kind, order, grid)


def least_squares(basis: Basis, x: np.ndarray, targets: list[np.ndarray],
                  rank_tol: float = 1e-10) -> tuple[Basis, list[Fit]]:
    """Fit every target array (shape ``(P, ...)``) on ``basis`` at points ``x``.

    One QR factorisation is shared by all targets.  A rank-deficient design
    drops the basis order by one (with a warning) until it is well posed.
    """
    p = x.shape[0]
    while True:
        A = basis.design(x)
        if basis.kind == "hat":
            gram = (A.T @ A).tocsc()
            diag = gram.diagonal()
            if np.any(diag <= rank_tol * diag.max()):
                warnings.warn("hat basis has nodes without sample support; adding a small ridge",
                              RuntimeWarning, stacklevel=2)
                gram = gram + sparse.identity(basis.size, format="csc") * rank_tol * diag.max()
            fits = []
            for y in targets:
                y2 = y.reshape(p, -1)
                coef = np.asarray(spsolve(gram, A.T @ y2)).reshape(basis.size, -1)
                res = y2 - A @ coef
                rv = np.sum(res**2, axis=0) / max(p - basis.size, 1)
                fits.append(Fit(basis, coef, rv, None, gram))
            return basis, fits
        if p <= basis.size:
            basis = _degrade(basis, "fewer samples than basis functions")
            continue
        Q, R = linalg.qr(A, mode="economic")
        d = np.abs(np.diag(R))
        if d.max() == 0:
            raise RegressionError("regression design is identically zero")
        if d.min() <= rank_tol * d.max():
            basis = _degrade(basis, "rank-deficient design")
            continue
        rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
        fits = []
        for y in targets:
            y2 = y.reshape(p, -1)
            coef = rinv @ (Q.T @ y2)
            res = y2 - A @ coef
            rv = np.sum(res**2, axis=0) / (p - basis.size)
            fits.append(Fit(basis, coef, rv, rinv))
        return basis, fits


def _degrade(basis: Basis, why: str) -> Basis:
    new = basis.degraded()
    warnings.warn(f"{why}; lowering basis order to {new.order}", RuntimeWarning, stacklevel=3)
    logger.warning("%s; basis order %d -> %d", why, basis.order, new.order)
    return new
