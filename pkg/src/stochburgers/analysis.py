"""Measurement utilities: Hoelder exponents, C^k norms, adaptedness, rates."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .grid import SpaceTimeField, time_index
from .noise import BrownianPath, NoiseField

__all__ = [
    "AdaptednessReport",
    "HolderEstimate",
    "RateFit",
    "adaptedness_check",
    "holder_exponent",
    "rate_fit",
    "sup_norm_ck",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HolderEstimate:
    """Slope of log oscillation against log lag.

    ``exponent`` and ``r2`` are ``None`` when ``degenerate`` is set (the
    series does not move at some lag).
    """

    exponent: float | None
    r2: float | None
    degenerate: bool
    lags: np.ndarray
    oscillation: np.ndarray


def holder_exponent(series, max_lag: int = 32) -> HolderEstimate:
    """Least-squares slope of ``log osc(l)`` on ``log l`` for ``l = 1..max_lag``.

    ``osc(l) = max_i |s_{i+l} - s_i|`` with the max also taken over any
    trailing axes of ``series``.
    """
    s = np.asarray(series, dtype=float)
    s = s.reshape(s.shape[0], -1)
    if max_lag < 2:
        raise ValueError("max_lag must be at least 2")
    if s.shape[0] < 4 * max_lag:
        raise ValueError(f"series of length {s.shape[0]} too short for max_lag={max_lag}")
    lags = np.arange(1, max_lag + 1)
    osc = np.array([np.max(np.abs(s[l:] - s[:-l])) for l in lags])
    if np.any(osc <= 0) or not np.all(np.isfinite(osc)):
        return HolderEstimate(None, None, True, lags, osc)
    fit = stats.linregress(np.log(lags), np.log(osc))
    return HolderEstimate(float(fit.slope), float(fit.rvalue**2), False, lags, osc)


def sup_norm_ck(field, k: int) -> float:
    """Grid max over the value channel and derivative channels up to order ``k``.

    ``field`` may be a NoiseField, a SpaceTimeField (orders 0 and 1 via its
    gradient) or a sequence/mapping of arrays indexed by order.
    """
    if not 0 <= k <= 4:
        raise ValueError("k must lie in 0..4")
    if isinstance(field, NoiseField):
        return float(np.max(field.ck_norms(k)))
    if isinstance(field, SpaceTimeField):
        channels = {0: field.values}
        if field.gradient is not None:
            channels[1] = field.gradient
    elif isinstance(field, Mapping):
        channels = dict(field)
    else:
        channels = dict(enumerate(field))
    out = 0.0
    for order in range(k + 1):
        if order not in channels or channels[order] is None:
            raise ValueError(f"derivative channel of order {order} is missing")
        arr = np.asarray(channels[order])
        if arr.size:
            out = max(out, float(np.max(np.abs(arr))))
    return out


@dataclass(frozen=True)
class AdaptednessReport:
    passed: bool
    t_split: float
    first_divergence: float | None
    compared_times: int


def adaptedness_check(solver: Callable[[BrownianPath], SpaceTimeField], t_split: float,
                      path_a: BrownianPath, path_b: BrownianPath) -> AdaptednessReport:
    """Run ``solver`` on two coupled drivers and compare outputs on [0, t_split] bitwise.

    The paths must share every increment on [0, t_split].
    """
    if (path_a.steps, path_a.dim, path_a.T) != (path_b.steps, path_b.dim, path_b.T):
        raise ValueError("paths live on different grids")
    j = time_index(path_a.times, t_split)
    if not np.array_equal(path_a.increments[:j], path_b.increments[:j]):
        raise ValueError(f"paths are not coupled on [0, {t_split}]")
    ya, yb = solver(path_a), solver(path_b)
    upto = np.nonzero(ya.times <= t_split + 1e-12)[0]
    if not np.array_equal(ya.times, yb.times):
        raise ValueError("solver outputs use different time grids")
    for k in upto:
        if not np.array_equal(ya.values[k], yb.values[k]):
            return AdaptednessReport(False, float(t_split), float(ya.times[k]), len(upto))
    return AdaptednessReport(True, float(t_split), None, len(upto))


@dataclass(frozen=True)
class RateFit:
    exponent: float | None
    r2: float | None
    degenerate: bool = False


def rate_fit(scales: Sequence[float], errors: Sequence[float]) -> RateFit:
    """Slope of ``log error`` on ``log scale`` by least squares."""
    x = np.asarray(scales, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("need at least three (scale, error) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("scales and errors must be positive")
    fit = stats.linregress(np.log(x), np.log(y))
    return RateFit(float(fit.slope), float(fit.rvalue**2))
