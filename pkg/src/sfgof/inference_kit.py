"""Shared numerics used by every model pipeline.

Provides bounded scalar maximization (coarse grid plus golden-section
refinement), composite Simpson quadrature, a classical Runge-Kutta ODE
integrator on uniform grids, and counter-based random streams that make
Monte Carlo replication deterministic under any degree of parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ParamInterval:
    """Open scalar parameter interval (lower, upper)."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ConfigError(f"parameter interval must be finite, got ({self.lower}, {self.upper})")
        if not self.lower < self.upper:
            raise ConfigError(f"parameter interval needs lower < upper, got ({self.lower}, {self.upper})")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def clip(self, theta: float) -> float:
        return float(min(max(theta, self.lower), self.upper))

    def contains(self, theta: float) -> bool:
        return self.lower < theta < self.upper

    def near_boundary(self, theta: float, tol: float) -> bool:
        return (theta - self.lower) <= tol or (self.upper - theta) <= tol


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [start, end] with num_steps steps (num_steps + 1 points)."""

    start: float
    end: float
    num_steps: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ConfigError(f"grid needs start < end, got [{self.start}, {self.end}]")
        if self.num_steps < 2:
            raise ConfigError(f"grid needs num_steps >= 2, got {self.num_steps}")

    @property
    def h(self) -> float:
        return (self.end - self.start) / self.num_steps

    def points(self) -> np.ndarray:
        return np.linspace(self.start, self.end, self.num_steps + 1)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by (master_seed, stream_id).

    Two streams with identical fields yield bit-identical draw sequences,
    and distinct stream ids index independent Philox keys, so replicates
    can be generated in any order or batch layout without changing output.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed % 2**64, self.stream_id % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


def _eval_scalar(f: Callable[[float], float], x: float) -> float:
    v = float(f(x))
    if not np.isfinite(v):
        raise NumericalError(f"objective returned a non-finite value at theta={x!r}")
    return v


def _eval_array(f: Callable, xs: np.ndarray) -> np.ndarray:
    """Evaluate f on a node array, accepting vectorized or scalar-only callables."""
    try:
        out = np.asarray(f(xs), dtype=float)
        if out.shape == xs.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(f(x)) for x in xs])


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization on [lo, hi]; ties move the bracket right."""
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc = _eval_scalar(f, c)
    fd = _eval_scalar(f, d)
    while hi - lo > tol:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = _eval_scalar(f, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = _eval_scalar(f, d)
    x = 0.5 * (lo + hi)
    return x, _eval_scalar(f, x)


def maximize_1d(
    objective: Callable[[float], float],
    interval: ParamInterval,
    tol: float = 1e-8,
    grid_points: int = 64,
) -> float:
    """Maximize a scalar objective over an open interval.

    A coarse grid of interior points is scanned first; every sampled local
    maximum is refined by golden-section search in its bracketing cell.
    Among candidates whose values tie within floating-point resolution the
    lowest theta wins, which makes the result deterministic for flat or
    multi-peaked objectives.
    """
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    a, b = interval.lower, interval.upper
    xs = np.linspace(a, b, grid_points + 2)[1:-1]
    fs = np.array([_eval_scalar(objective, x) for x in xs])

    padded = np.concatenate([[-np.inf], fs, [-np.inf]])
    peaks = np.flatnonzero((fs >= padded[:-2]) & (fs >= padded[2:]))

    cand_x = list(xs)
    cand_f = list(fs)
    h = xs[1] - xs[0]
    for i in peaks:
        lo = max(a, xs[i] - h)
        hi = min(b, xs[i] + h)
        x_ref, f_ref = _golden_max(objective, lo, hi, tol)
        cand_x.append(x_ref)
        cand_f.append(f_ref)

    cand_x = np.asarray(cand_x)
    cand_f = np.asarray(cand_f)
    f_best = cand_f.max()
    spread = f_best - cand_f.min()
    tie = 64.0 * np.finfo(float).eps * max(abs(f_best), spread)
    return float(cand_x[cand_f >= f_best - tie].min())


def minimize_1d(objective, interval: ParamInterval, tol: float = 1e-8, grid_points: int = 64) -> float:
    """Minimize by maximizing the negated objective."""
    return maximize_1d(lambda t: -objective(t), interval, tol=tol, grid_points=grid_points)


def integrate_1d(f: Callable, a: float, b: float, n_panels: int = 256) -> float:
    """Composite Simpson quadrature with n_panels panels (2*n_panels+1 nodes)."""
    if not a < b:
        raise ConfigError(f"integration needs a < b, got [{a}, {b}]")
    if n_panels < 2:
        raise ConfigError(f"n_panels must be >= 2, got {n_panels}")
    xs = np.linspace(a, b, 2 * n_panels + 1)
    fx = _eval_array(f, xs)
    if not np.all(np.isfinite(fx)):
        bad = xs[~np.isfinite(fx)][0]
        raise NumericalError(f"integrand non-finite at x={bad!r}")
    h = (b - a) / (2 * n_panels)
    return float(h / 3.0 * (fx[0] + fx[-1] + 4.0 * fx[1:-1:2].sum() + 2.0 * fx[2:-2:2].sum()))


def simpson_array(values: np.ndarray, dx: float) -> float:
    """Composite Simpson on uniformly sampled values (odd point count required)."""
    values = np.asarray(values, dtype=float)
    if values.size < 3 or values.size % 2 == 0:
        raise ConfigError(f"simpson_array needs an odd number of points >= 3, got {values.size}")
    return float(dx / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-2:2].sum()))


def cumulative_trapezoid(values: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative trapezoid starting at 0; nondecreasing for nonnegative input."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * dx * (values[1:] + values[:-1]), out=out[1:])
    return out


def cumulative_simpson(values: np.ndarray, dx: float) -> np.ndarray:
    """Cumulative integral with local quadratic (Simpson-grade) increments.

    The increment over each interval integrates the parabola through the
    three surrounding samples, matching composite Simpson accuracy while
    providing a value at every node.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 3:
        raise ConfigError(f"cumulative_simpson needs >= 3 points, got {n}")
    inc = np.empty(n - 1)
    inc[0] = dx / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
    inc[1:] = dx / 12.0 * (-values[:-2] + 8.0 * values[1:-1] + 5.0 * values[2:])
    out = np.empty(n)
    out[0] = 0.0
    np.cumsum(inc, out=out[1:])
    return out


def ode_solve(rhs: Callable[[float, float], float], x0: float, grid: TimeGrid) -> np.ndarray:
    """Classical 4th-order Runge-Kutta on a uniform grid; first value is x0."""
    ts = grid.points()
    h = grid.h
    out = np.empty(ts.size)
    out[0] = x0
    x = float(x0)
    half = 0.5 * h
    for i in range(ts.size - 1):
        t = ts[i]
        k1 = rhs(t, x)
        k2 = rhs(t + half, x + half * k1)
        k3 = rhs(t + half, x + half * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.isfinite(x):
            raise NumericalError(f"ODE state became non-finite at t={ts[i + 1]!r}")
        out[i + 1] = x
    return out


def two_sample_ks(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov distance sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
