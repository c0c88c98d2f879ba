"""Active-learning search for the monitoring location with the largest SOI.

A Kriging surrogate is trained on SOI evaluated at an initial grid of
locations; points are then added one at a time at the maximum of the
expected improvement over a fine grid of the observation region, until the
largest EI drops to ``ei_thr`` or the iteration budget is spent.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import ContractError, ConvergenceError, SettleSenseError
from .kriging import expected_improvement, fit_kriging, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObservationRegion:
    """Rectangular patch of the ground surface, discretised into a grid."""

    x_range: tuple = (10.0, 30.0)
    y_range: tuple = (10.0, 30.0)
    n_grid: tuple = (101, 101)

    def __post_init__(self):
        for lo, hi in (self.x_range, self.y_range):
            if not hi > lo:
                raise ContractError(f"degenerate region range ({lo}, {hi})")
        nx, ny = self.n_grid
        if nx < 2 or ny < 2:
            raise ContractError("grid needs at least two points per axis")
        if nx * ny > 10**6:
            raise ContractError(f"grid of {nx * ny} points exceeds 10^6")

    def axes(self, counts=None):
        nx, ny = counts or self.n_grid
        return np.linspace(*self.x_range, nx), np.linspace(*self.y_range, ny)

    def grid(self, counts=None) -> np.ndarray:
        """Grid points as an ``(nx * ny, 2)`` array, x varying slowest."""
        gx, gy = self.axes(counts)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def cell(self) -> tuple:
        nx, ny = self.n_grid
        return ((self.x_range[1] - self.x_range[0]) / (nx - 1), (self.y_range[1] - self.y_range[0]) / (ny - 1))


@dataclass(frozen=True)
class OptParams:
    ei_thr: float = 1e-5
    max_iter: int = 100
    initial_grid: tuple = (9, 9)
    trend: str = "ordinary"
    full_restart_every: int = 10
    max_fail_fraction: float = 0.2

    def __post_init__(self):
        if not 1 <= self.max_iter <= 100:
            raise ContractError("max_iter must lie in [1, 100]")
        if self.ei_thr <= 0:
            raise ContractError("ei_thr must be positive")


@dataclass
class OptimizationTrace:
    initial_points: np.ndarray
    initial_values: np.ndarray
    iterations: List[dict] = field(default_factory=list)
    l_star: tuple = None
    l_star_grid: tuple = None
    soi_star: float = float("nan")
    termination: str = ""
    degenerate: bool = False
    failed_points: List[tuple] = field(default_factory=list)
    points: np.ndarray = None
    values: np.ndarray = None
    noise: np.ndarray = None
    surface: np.ndarray = None
    surface_var: np.ndarray = None
    model: object = None

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    @property
    def best_observed(self) -> np.ndarray:
        """Running maximum of the observed SOI after each added point."""
        start = float(np.max(self.initial_values))
        vals = [it["soi"] for it in self.iterations]
        return np.maximum.accumulate(np.concatenate([[start], vals]))


def _as_pair(v):
    if isinstance(v, tuple):
        return float(v[0]), float(v[1])
    if hasattr(v, "soi"):
        return float(v.soi), float(v.noise_var)
    return float(v), 0.0


def evaluate_many(fn, points, workers=1):
    """Evaluate ``fn`` at each point, keeping input order; failures give ``None``."""

    def one(p):
        try:
            return _as_pair(fn(tuple(p)))
        except SettleSenseError as exc:
            log.warning("SOI evaluation failed at %s: %s", tuple(p), exc)
            return None

    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, points))
    return [one(p) for p in points]


def _refine(region, mean_grid, idx):
    """One-cell quadratic refinement around grid index ``idx``."""
    nx, ny = region.n_grid
    i, j = divmod(idx, ny)
    if not (0 < i < nx - 1 and 0 < j < ny - 1):
        return None
    m = mean_grid.reshape(nx, ny)
    dx, dy = region.cell
    f = m[i - 1:i + 2, j - 1:j + 2]
    gx = (f[2, 1] - f[0, 1]) / (2 * dx)
    gy = (f[1, 2] - f[1, 0]) / (2 * dy)
    hxx = (f[2, 1] - 2 * f[1, 1] + f[0, 1]) / dx**2
    hyy = (f[1, 2] - 2 * f[1, 1] + f[1, 0]) / dy**2
    hxy = (f[2, 2] - f[2, 0] - f[0, 2] + f[0, 0]) / (4 * dx * dy)
    H = np.array([[hxx, hxy], [hxy, hyy]])
    if np.any(np.linalg.eigvalsh(H) >= 0):
        return None
    step = -np.linalg.solve(H, [gx, gy])
    if abs(step[0]) > dx or abs(step[1]) > dy:
        return None
    gx_axis, gy_axis = region.axes()
    return float(gx_axis[i] + step[0]), float(gy_axis[j] + step[1])


def optimize_location(region: ObservationRegion, soi_fn: Callable, params: OptParams = OptParams(),
                      seed: int = 0, workers: int = 1) -> OptimizationTrace:
    """Locate the maximum of ``soi_fn`` over ``region``.

    ``soi_fn(location)`` returns the SOI, a ``(soi, noise_var)`` pair, or an
    object with ``soi`` and ``noise_var`` attributes.
    """
    init = region.grid(params.initial_grid)
    res = evaluate_many(soi_fn, init, workers)
    ok = [r is not None for r in res]
    failed = [tuple(p) for p, good in zip(init, ok) if not good]
    if len(failed) > params.max_fail_fraction * len(init):
        raise ConvergenceError(f"{len(failed)} of {len(init)} initial SOI evaluations failed", None)
    pts = init[ok]
    vals = np.array([r[0] for r in res if r is not None])
    noise = np.array([r[1] for r in res if r is not None])
    trace = OptimizationTrace(initial_points=pts.copy(), initial_values=vals.copy(), failed_points=failed)
    grid = region.grid()
    trained = np.zeros(len(grid), dtype=bool)
    # initial points that coincide with grid nodes are never proposed again
    gx, gy = region.axes()
    for p in pts:
        i, j = int(np.argmin(abs(gx - p[0]))), int(np.argmin(abs(gy - p[1])))
        if abs(gx[i] - p[0]) < 1e-9 and abs(gy[j] - p[1]) < 1e-9:
            trained[i * len(gy) + j] = True

    n_eval = len(init)
    model = None
    warm = None
    for it in range(params.max_iter + 1):
        hint = float(noise.mean()) if noise.size and noise.max() > 0 else None
        full = warm is None or it % params.full_restart_every == 0
        model = fit_kriging(pts, vals, hint, params.trend, seed + it, n_starts=20 if full else 3,
                            initial=None if full else warm)
        if np.ptp(vals) == 0:
            trace.degenerate = True
            trace.termination = "ei_threshold"
            break
        warm = model
        mean, var = predict(model, grid, noisy=False)
        ei = expected_improvement(mean, var, float(vals.max()))
        ei[trained] = -np.inf
        k = int(np.argmax(ei))
        max_ei = float(ei[k])
        if max_ei <= params.ei_thr:
            trace.termination = "ei_threshold"
            break
        if it == params.max_iter:
            trace.termination = "max_iterations"
            break
        new = grid[k]
        trained[k] = True
        out = evaluate_many(soi_fn, [new], 1)[0]
        n_eval += 1
        if out is None:
            trace.failed_points.append(tuple(new))
            if len(trace.failed_points) > params.max_fail_fraction * n_eval:
                raise ConvergenceError("too many failed SOI evaluations", trace)
            continue
        pts = np.vstack([pts, new])
        vals = np.append(vals, out[0])
        noise = np.append(noise, out[1])
        trace.iterations.append(dict(point=(float(new[0]), float(new[1])), soi=out[0], max_ei=max_ei))
        log.info("iteration %d: added (%.3f, %.3f) SOI=%.4g maxEI=%.3g", it, new[0], new[1], out[0], max_ei)

    mean, var = predict(model, grid, noisy=False)
    k = int(np.argmax(mean))
    best = (float(grid[k][0]), float(grid[k][1]))
    best_val = float(mean[k])
    # a trained off-grid point can beat every grid node
    m_tr, _ = predict(model, pts, noisy=False)
    kt = int(np.argmax(m_tr))
    if m_tr[kt] > best_val:
        best, best_val = (float(pts[kt][0]), float(pts[kt][1])), float(m_tr[kt])
    trace.l_star_grid = best
    refined = None if trace.degenerate else _refine(region, mean, k)
    if refined is not None:
        m_ref, _ = predict(model, np.array([refined]), noisy=False)
        if m_ref[0] >= best_val:
            best, best_val = refined, float(m_ref[0])
    trace.l_star = best
    trace.soi_star = best_val
    trace.points, trace.values, trace.noise = pts, vals, noise
    trace.surface, trace.surface_var = mean, var
    trace.model = model
    return trace
