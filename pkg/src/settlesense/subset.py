"""Subset simulation in independent standard-normal space.

The estimator is the classic one: a crude Monte Carlo first level, then
intermediate thresholds at the ``p0`` quantile of the current responses, with
each of the ``N * p0`` seeds grown into a Markov chain by the component-wise
(modified) Metropolis algorithm with a uniform proposal. The coefficient of
variation accounts for correlation along the chains.

Limit-state callables are vectorised: they take an ``(n, dim)`` array of
standard-normal points and return ``n`` responses; failure is ``g <= 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .errors import ContractError, NoHitsError, SubsetSimulationError
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubsetSimParams:
    n_per_level: int = 10_000
    p0: float = 0.1
    proposal_halfwidth: float = 1.0
    max_levels: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p0 <= 0.5:
            raise ContractError(f"p0 must lie in (0, 0.5] (got {self.p0})")
        nc = self.n_per_level * self.p0
        if abs(nc - round(nc)) > 1e-9 or round(nc) < 100:
            raise ContractError(
                f"n_per_level * p0 must be an integer >= 100 (got {nc:g})"
            )
        if self.proposal_halfwidth <= 0:
            raise ContractError("proposal_halfwidth must be positive")

    @property
    def n_chains(self) -> int:
        return int(round(self.n_per_level * self.p0))


@dataclass
class Level:
    """One subset level.

    ``g`` holds the responses arranged by chain, shape ``(n_chains, chain_len)``
    (a single pseudo-chain of independent samples for the first level).
    ``u`` is the matching ``(n_chains, chain_len, dim)`` array of points.
    """

    threshold: float
    probability: float
    g: np.ndarray
    u: np.ndarray
    lengths: np.ndarray
    independent: bool = False

    def indicators(self):
        return self.g <= max(self.threshold, 0.0)


@dataclass
class SubsetSimResult:
    p_f: float
    levels: List[Level]
    cov: float
    failure_u: np.ndarray
    failure_g: np.ndarray
    n_evaluations: int
    n_per_level: int
    level_covs: List[float] = field(default_factory=list)

    @property
    def thresholds(self):
        return [lv.threshold for lv in self.levels]

    @property
    def probabilities(self):
        return [lv.probability for lv in self.levels]

    @property
    def n_chains(self) -> int:
        return self.levels[-1].g.shape[0]


def _chain_correlation_factor(ind, lengths, p, n):
    """``gamma`` for one level from the chain-grouped failure indicators."""
    nc, ls = ind.shape
    if p <= 0.0 or p >= 1.0 or ls < 2:
        return 0.0
    valid = np.arange(ls)[None, :] < lengths[:, None]
    x = np.where(valid, ind, 0.0).astype(float)
    r0 = p * (1.0 - p)
    gamma = 0.0
    for k in range(1, ls):
        pairs_valid = valid[:, k:] & valid[:, :-k]
        npairs = pairs_valid.sum()
        if npairs == 0:
            break
        rk = np.sum(x[:, :-k] * x[:, k:] * pairs_valid) / npairs - p * p
        gamma += 2.0 * (1.0 - k * nc / n) * rk / r0
    return gamma


def level_cov(level: Level, n: int) -> float:
    p = level.probability
    if p <= 0:
        return float("inf")
    base = (1.0 - p) / (p * n)
    if level.independent:
        return float(np.sqrt(base))
    gamma = _chain_correlation_factor(level.indicators(), level.lengths, p, n)
    return float(np.sqrt(base * (1.0 + gamma)))


def cov_of_pf(result: SubsetSimResult) -> float:
    """Overall COV: root-sum-square of the per-level COVs."""
    if not result.levels:
        raise ContractError("result has no levels")
    covs = [level_cov(lv, result.n_per_level) for lv in result.levels]
    return float(np.sqrt(np.sum(np.square(covs))))


def _mcmc_level(lsf, seeds_u, seeds_g, lengths, threshold, halfwidth, rng):
    """Grow one chain from each seed, conditioned on ``g <= threshold``."""
    nc, dim = seeds_u.shape
    ls = int(lengths.max())
    u = np.empty((nc, ls, dim))
    g = np.empty((nc, ls))
    u[:, 0], g[:, 0] = seeds_u, seeds_g
    cur_u, cur_g = seeds_u.copy(), seeds_g.copy()
    n_eval = 0
    for step in range(1, ls):
        active = lengths > step
        xi = cur_u + rng.uniform(-halfwidth, halfwidth, size=cur_u.shape)
        log_ratio = -0.5 * (xi**2 - cur_u**2)
        accept = np.log(rng.uniform(size=cur_u.shape)) < log_ratio
        cand = np.where(accept, xi, cur_u)
        moved = accept.any(axis=1) & active
        if moved.any():
            gc = np.asarray(lsf(cand[moved]), dtype=float)
            n_eval += int(moved.sum())
            ok = gc <= threshold
            idx = np.flatnonzero(moved)[ok]
            cur_u[idx] = cand[idx]
            cur_g[idx] = gc[ok]
        u[:, step], g[:, step] = cur_u, cur_g
    return u, g, n_eval


def run_subset_simulation(lsf: Callable, dim: int, params: SubsetSimParams = SubsetSimParams()):
    """Estimate ``P(g(U) <= 0)`` for ``U ~ N(0, I_dim)``.

    Raises
    ------
    SubsetSimulationError
        If ``max_levels`` levels pass without reaching ``g <= 0``; the partial
        result is attached as ``err.partial``.
    """
    if dim < 1:
        raise ContractError("dim must be >= 1")
    n, p0, nc = params.n_per_level, params.p0, params.n_chains
    rng0 = stream(params.seed, "subset", 0)
    u = rng0.standard_normal((n, dim))
    g = np.asarray(lsf(u), dtype=float)
    n_eval = n
    lengths = np.full(nc, n // nc)
    lengths[: n % nc] += 1

    levels: List[Level] = []
    cur_u, cur_g = u.reshape(1, n, dim), g.reshape(1, n)
    cur_len, independent = np.array([n]), True
    while True:
        flat_g = cur_g[np.arange(cur_g.shape[1])[None, :] < cur_len[:, None]]
        flat_u = cur_u[np.arange(cur_u.shape[1])[None, :] < cur_len[:, None]]
        order = np.argsort(flat_g, kind="stable")
        gs = flat_g[order]
        threshold = 0.5 * (gs[nc - 1] + gs[nc])
        if threshold <= 0.0:
            p = float(np.count_nonzero(flat_g <= 0.0)) / n
            levels.append(Level(0.0, p, cur_g, cur_u, cur_len, independent))
            break
        levels.append(Level(float(threshold), p0, cur_g, cur_u, cur_len, independent))
        if len(levels) >= params.max_levels:
            partial = SubsetSimResult(
                float(np.prod([lv.probability for lv in levels])), levels, float("nan"),
                np.empty((0, dim)), np.empty(0), n_eval, n,
            )
            raise SubsetSimulationError(
                f"no failure region reached after {params.max_levels} levels "
                f"(p_f below {partial.p_f:.3g})",
                partial,
            )
        seeds = order[:nc]
        rng = stream(params.seed, "subset", len(levels))
        cur_u, cur_g, ne = _mcmc_level(
            lsf, flat_u[seeds], gs[:nc], lengths, threshold, params.proposal_halfwidth, rng
        )
        n_eval += ne
        cur_len, independent = lengths, False
        log.debug("level %d: threshold %.4g", len(levels), threshold)

    last = levels[-1]
    valid = np.arange(last.g.shape[1])[None, :] < last.lengths[:, None]
    fail = valid & (last.g <= 0.0)
    p_f = float(np.prod([lv.probability for lv in levels]))
    res = SubsetSimResult(p_f, levels, 0.0, last.u[fail], last.g[fail], n_eval, n)
    res.level_covs = [level_cov(lv, n) for lv in levels]
    res.cov = float(np.sqrt(np.sum(np.square(res.level_covs))))
    return res


def estimate_probability_mcs(event: Callable, dim: int, n: int, seed: int = 0, *, name="mcs"):
    """Crude Monte Carlo ``P(event(U) <= 0)``; returns ``(p, cov)``."""
    if n < 1000:
        raise ContractError("crude Monte Carlo needs n >= 1000")
    u = stream(seed, name).standard_normal((n, dim))
    hits = int(np.count_nonzero(np.asarray(event(u)) <= 0.0))
    if hits == 0:
        raise NoHitsError(f"no hits in {n} samples; increase n or use subset simulation")
    p = hits / n
    return p, float(np.sqrt((1.0 - p) / (p * n)))
