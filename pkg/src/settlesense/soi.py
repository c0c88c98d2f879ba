"""Sensitivity of information (SOI) of a settlement reading at a location.

SOI averages ``r_up`` over readings spread uniformly on ``[z_lob, z_upb]``
(midpoint rule). Only ``P(Z)`` and ``P(Z|F)`` depend on the reading and its
location, so a single subset simulation on ``g`` per sample size is cached
and shared; the prior evidence sample is common to all readings, which keeps
the ``r_up(z)`` curve smooth.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import ground
from .building import limit_state as building_limit_state
from .distributions import IDX
from .errors import ContractError, NoHitsError
from .subset import run_subset_simulation
from .updating import (
    Components,
    EvidenceSample,
    UpdateParams,
    assemble,
    conditional_evidence,
    evidence,
    failure_aux,
    gaussian_log_likelihood,
    r_up,
    r_up_sensitivities,
    _LOG_SQRT_2PI,
    _augmented_log,
)

log = logging.getLogger(__name__)

__all__ = ["SoiParams", "SoiEstimate", "PriorCache", "soi_at", "soi_from_curve", "midpoints", "r_up"]


@dataclass(frozen=True)
class SoiParams:
    z_lob: float = 5.0
    z_upb: float = 15.0
    n_dis: int = 20
    fresh_ss_per_z: bool = False

    def __post_init__(self):
        if not self.z_lob < self.z_upb:
            raise ContractError("z_lob must be below z_upb")
        if self.n_dis < 5:
            raise ContractError("n_dis must be >= 5")


def midpoints(params: SoiParams) -> np.ndarray:
    dz = (params.z_upb - params.z_lob) / params.n_dis
    return params.z_lob + (np.arange(params.n_dis) + 0.5) * dz


@dataclass
class ZPoint:
    z: float
    r_up: float
    cov: float
    r_up_sd: float
    p_f: float
    p_f_given_z: float
    n_ss: int
    converged: bool
    d_pf: float = 0.0
    cov_pf: float = 0.0
    sd_rest: float = 0.0


@dataclass
class SoiEstimate:
    location: tuple
    soi: float
    per_z: List[ZPoint]
    noise_var: float
    n_evaluations: int = 0

    @property
    def r_up_values(self):
        return np.array([p.r_up for p in self.per_z])


def soi_from_curve(r_values, d_pf=None, cov_pf=None, sd_rest=None):
    """Midpoint-rule SOI and its noise variance from per-reading ``r_up`` values.

    The ``P(F)`` contribution is treated as fully correlated across readings
    (one shared estimate); the rest as independent.
    """
    r = np.asarray(r_values, dtype=float)
    soi = float(r.mean())
    if d_pf is None:
        return soi, 0.0
    n = r.size
    shared = float(np.mean(np.asarray(d_pf) * np.asarray(cov_pf))) ** 2
    indep = float(np.sum(np.square(sd_rest))) / n**2
    return soi, shared + indep


class PriorCache:
    """Prior artefacts shared by every SOI evaluation of one scenario.

    Holds the evidence sample (physical ``V_L``, ``K`` plus auxiliary
    normals) and the subset-simulation results keyed by sample size. Safe to
    share between threads; each entry is computed once.
    """

    def __init__(self, scenario, params: UpdateParams = UpdateParams(), seed: int = 0,
                 limit_state: Optional[Callable] = None):
        self.scenario = scenario
        self.params = params
        self.seed = seed
        model = scenario.model
        self.dims = (IDX["V_L"], IDX["K"])
        self._vl_rv = model.variables[self.dims[0]]
        self._k_rv = model.variables[self.dims[1]]
        self.limit_state = limit_state or (lambda u: building_limit_state(scenario, model.to_physical(u)))
        ev = EvidenceSample.draw(params.n_evidence, 2, seed)
        self.evidence_u = ev.u
        self.evidence_aux = ev.aux
        self.evidence_vk = self._physical(ev.u)
        self._ss: Dict[tuple, object] = {}
        self._lock = threading.Lock()
        self._key_locks: Dict[tuple, threading.Lock] = {}

    def _physical(self, u):
        return (self._vl_rv.from_standard_normal(u[:, 0]) / 100.0, self._k_rv.from_standard_normal(u[:, 1]))

    def subset(self, n_ss: int, tag=0):
        """Subset simulation on ``g`` with ``n_ss`` samples per level (cached)."""
        key = (n_ss, tag)
        with self._lock:
            if key in self._ss:
                return self._ss[key]
            klock = self._key_locks.setdefault(key, threading.Lock())
        with klock:
            if key not in self._ss:
                seed = self.seed + 1_000_003 * tag
                ss = run_subset_simulation(self.limit_state, self.scenario.model.dim,
                                           self.params.ss_params(n_ss, seed))
                u_f = ss.failure_u[:, list(self.dims)]
                aux = failure_aux(u_f.shape[0], seed, n_ss)
                entry = (ss, self._physical(u_f), aux)
                with self._lock:
                    self._ss[key] = entry
            return self._ss[key]

    def settlements(self, location, v_l, k):
        return ground.settlement_magnitude(self.scenario.tunnel, *location, v_l, k)

    @property
    def sigma_e(self):
        return self.scenario.sigma_e

    @property
    def log_sup(self):
        return -math.log(self.sigma_e) - _LOG_SQRT_2PI


def _location3(location):
    loc = tuple(float(v) for v in location)
    if len(loc) == 2:
        loc = loc + (0.0,)
    if len(loc) != 3:
        raise ContractError("location must be (x, y) or (x, y, z)")
    return loc


def _h1_subset(cache: PriorCache, location, z):
    def run(log_c, n_ss):
        def h1(v):
            vl, k = cache._physical(v[:, 1:])
            ll = gaussian_log_likelihood(z - cache.settlements(location, vl, k), cache.sigma_e)
            return _augmented_log(v[:, 0], log_c + ll)

        return run_subset_simulation(h1, 3, cache.params.ss_params(n_ss, cache.seed + 7919))

    return run


def r_up_at(cache: PriorCache, location, z, s_prior=None, *, tag=0):
    """Adaptive posterior and ``r_up`` for reading ``z`` at ``location``."""
    params = cache.params
    location = _location3(location)
    if s_prior is None:
        s_prior = cache.settlements(location, *cache.evidence_vk)
    ll_prior = gaussian_log_likelihood(z - s_prior, cache.sigma_e)
    ev: Optional[Components] = None
    n_ss = params.n_ss_initial
    n_eval = 0
    out = None
    for it in range(params.max_outer_iterations):
        ss, (vl_f, k_f), aux_f = cache.subset(n_ss, tag)
        if ev is None:
            ev = evidence(ll_prior, cache.evidence_aux, params, cache.log_sup,
                          _h1_subset(cache, location, z), n_ss, cache.seed)
            n_eval += ev.n_eval
        ll_fail = gaussian_log_likelihood(z - cache.settlements(location, vl_f, k_f), cache.sigma_e)
        p_h2, c2, n_f = conditional_evidence(ll_fail, aux_f, params, cache.log_sup)
        if p_h2 <= 0:
            raise NoHitsError(f"no conditional hits for z={z:g} at {location}")
        p_fz, cc = assemble(ss, ev, p_h2, c2, n_f, params, cache.seed)
        p_fz = min(p_fz, 1.0 - 1e-12)
        rv = r_up(ss.p_f, p_fz)
        d_pf, d_rest = r_up_sensitivities(ss.p_f, p_fz)
        sd = math.hypot(d_pf * ss.cov, d_rest * cc.cov_rest)
        out = ZPoint(float(z), rv, cc.cov, sd, ss.p_f, p_fz, n_ss, cc.cov <= params.cov_thr,
                     d_pf, ss.cov, abs(d_rest) * cc.cov_rest)
        if out.converged:
            break
        n_ss += params.step
    return out, n_eval


def soi_at(location, scenario, soi_params: SoiParams = SoiParams(), update_params: UpdateParams = UpdateParams(),
           seed: int = 0, cache: Optional[PriorCache] = None) -> SoiEstimate:
    """SOI at ``location`` (m) by the midpoint rule over the reading band.

    Pass a shared :class:`PriorCache` when evaluating many locations of one
    scenario; it is built on the fly otherwise.
    """
    if cache is None:
        cache = PriorCache(scenario, update_params, seed)
    location = _location3(location)
    s_prior = cache.settlements(location, *cache.evidence_vk)
    points = []
    n_eval = 0
    for i, z in enumerate(midpoints(soi_params)):
        tag = i + 1 if soi_params.fresh_ss_per_z else 0
        zp, ne = r_up_at(cache, location, float(z), s_prior, tag=tag)
        points.append(zp)
        n_eval += ne
        if not zp.converged:
            log.warning("z=%.3g at %s: COV %.3g above target", z, location, zp.cov)
    soi, noise = soi_from_curve(
        [p.r_up for p in points],
        [p.d_pf for p in points],
        [p.cov_pf for p in points],
        [p.sd_rest for p in points],
    )
    ss_evals = sum(cache.subset(n, t)[0].n_evaluations for (n, t) in list(cache._ss))
    return SoiEstimate(location, soi, points, noise, n_eval + ss_evals)
