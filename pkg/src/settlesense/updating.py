"""Reliability updating with equality information.

An observation ``s_m = S(x) + E`` enters through its likelihood ``L(x)``. With
an auxiliary standard-normal ``U`` and a constant ``c`` such that
``c L <= 1``::

    h(U, x) = U - Phi^-1(c L(x)),   P(h <= 0 | x) = c L(x)

so ``P(Z) = P(h1 <= 0) / c1``. Rather than estimating the rare joint event
``F and Z`` directly, the posterior is assembled as::

    P(F | Z) = P(Z | F) P(F) / P(Z)

where ``P(F)`` and a set of failure-domain samples come from one subset
simulation on ``g``, ``P(Z)`` from crude Monte Carlo on ``h1`` (only the
inputs the likelihood depends on are sampled), and ``P(Z | F)`` from ``h2``
evaluated on the retained failure samples. If the posterior COV is above
target, the subset simulation is rerun with more samples per level.

The joint-event route ``P(max(g, h) <= 0) / P(h <= 0)`` is provided as an
independent cross-check (:func:`update_via_joint`).

Likelihoods are handled on the log scale so ``Phi^-1(c L)`` stays finite and
accurate far in the tails.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy import special

from . import ground
from .building import limit_state as building_limit_state
from .distributions import IDX
from .errors import ContractError, ConvergenceError, InstabilityError, NoHitsError
from .rng import stream
from .subset import SubsetSimParams, SubsetSimResult, run_subset_simulation

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# above this COV of P(Z) the truncated reciprocal moments are unreliable
_MAX_COV_PZ = 0.2


@dataclass(frozen=True)
class Measurement:
    """A settlement reading (positive magnitude, mm) at ``location`` (m)."""

    location: tuple
    value: float
    sigma_m: float = 1.0
    sigma_f: float = 2.0

    def __post_init__(self):
        if self.sigma_m <= 0 or self.sigma_f <= 0:
            raise ContractError("error standard deviations must be positive")
        loc = tuple(float(v) for v in self.location)
        if len(loc) == 2:
            loc = loc + (0.0,)
        object.__setattr__(self, "location", loc)

    @property
    def sigma_e(self) -> float:
        return math.hypot(self.sigma_m, self.sigma_f)


@dataclass(frozen=True)
class UpdateParams:
    cov_thr: float = 0.05
    n_ss_initial: int = 10_000
    delta_n_ss: Optional[int] = None
    max_outer_iterations: int = 5
    reciprocal_sim_n: int = 1_000_000
    n_evidence: int = 1_000_000
    min_hits: int = 100
    p0: float = 0.1
    proposal_halfwidth: float = 1.0
    max_levels: int = 20
    # 'supremum': c = 1 / sup L (analytic); 'sample_max': c = 1 / max L over
    # the samples the estimate is built on (c1 and c2 then differ)
    scale_rule: str = "sample_max"
    truncation: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.cov_thr <= 0.3:
            raise ContractError(f"cov_thr must lie in (0, 0.3] (got {self.cov_thr})")
        if self.delta_n_ss is not None and self.delta_n_ss < 1000:
            raise ContractError("delta_n_ss must be >= 1000")
        if self.scale_rule not in ("supremum", "sample_max"):
            raise ContractError(f"unknown scale_rule {self.scale_rule!r}")
        if self.max_outer_iterations < 1:
            raise ContractError("max_outer_iterations must be >= 1")

    @property
    def step(self) -> int:
        return self.delta_n_ss if self.delta_n_ss is not None else self.n_ss_initial

    def ss_params(self, n_ss: int, seed: int) -> SubsetSimParams:
        return SubsetSimParams(n_ss, self.p0, self.proposal_halfwidth, self.max_levels, seed)


@dataclass(frozen=True)
class UpdatingProblem:
    """Prior failure problem plus one piece of equality information.

    ``limit_state`` maps ``(n, dim)`` standard-normal points to ``g``.
    ``log_likelihood`` maps the columns ``likelihood_dims`` of such points to
    ``log L``. ``log_likelihood_sup`` is ``log sup L`` when known analytically.
    """

    dim: int
    limit_state: Callable
    log_likelihood: Callable
    likelihood_dims: tuple
    log_likelihood_sup: Optional[float] = None


@dataclass
class UpdateResult:
    p_f: float
    cov_pf: float
    p_h1: float
    p_h2_given_f: float
    c1: float
    c2: float
    p_f_given_z: float
    cov_pfz: float
    r_up: float
    n_evaluations: int
    n_ss: int
    cov_pz: float = 0.0
    cov_pzf: float = 0.0
    n_failure_samples: int = 0
    p_z_method: str = "mcs"
    trace: List[dict] = field(default_factory=list)

    @property
    def p_z(self) -> float:
        return self.p_h1 / self.c1

    @property
    def p_z_given_f(self) -> float:
        return self.p_h2_given_f / self.c2


# -- building blocks ---------------------------------------------------------


def gaussian_log_likelihood(residual, sigma):
    return -0.5 * (np.asarray(residual) / sigma) ** 2 - math.log(sigma) - _LOG_SQRT_2PI


def likelihood(v_l, k, meas: Measurement, scenario):
    """Likelihood (1/mm) of a settlement reading given volume loss (percent) and trough width."""
    s = ground.settlement_magnitude(scenario.tunnel, *meas.location, np.asarray(v_l) / 100.0, k)
    return np.exp(gaussian_log_likelihood(meas.value - s, meas.sigma_e))


def scale_constant(meas: Measurement) -> float:
    """``1 / sup L`` for the Gaussian error model, in mm."""
    return math.sqrt(2.0 * math.pi) * meas.sigma_e


def augmented_lsf(u_aux, cl):
    """``h = u - Phi^-1(c L)``; ``cL = 0`` gives ``+inf`` (never inside), ``cL = 1`` gives ``-inf``."""
    cl = np.asarray(cl, dtype=float)
    if np.any(cl > 1.0 + 1e-12) or np.any(cl < 0):
        raise ContractError("c * L must lie in [0, 1]; the scale constant is too large")
    return np.asarray(u_aux) - special.ndtri(np.minimum(cl, 1.0))


def _augmented_log(u_aux, log_cl):
    with np.errstate(divide="ignore"):
        return np.asarray(u_aux) - special.ndtri_exp(np.minimum(log_cl, 0.0))


def product_variance(mean_a, var_a, mean_b, var_b):
    """Variance of the product of two independent random variables."""
    return mean_a**2 * var_b + mean_b**2 * var_a + var_a * var_b


@functools.lru_cache(maxsize=8)
def _base_normals(n, seed):
    return stream(seed, "reciprocal").standard_normal(n)


def reciprocal_moments(mean, cov, n=1_000_000, seed=0, floor=1e-3):
    """``E(1/P)`` and ``Var(1/P)`` for ``P`` normal with given mean and COV.

    Draws are truncated below at ``floor * mean``. Returns
    ``(E, Var, n_kept)``.
    """
    if cov <= 0:
        return 1.0 / mean, 0.0, n
    xi = _base_normals(int(n), int(seed))
    rel = 1.0 + cov * xi
    rel = rel[rel > floor]
    inv = 1.0 / rel
    return float(inv.mean() / mean), float(inv.var() / mean**2), int(rel.size)


class ConditionalCov(NamedTuple):
    cov: float
    cov_pzf: float
    cov_inv_pz: float

    @property
    def cov_rest(self) -> float:
        """Relative noise of ``P(Z|F) / P(Z)``, i.e. everything except ``P(F)``."""
        return math.sqrt((1.0 + self.cov_pzf**2) * (1.0 + self.cov_inv_pz**2) - 1.0)


def cov_of_conditional(p_f, cov_pf, p_zf, n_zf, p_z, cov_pz, reciprocal_sim_n=1_000_000, seed=0,
                       floor=1e-3) -> ConditionalCov:
    """COV of ``P(F|Z) = P(F) P(Z|F) / P(Z)`` from its independent components.

    ``p_zf`` is the hit proportion behind ``P(Z|F)`` (any constant scale
    cancels) with ``n_zf`` trials; its variance is taken as the binomial
    ``p (1 - p) / n``.
    """
    if cov_pz >= _MAX_COV_PZ:
        raise InstabilityError(f"COV of P(Z) is {cov_pz:.3g} >= {_MAX_COV_PZ}; reciprocal moments are unstable")
    if p_zf <= 0 or n_zf <= 0:
        return ConditionalCov(float("inf"), float("inf"), 0.0)
    var_f = (cov_pf * p_f) ** 2
    var_zf = p_zf * (1.0 - p_zf) / n_zf
    e_fz = p_f * p_zf
    var_fz = product_variance(p_f, var_f, p_zf, var_zf)
    e_inv, var_inv, _ = reciprocal_moments(p_z, cov_pz, reciprocal_sim_n, seed, floor)
    num = product_variance(e_fz, var_fz, e_inv, var_inv)
    return ConditionalCov(
        float(math.sqrt(num) / (e_fz * e_inv)),
        float(math.sqrt(var_zf) / p_zf),
        float(math.sqrt(var_inv) / e_inv),
    )


def r_up(p_f, p_f_given_z):
    """Relative change of the reliability index, ``|beta_post / beta_prior - 1|``."""
    for name, p in (("P(F)", p_f), ("P(F|Z)", p_f_given_z)):
        if not 0.0 < p < 1.0:
            raise ContractError(f"{name} must lie in (0, 1) (got {p})")
    beta_prior = -special.ndtri(p_f)
    if abs(beta_prior) < 1e-12:
        raise ContractError("P(F) = 0.5 makes the prior reliability index zero; r_up is undefined")
    return float(abs(special.ndtri(p_f_given_z) / special.ndtri(p_f) - 1.0))


def r_up_sensitivities(p_f, p_f_given_z):
    """Derivatives of :func:`r_up` with respect to ``log P(F)`` and ``log P(Z|F)/P(Z)``.

    The posterior is proportional to ``P(F)``, so the first derivative moves
    prior and posterior together.
    """
    b_f = -special.ndtri(p_f)
    b_p = -special.ndtri(p_f_given_z)
    k_f = p_f / (math.exp(-0.5 * b_f * b_f) / math.sqrt(2 * math.pi))
    k_p = p_f_given_z / (math.exp(-0.5 * b_p * b_p) / math.sqrt(2 * math.pi))
    sign = 1.0 if b_p / b_f >= 1.0 else -1.0
    d_rest = -sign * k_p / b_f
    d_pf = sign * (-k_p / b_f + b_p / b_f**2 * k_f)
    return d_pf, d_rest


def r_up_std(p_f, p_f_given_z, cov_pf, cov_rest):
    """Delta-method standard deviation of :func:`r_up`.

    ``cov_pf`` is the COV of ``P(F)``; ``cov_rest`` is the remaining relative
    noise of ``P(Z|F) / P(Z)``.
    """
    d_pf, d_rest = r_up_sensitivities(p_f, p_f_given_z)
    return float(math.hypot(d_pf * cov_pf, d_rest * cov_rest))


# -- problem construction ----------------------------------------------------


def case_study_problem(scenario, meas: Measurement) -> UpdatingProblem:
    """Updating problem for the building limit state and one settlement reading."""
    model = scenario.model
    dims = (IDX["V_L"], IDX["K"])
    vl_rv, k_rv = model.variables[dims[0]], model.variables[dims[1]]

    def g(u):
        return building_limit_state(scenario, model.to_physical(u))

    def loglik(u_sub):
        v_l = vl_rv.from_standard_normal(u_sub[:, 0]) / 100.0
        k = k_rv.from_standard_normal(u_sub[:, 1])
        s = ground.settlement_magnitude(scenario.tunnel, *meas.location, v_l, k)
        return gaussian_log_likelihood(meas.value - s, meas.sigma_e)

    sup = -math.log(meas.sigma_e) - _LOG_SQRT_2PI
    return UpdatingProblem(model.dim, g, loglik, dims, sup)


# -- evidence estimates ------------------------------------------------------


@dataclass
class EvidenceSample:
    """Prior draws of the likelihood inputs with their auxiliary variables."""

    u: np.ndarray
    aux: np.ndarray

    @classmethod
    def draw(cls, n, k, seed):
        rng = stream(seed, "evidence")
        return cls(rng.standard_normal((n, k)), rng.standard_normal(n))


def failure_aux(n, seed, n_ss):
    return stream(seed, "failure-aux", n_ss).standard_normal(n)


def _log_scale(loglik, sup, rule):
    if rule == "supremum" and sup is not None:
        return -sup
    finite = loglik[np.isfinite(loglik)]
    if finite.size == 0:
        return -sup if sup is not None else 0.0
    return -float(finite.max())


class Components(NamedTuple):
    p_h1: float
    c1: float
    cov_pz: float
    method: str
    n_eval: int


def evidence(loglik_prior, aux, params: UpdateParams, sup=None, fallback=None, n_ss=None, seed=0):
    """``P(h1 <= 0)`` and its scale constant; subset simulation if hits are scarce.

    ``fallback(log_c, n_ss)`` must return a :class:`SubsetSimResult` for the
    augmented limit state; it is used when crude Monte Carlo yields fewer
    than ``params.min_hits`` hits, doubling ``n_ss`` (at most four times)
    while the COV stays at or above ``_MAX_COV_PZ``.
    """
    log_c1 = _log_scale(loglik_prior, sup, params.scale_rule)
    hits = int(np.count_nonzero(_augmented_log(aux, log_c1 + loglik_prior) <= 0.0))
    n = aux.size
    if hits >= params.min_hits or fallback is None:
        if hits == 0:
            raise NoHitsError("no hits for P(Z); increase n_evidence or use subset simulation")
        p = hits / n
        return Components(p, math.exp(log_c1), math.sqrt((1 - p) / (p * n)), "mcs", 0)
    if sup is not None:
        log_c1 = -sup
    n_ss = n_ss or params.n_ss_initial
    n_eval = 0
    for _ in range(5):
        res = fallback(log_c1, n_ss)
        n_eval += res.n_evaluations
        if res.cov < _MAX_COV_PZ:
            break
        n_ss *= 2
    return Components(res.p_f, math.exp(log_c1), res.cov, "subset", n_eval)


def conditional_evidence(loglik_fail, aux_fail, params: UpdateParams, sup=None):
    """``(p_h2, c2, n)``: hit proportion of ``h2`` over the failure samples."""
    log_c2 = _log_scale(loglik_fail, sup, params.scale_rule)
    hits = int(np.count_nonzero(_augmented_log(aux_fail, log_c2 + loglik_fail) <= 0.0))
    return hits / aux_fail.size, math.exp(log_c2), aux_fail.size


def assemble(ss: SubsetSimResult, ev: Components, p_h2, c2, n_f, params, seed):
    """Posterior, COVs and r_up from the three estimates."""
    p_fz = (ev.c1 / c2) * p_h2 * ss.p_f / ev.p_h1 if p_h2 > 0 else 0.0
    cc = cov_of_conditional(ss.p_f, ss.cov, p_h2, n_f, ev.p_h1, ev.cov_pz,
                            params.reciprocal_sim_n, seed, params.truncation)
    return p_fz, cc


def _finish(ss, ev, p_h2, c2, n_f, p_fz, cc, n_ss, n_eval, trace):
    try:
        rup = r_up(ss.p_f, p_fz) if 0 < p_fz < 1 else float("nan")
    except ContractError:
        rup = float("nan")
    return UpdateResult(
        p_f=ss.p_f, cov_pf=ss.cov, p_h1=ev.p_h1, p_h2_given_f=p_h2, c1=ev.c1, c2=c2,
        p_f_given_z=min(p_fz, 1.0), cov_pfz=cc.cov, r_up=rup, n_evaluations=n_eval, n_ss=n_ss,
        cov_pz=ev.cov_pz, cov_pzf=cc.cov_pzf, n_failure_samples=n_f, p_z_method=ev.method,
        trace=list(trace),
    )


def _h1_fallback(problem: UpdatingProblem, params, seed):
    k = len(problem.likelihood_dims)

    def run(log_c, n_ss):
        def h1(v):
            return _augmented_log(v[:, 0], log_c + problem.log_likelihood(v[:, 1:]))

        return run_subset_simulation(h1, k + 1, params.ss_params(n_ss, seed + 7919))

    return run


def update_reliability(problem: UpdatingProblem, params: UpdateParams = UpdateParams(), seed: int = 0,
                       *, strict: bool = True) -> UpdateResult:
    """Adaptive posterior failure probability via ``P(Z|F) P(F) / P(Z)``.

    Raises :class:`ConvergenceError` (carrying the last result) when the COV
    target is not met within ``max_outer_iterations`` and ``strict`` is set.
    """
    dims = list(problem.likelihood_dims)
    ev_sample = EvidenceSample.draw(params.n_evidence, len(dims), seed)
    ll_prior = problem.log_likelihood(ev_sample.u)
    n_ss = params.n_ss_initial
    n_eval = 0
    trace = []
    result = None
    ev = None
    for it in range(params.max_outer_iterations):
        ss = run_subset_simulation(problem.limit_state, problem.dim, params.ss_params(n_ss, seed))
        n_eval += ss.n_evaluations
        if ev is None:
            ev = evidence(ll_prior, ev_sample.aux, params, problem.log_likelihood_sup,
                          _h1_fallback(problem, params, seed), n_ss, seed)
            n_eval += ev.n_eval
        ll_fail = problem.log_likelihood(ss.failure_u[:, dims])
        aux_f = failure_aux(ll_fail.size, seed, n_ss)
        p_h2, c2, n_f = conditional_evidence(ll_fail, aux_f, params, problem.log_likelihood_sup)
        p_fz, cc = assemble(ss, ev, p_h2, c2, n_f, params, seed)
        trace.append(dict(iteration=it, n_ss=n_ss, p_f=ss.p_f, cov_pf=ss.cov, p_f_given_z=p_fz, cov_pfz=cc.cov))
        result = _finish(ss, ev, p_h2, c2, n_f, p_fz, cc, n_ss, n_eval, trace)
        log.info("outer %d: N_SS=%d P_F=%.4g P_F|Z=%.4g COV=%.3g", it, n_ss, ss.p_f, p_fz, cc.cov)
        if cc.cov <= params.cov_thr:
            return result
        n_ss += params.step
    if strict:
        raise ConvergenceError(
            f"COV of P(F|Z) {result.cov_pfz:.3g} above {params.cov_thr} after "
            f"{params.max_outer_iterations} iterations",
            result,
        )
    return result


def update_via_joint(problem: UpdatingProblem, params: UpdateParams = UpdateParams(), seed: int = 0,
                     n_ss: Optional[int] = None):
    """``P(F|Z) = P(max(g, h) <= 0) / P(h <= 0)``; returns ``(p_f_given_z, cov)``.

    Uses the analytic supremum for ``c`` when available so that both
    probabilities share one constant.
    """
    dims = list(problem.likelihood_dims)
    n_ss = n_ss or params.n_ss_initial
    ev_sample = EvidenceSample.draw(params.n_evidence, len(dims), seed + 1)
    ll_prior = problem.log_likelihood(ev_sample.u)
    if problem.log_likelihood_sup is not None:
        log_c = -problem.log_likelihood_sup
    else:
        log_c = -float(ll_prior.max())

    def joint(v):
        h = _augmented_log(v[:, 0], log_c + problem.log_likelihood(v[:, 1:][:, dims]))
        return np.maximum(problem.limit_state(v[:, 1:]), h)

    ss = run_subset_simulation(joint, problem.dim + 1, params.ss_params(n_ss, seed + 104729))
    hits = int(np.count_nonzero(_augmented_log(ev_sample.aux, log_c + ll_prior) <= 0.0))
    if hits < params.min_hits:
        res = _h1_fallback(problem, params, seed + 1)(log_c, n_ss)
        p_h, cov_h = res.p_f, res.cov
    else:
        p_h = hits / ev_sample.aux.size
        cov_h = math.sqrt((1 - p_h) / (p_h * ev_sample.aux.size))
    return ss.p_f / p_h, float(math.hypot(ss.cov, cov_h))
