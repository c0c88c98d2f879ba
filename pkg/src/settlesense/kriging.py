"""Kriging (Gaussian-process regression) with homoscedastic noise.

Model::

    y(l) = f(l)^T beta + Z(l) + eps,   Cov[Z] = sigma2 R,   Var[eps] = noise_var

with the Gaussian kernel ``R_ij = exp(-sum_k theta_k (l_ik - l_jk)^2)``. With
``tau = sigma2 / (sigma2 + noise_var)`` the observation covariance is
``(sigma2 + noise_var) * Rt`` where ``Rt = tau R + (1 - tau) I`` and the
cross-correlation to a query point is ``rt = tau r``. ``beta`` is the GLS
estimate under ``Rt``.

Inputs are mapped to the unit box and responses divided by their standard
deviation before fitting, so ``theta`` refers to unit-box coordinates.
Hyperparameters ``(theta, sigma2, noise_var)`` maximise the Gaussian
log-likelihood (multi-start L-BFGS-B on log scale).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize, stats

from .errors import ContractError, KrigingError
from .rng import stream

log = logging.getLogger(__name__)

TRENDS = ("ordinary", "linear", "quadratic")
THETA_BOUNDS = (1e-3, 1e3)
_COND_LIMIT = 1e12


def trend_basis(z, trend):
    """Regression basis at unit-box points ``z`` of shape ``(n, d)``."""
    n, d = z.shape
    cols = [np.ones(n)]
    if trend in ("linear", "quadratic"):
        cols += [z[:, k] for k in range(d)]
    if trend == "quadratic":
        for i in range(d):
            for j in range(i, d):
                cols.append(z[:, i] * z[:, j])
    return np.column_stack(cols)


def correlation(a, b, theta):
    d2 = (a[:, None, :] - b[None, :, :]) ** 2
    return np.exp(-np.tensordot(d2, theta, axes=([2], [0])))


@dataclass
class KrigingModel:
    points: np.ndarray
    responses: np.ndarray
    trend: str
    theta: np.ndarray  # unit-box coordinates
    sigma2: float  # process variance, response units squared
    noise_var: float
    beta: np.ndarray
    lower: np.ndarray
    span: np.ndarray
    y_scale: float
    jitter: float = 0.0
    neg_log_likelihood: float = float("nan")
    n_clamped: int = 0
    _chol: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)
    _ginv: np.ndarray = field(default=None, repr=False)
    _F: np.ndarray = field(default=None, repr=False)

    @property
    def tau(self) -> float:
        return self.sigma2 / (self.sigma2 + self.noise_var)

    @property
    def n_des(self) -> int:
        return self.points.shape[0]

    def scale(self, pts):
        return (np.atleast_2d(np.asarray(pts, dtype=float)) - self.lower) / self.span


def _check_design(points, responses, trend):
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] == 1 and x.shape[1] > 1 and np.ndim(points) == 1:
        x = x.T
    y = np.asarray(responses, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ContractError("points and responses differ in length")
    if trend not in TRENDS:
        raise ContractError(f"unknown trend {trend!r}")
    n, d = x.shape
    if n < d + 2:
        raise ContractError(f"need at least dim + 2 = {d + 2} design points (got {n})")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ContractError("design points and responses must be finite")
    if np.unique(x, axis=0).shape[0] < n:
        raise KrigingError("duplicate design points")
    return x, y


def _factor(z, theta, tau, jitter):
    R = correlation(z, z, theta)
    Rt = tau * R + (1.0 - tau) * np.eye(len(z))
    for extra in (0.0, 1e-12, 1e-10, 1e-8):
        j = max(jitter, extra)
        A = Rt + j * np.eye(len(z))
        try:
            c = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        d = np.diag(c[0])
        if (d.max() / d.min()) ** 2 < _COND_LIMIT:
            return c, j
    raise KrigingError("correlation matrix is numerically singular even with jitter")


def _gls(c, F, y):
    RiF = linalg.cho_solve(c, F, check_finite=False)
    G = F.T @ RiF
    try:
        ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise KrigingError("regression basis is degenerate on the design") from exc
    beta = ginv @ (RiF.T @ y)
    resid = y - F @ beta
    alpha = linalg.cho_solve(c, resid, check_finite=False)
    return beta, alpha, resid, ginv


def _nll(params, z, ys, F, d, noise_floor):
    theta = np.exp(params[:d])
    s2 = math.exp(params[d])
    n2 = max(math.exp(params[d + 1]), noise_floor)
    tot = s2 + n2
    try:
        c, _ = _factor(z, theta, s2 / tot, 0.0)
    except KrigingError:
        return 1e10
    _, _, resid, _ = _gls(c, F, ys)
    quad = resid @ linalg.cho_solve(c, resid, check_finite=False) / tot
    logdet = 2.0 * np.sum(np.log(np.diag(c[0]))) + len(ys) * math.log(tot)
    return 0.5 * (logdet + quad + len(ys) * math.log(2 * math.pi))


def fit_kriging(points, responses, noise_hint=None, trend: str = "ordinary", seed: int = 0, *,
                theta=None, sigma2: Optional[float] = None, noise_var: Optional[float] = None,
                n_starts: int = 20, initial: Optional[KrigingModel] = None) -> KrigingModel:
    """Fit a noisy Kriging model.

    Parameters
    ----------
    points : (n, d) array
    responses : (n,) array
    noise_hint : float or array, optional
        Known noise variance(s) of the responses; their mean is the lower
        bound for the fitted ``noise_var``.
    trend : {'ordinary', 'linear', 'quadratic'}
    theta, sigma2, noise_var : optional
        Fix the hyperparameters instead of estimating them. ``theta`` is in
        unit-box coordinates; ``sigma2`` and ``noise_var`` in response units.
    n_starts : int
        Multi-start count for the likelihood search.
    initial : KrigingModel, optional
        A previous fit whose hyperparameters seed the first start.
    """
    x, y = _check_design(points, responses, trend)
    n, d = x.shape
    lower, upper = x.min(axis=0), x.max(axis=0)
    span = np.where(upper > lower, upper - lower, 1.0)
    z = (x - lower) / span
    y_scale = float(y.std()) or 1.0
    ys = y / y_scale
    F = trend_basis(z, trend)
    floor = 0.0
    if noise_hint is not None:
        floor = float(np.mean(noise_hint)) / y_scale**2
        if floor < 0:
            raise ContractError("noise_hint must be non-negative")

    if theta is not None:
        th = np.broadcast_to(np.asarray(theta, dtype=float), (d,)).copy()
        s2 = (sigma2 if sigma2 is not None else 1.0) / y_scale**2
        n2 = max((noise_var or 0.0) / y_scale**2, floor)
        nll = float("nan")
    else:
        lo_t, hi_t = math.log(THETA_BOUNDS[0]), math.log(THETA_BOUNDS[1])
        # responses are scaled to unit variance; a floor above that means the
        # data are mostly noise, so the upper bound stretches to cover it
        bounds = [(lo_t, hi_t)] * d + [(math.log(1e-8), math.log(1e4)),
                                       (math.log(max(floor, 1e-10)), math.log(max(1e2, 10.0 * floor)))]
        rng = stream(seed, "kriging")
        best = None
        for i in range(n_starts):
            start = np.concatenate([
                rng.uniform(math.log(0.1), math.log(100.0), d),
                [math.log(rng.uniform(0.3, 3.0))],
                [math.log(max(floor, 1e-10) * rng.uniform(1.0, 10.0)) if i % 2 else math.log(max(floor, 1e-6))],
            ])
            if i == 0 and initial is not None:
                start = np.concatenate([
                    np.log(initial.theta),
                    [math.log(initial.sigma2 / y_scale**2), math.log(max(initial.noise_var / y_scale**2, 1e-10))],
                ])
            start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
            res = optimize.minimize(_nll, start, args=(z, ys, F, d, floor), method="L-BFGS-B",
                                    bounds=bounds, options=dict(ftol=1e-8))
            if best is None or res.fun < best.fun - 1e-12:
                best = res
        th = np.exp(best.x[:d])
        s2 = math.exp(best.x[d])
        n2 = max(math.exp(best.x[d + 1]), floor)
        nll = float(best.fun)

    tau = s2 / (s2 + n2) if s2 + n2 > 0 else 1.0
    c, jit = _factor(z, th, tau, 0.0)
    beta, alpha, _, ginv = _gls(c, F, ys)
    return KrigingModel(
        points=x, responses=y, trend=trend, theta=th, sigma2=s2 * y_scale**2, noise_var=n2 * y_scale**2,
        beta=beta * y_scale, lower=lower, span=span, y_scale=y_scale, jitter=jit, neg_log_likelihood=nll,
        _chol=c, _alpha=alpha, _ginv=ginv, _F=F,
    )


def predict(model: KrigingModel, query, noisy: bool = True):
    """Predictive mean and variance at ``query`` points.

    ``noisy=True`` gives the variance of a new noisy observation; ``False``
    the variance of the underlying noise-free response.
    """
    q = model.scale(query)
    z = model.scale(model.points)
    tau = model.tau
    f = trend_basis(q, model.trend)
    rt = tau * correlation(q, z, model.theta)  # (m, n)
    mean = f @ model.beta + (rt @ model._alpha) * model.y_scale
    Rirt = linalg.cho_solve(model._chol, rt.T, check_finite=False)  # (n, m)
    u = model._F.T @ Rirt - f.T  # (p, m)
    gls = np.einsum("im,ij,jm->m", u, model._ginv, u)
    quad = np.einsum("mn,nm->m", rt, Rirt)
    base = 1.0 if noisy else tau
    tot = model.sigma2 + model.noise_var
    var = tot * (base + gls - quad)
    neg = var < 0
    if neg.any():
        model.n_clamped += int(neg.sum())
        var = np.where(neg, 0.0, var)
    return mean, var


def expected_improvement(mean, var, best):
    """EI for maximisation; ``sigma = 0`` gives ``max(mean - best, 0)``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    imp = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        zz = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
    ei = imp * stats.norm.cdf(zz) + sd * stats.norm.pdf(zz)
    return np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(imp, 0.0))
