"""Marginal distributions and the map between physical and standard-normal space.

Three marginal kinds are supported, each parameterised by its mean and standard
deviation (that is how the case-study inputs are tabulated):

* ``normal``
* ``lognormal`` -- exact moment matching of the log-scale parameters
* ``scaled_beta`` -- a beta law stretched onto ``[lower, upper]``

All sampling and MCMC in the package runs in independent standard-normal
space; :meth:`RandomModel.to_physical` is the isoprobabilistic map back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .errors import ContractError, DomainError

KINDS = ("normal", "lognormal", "scaled_beta")


@dataclass(frozen=True)
class RandomVariable:
    """A moment-parameterised marginal distribution.

    Parameters
    ----------
    kind : {'normal', 'lognormal', 'scaled_beta'}
    mean, std : float
        Target moments in the variable's physical units.
    support : (float, float), optional
        Required for ``scaled_beta``; ignored otherwise.
    name : str
        Used in error messages.
    """

    kind: str
    mean: float
    std: float
    support: Optional[tuple] = None
    name: str = "X"
    _frozen: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"{self.name}: unknown distribution kind {self.kind!r}")
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std <= 0:
            raise ContractError(f"{self.name}: std must be positive and finite (got {self.std})")
        if self.kind == "normal":
            dist = stats.norm(loc=self.mean, scale=self.std)
        elif self.kind == "lognormal":
            if self.mean <= 0:
                raise ContractError(f"{self.name}: lognormal mean must be positive (got {self.mean})")
            mu, sig = lognormal_parameters(self.mean, self.std)
            dist = stats.lognorm(s=sig, scale=math.exp(mu))
        else:
            if self.support is None:
                raise ContractError(f"{self.name}: scaled_beta requires a support (lower, upper)")
            lo, hi = (float(v) for v in self.support)
            object.__setattr__(self, "support", (lo, hi))
            if not lo < self.mean < hi:
                raise ContractError(
                    f"{self.name}: scaled_beta mean {self.mean} must lie inside ({lo}, {hi})"
                )
            if self.std**2 >= (self.mean - lo) * (hi - self.mean):
                raise ContractError(
                    f"{self.name}: std {self.std} too large for support ({lo}, {hi})"
                )
            a, b = beta_parameters(self.mean, self.std, lo, hi)
            dist = stats.beta(a, b, loc=lo, scale=hi - lo)
        object.__setattr__(self, "_frozen", dist)

    # -- shape parameters -------------------------------------------------
    @property
    def shape_parameters(self) -> tuple:
        """(mu_ln, sigma_ln) for lognormal, (alpha, beta) for scaled_beta, (mean, std) for normal."""
        if self.kind == "lognormal":
            return lognormal_parameters(self.mean, self.std)
        if self.kind == "scaled_beta":
            return beta_parameters(self.mean, self.std, *self.support)
        return (self.mean, self.std)

    @property
    def bounds(self) -> tuple:
        if self.kind == "normal":
            return (-math.inf, math.inf)
        if self.kind == "lognormal":
            return (0.0, math.inf)
        return self.support

    def _check_support(self, x):
        lo, hi = self.bounds
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: non-finite input")
        if self.kind == "lognormal" and np.any(x <= lo):
            raise DomainError(f"{self.name}: value must be > {lo} (lognormal lower bound)")
        if self.kind == "scaled_beta" and (np.any(x < lo) or np.any(x > hi)):
            raise DomainError(f"{self.name}: value outside support [{lo}, {hi}]")
        return x

    # -- evaluation -------------------------------------------------------
    def pdf(self, x):
        return self._frozen.pdf(self._check_support(x))

    def cdf(self, x):
        return self._frozen.cdf(self._check_support(x))

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(~((q > 0) & (q < 1))):
            raise DomainError(f"{self.name}: quantile level must lie in (0, 1)")
        return self._frozen.ppf(q)

    def to_standard_normal(self, x):
        x = self._check_support(x)
        if self.kind == "normal":
            return (x - self.mean) / self.std
        if self.kind == "lognormal":
            mu, sig = self.shape_parameters
            return (np.log(x) - mu) / sig
        # work in whichever tail keeps precision
        lower = -special.ndtri(self._frozen.sf(x))
        upper = special.ndtri(self._frozen.cdf(x))
        return np.where(x > self.mean, lower, upper)

    def from_standard_normal(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise DomainError(f"{self.name}: non-finite standard-normal input")
        if self.kind == "normal":
            return self.mean + self.std * u
        if self.kind == "lognormal":
            mu, sig = self.shape_parameters
            return np.exp(mu + sig * u)
        hi = self._frozen.isf(special.ndtr(-u))
        lo = self._frozen.ppf(special.ndtr(u))
        return np.where(u > 0, hi, lo)


def lognormal_parameters(mean: float, std: float) -> tuple:
    """Log-scale (mu, sigma) reproducing the given arithmetic mean and std."""
    var_ln = math.log1p((std / mean) ** 2)
    return math.log(mean) - 0.5 * var_ln, math.sqrt(var_ln)


def beta_parameters(mean: float, std: float, lower: float, upper: float) -> tuple:
    """Beta shape parameters for a beta law on ``[lower, upper]`` with given moments."""
    width = upper - lower
    m = (mean - lower) / width
    v = (std / width) ** 2
    common = m * (1.0 - m) / v - 1.0
    return m * common, (1.0 - m) * common


def evaluate(rv: RandomVariable, x, which: str):
    """Density, CDF or quantile of ``rv`` at ``x`` (``which`` in pdf/cdf/quantile)."""
    if which == "pdf":
        return rv.pdf(x)
    if which == "cdf":
        return rv.cdf(x)
    if which == "quantile":
        return rv.ppf(x)
    raise ContractError(f"unknown evaluation {which!r}")


def transform(rv: RandomVariable, value, direction: str):
    if direction == "to_standard_normal":
        return rv.to_standard_normal(value)
    if direction == "from_standard_normal":
        return rv.from_standard_normal(value)
    raise ContractError(f"unknown direction {direction!r}")


# Position of each variable in the realization vector. The limit-state code
# indexes by these constants, so the order is part of the contract.
VARIABLE_ORDER = (
    "V_L",
    "K",
    "E_over_G",
    "E_br_sag",
    "E_br_hog1",
    "E_br_hog2",
    "E_dr_sag",
    "E_dr_hog1",
    "E_dr_hog2",
)
IDX = {name: i for i, name in enumerate(VARIABLE_ORDER)}


@dataclass(frozen=True)
class RandomModel:
    """Independent random vector with a fixed, documented variable order."""

    variables: tuple

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate variable names in {names}")
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    @property
    def dim(self) -> int:
        return len(self.variables)

    def __getitem__(self, name) -> RandomVariable:
        return self.variables[self.names.index(name)]

    def to_physical(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        for j, rv in enumerate(self.variables):
            out[:, j] = rv.from_standard_normal(u[:, j])
        return out

    def to_standard(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for j, rv in enumerate(self.variables):
            out[:, j] = rv.to_standard_normal(x[:, j])
        return out

    def means(self) -> np.ndarray:
        return np.array([v.mean for v in self.variables])


def default_random_model(eg_support: Sequence[float] = (2.0, 3.0)) -> RandomModel:
    """The nine case-study inputs (V_L in percent)."""
    err = dict(kind="lognormal", mean=1.0, std=0.05)
    return RandomModel(
        (
            RandomVariable("lognormal", 0.4, 0.16, name="V_L"),
            RandomVariable("lognormal", 0.3, 0.06, name="K"),
            RandomVariable("scaled_beta", 2.5, 0.045, support=tuple(eg_support), name="E_over_G"),
            *(RandomVariable(name=n, **err) for n in VARIABLE_ORDER[3:]),
        )
    )


def sample(model: RandomModel, n: int, rng: np.random.Generator):
    """Draw ``n`` points; returns ``(u, x)`` in standard-normal and physical space."""
    if n < 1:
        raise ContractError("n must be >= 1")
    u = rng.standard_normal((n, model.dim))
    return u, model.to_physical(u)
