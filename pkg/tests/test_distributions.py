import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from settlesense.distributions import (
    RandomVariable,
    beta_parameters,
    default_random_model,
    evaluate,
    lognormal_parameters,
    sample,
    transform,
)
from settlesense.errors import ContractError, DomainError
from settlesense.rng import stream


def test_standard_normal_quantiles():
    rv = RandomVariable("normal", 0.0, 1.0)
    assert evaluate(rv, 0.5, "quantile") == pytest.approx(0.0, abs=1e-15)
    # Acklam-free oracle: bisection on the error function
    lo, hi = -5.0, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2)) < 0.3:
            lo = mid
        else:
            hi = mid
    assert evaluate(rv, 0.3, "quantile") == pytest.approx(lo, abs=1e-12)
    assert evaluate(rv, 0.3, "quantile") == pytest.approx(-0.524401, abs=1e-6)


def test_lognormal_log_scale_parameters():
    mu, sig = lognormal_parameters(0.3, 0.06)
    # closed form: median m / sqrt(1 + cv^2), sigma^2 = ln(1 + cv^2)
    assert mu == pytest.approx(math.log(0.3 / math.sqrt(1.04)), abs=1e-14)
    assert mu == pytest.approx(-1.2235832, abs=1e-7)
    assert sig == pytest.approx(0.1980422, abs=1e-7)
    rv = RandomVariable("lognormal", 0.3, 0.06)
    assert transform(rv, 0.0, "from_standard_normal") == pytest.approx(0.2941742, abs=1e-7)


def test_scaled_beta_symmetric_shape():
    a, b = beta_parameters(2.5, 0.045, 2.0, 3.0)
    assert a == pytest.approx(b)
    # symmetric beta on [0, 1] has variance 1 / (4 (2 a + 1))
    assert 1.0 / (4.0 * (2.0 * a + 1.0)) == pytest.approx(0.045**2, rel=1e-12)
    assert a == pytest.approx(61.2284, abs=1e-3)


@pytest.mark.parametrize("kind,mean,std,support", [
    ("normal", -2.0, 0.7, None),
    ("lognormal", 0.4, 0.16, None),
    ("lognormal", 1.0, 0.05, None),
    ("scaled_beta", 2.5, 0.045, (2.0, 3.0)),
    ("scaled_beta", 2.2, 0.1, (2.0, 3.0)),
])
def test_moment_round_trip(kind, mean, std, support):
    rv = RandomVariable(kind, mean, std, support)
    m, v = rv._frozen.stats(moments="mv")
    assert float(m) == pytest.approx(mean, rel=1e-10)
    assert math.sqrt(float(v)) == pytest.approx(std, rel=1e-10)


def test_invalid_parameters_rejected():
    with pytest.raises(ContractError):
        RandomVariable("normal", 0.0, -1.0)
    with pytest.raises(ContractError):
        RandomVariable("lognormal", -1.0, 0.1)
    with pytest.raises(ContractError):
        RandomVariable("scaled_beta", 2.5, 0.6, (2.0, 3.0))
    with pytest.raises(ContractError):
        RandomVariable("weibull", 1.0, 0.1)


def test_outside_support_is_domain_error():
    rv = RandomVariable("scaled_beta", 2.5, 0.045, (2.0, 3.0))
    with pytest.raises(DomainError):
        rv.to_standard_normal(3.5)
    with pytest.raises(DomainError):
        RandomVariable("lognormal", 0.3, 0.06).to_standard_normal(-0.1)


def test_identity_on_standard_normal():
    rv = RandomVariable("normal", 0.0, 1.0)
    assert transform(rv, 1.5, "to_standard_normal") == pytest.approx(1.5, abs=1e-14)


@given(st.floats(-7.5, 7.5), st.sampled_from(["normal", "lognormal", "scaled_beta"]))
def test_transform_round_trip(u, kind):
    rv = {
        "normal": RandomVariable("normal", 1.0, 2.0),
        "lognormal": RandomVariable("lognormal", 0.4, 0.16),
        "scaled_beta": RandomVariable("scaled_beta", 2.5, 0.045, (2.0, 3.0)),
    }[kind]
    x = rv.from_standard_normal(u)
    assert rv.to_standard_normal(x) == pytest.approx(u, abs=1e-7)


@given(st.floats(-6, 6), st.floats(-6, 6))
def test_transform_monotone(a, b):
    rv = RandomVariable("lognormal", 0.3, 0.06)
    if a < b:
        assert rv.from_standard_normal(a) <= rv.from_standard_normal(b)


def test_sampling_is_seeded_and_matches_moments():
    model = default_random_model()
    u1, x1 = sample(model, 1000, stream(5, "t"))
    u2, x2 = sample(model, 1000, stream(5, "t"))
    assert np.array_equal(x1, x2)
    _, x = sample(model, 100_000, stream(0, "moments"))
    assert abs(x[:, 1].mean() - 0.3) < 3 * 0.06 / math.sqrt(1e5)
    assert x[:, 0].std() == pytest.approx(0.16, rel=0.05)
    assert np.all((x[:, 2] > 2.0) & (x[:, 2] < 3.0))
