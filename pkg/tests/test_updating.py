import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from settlesense.errors import ContractError, ConvergenceError, InstabilityError
from settlesense.rng import stream
from settlesense.scenario import Scenario
from settlesense.updating import (
    Measurement,
    UpdateParams,
    UpdatingProblem,
    augmented_lsf,
    cov_of_conditional,
    gaussian_log_likelihood,
    likelihood,
    product_variance,
    r_up,
    r_up_sensitivities,
    r_up_std,
    reciprocal_moments,
    scale_constant,
    update_reliability,
    update_via_joint,
)

P_F_TOY = norm.sf(2.0)
# posterior of X given m = 1 with unit error: N(1/2, 1/2)
P_FZ_TOY = norm.sf(1.5 / math.sqrt(0.5))
LOG_PEAK = -0.5 * math.log(2 * math.pi)


def toy_problem(m=1.0, flat=False):
    def loglik(u):
        if flat:
            return np.full(len(u), LOG_PEAK - 1.0)
        return gaussian_log_likelihood(m - u[:, 0], 1.0)

    return UpdatingProblem(1, lambda u: 2.0 - u[:, 0], loglik, (0,), LOG_PEAK)


FAST = UpdateParams(n_evidence=200_000, reciprocal_sim_n=200_000, cov_thr=0.1)


def test_closed_form_toy_targets():
    assert P_F_TOY == pytest.approx(0.02275, abs=1e-5)
    assert P_FZ_TOY == pytest.approx(0.01695, abs=1e-5)


def test_likelihood_at_zero_and_one_sigma():
    sc = Scenario()
    sig = sc.sigma_e
    assert sig == pytest.approx(math.sqrt(5.0))
    peak = 1.0 / (math.sqrt(2 * math.pi) * sig)
    assert peak == pytest.approx(0.178412, abs=1e-6)
    assert math.exp(gaussian_log_likelihood(0.0, sig)) == pytest.approx(peak, rel=1e-14)
    assert math.exp(gaussian_log_likelihood(sig, sig)) == pytest.approx(0.108212, abs=1e-6)
    assert math.exp(gaussian_log_likelihood(1e3, sig)) == 0.0


def test_case_study_likelihood_peaks_when_model_matches():
    from settlesense import ground

    sc = Scenario()
    meas = Measurement((15.0, 15.0), 10.0)
    s = float(ground.settlement_magnitude(sc.tunnel, 15.0, 15.0, 0.0, 0.005, 0.4))
    at = Measurement((15.0, 15.0), s)
    assert likelihood(0.5, 0.4, at, sc) == pytest.approx(1.0 / (math.sqrt(2 * math.pi) * at.sigma_e))
    assert likelihood(0.5, 0.4, meas, sc) < likelihood(0.5, 0.4, at, sc)


def test_scale_constant():
    assert scale_constant(Measurement((0, 0), 1.0)) == pytest.approx(5.60499, abs=1e-5)
    s = 1.0 / math.sqrt(2 * math.pi)
    m = Measurement((0, 0), 1.0, sigma_m=s / math.sqrt(2), sigma_f=s / math.sqrt(2))
    assert scale_constant(m) == pytest.approx(1.0, rel=1e-12)


def test_augmented_lsf_hit_rate():
    u = stream(0, "aux").standard_normal(100_000)
    rate = np.mean(augmented_lsf(u, 0.25) <= 0)
    assert abs(rate - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 1e5)
    assert np.all(augmented_lsf(u, 1.0) <= 0)
    assert not np.any(augmented_lsf(u, 0.0) <= 0)
    with pytest.raises(ContractError):
        augmented_lsf(u, 1.5)


def test_product_variance_identity():
    assert product_variance(2.0, 0.01, 3.0, 0.04) == pytest.approx(0.2504)


def test_reciprocal_moments_small_cov():
    e, v, kept = reciprocal_moments(0.01, 0.02, 200_000, seed=1)
    # second-order delta method for 1/P
    assert e == pytest.approx(100 * (1 + 0.02**2), rel=1e-3)
    assert math.sqrt(v) / e == pytest.approx(0.02, rel=0.05)
    assert kept == 200_000


def test_degenerate_evidence_leaves_joint_cov():
    cc = cov_of_conditional(0.01, 0.05, 0.2, 10_000, 0.1, 0.0)
    cov_zf = math.sqrt(0.8 / (0.2 * 10_000))
    assert cc.cov == pytest.approx(math.sqrt((1 + 0.05**2) * (1 + cov_zf**2) - 1), rel=1e-12)
    with pytest.raises(InstabilityError):
        cov_of_conditional(0.01, 0.05, 0.2, 10_000, 0.1, 0.25)


@pytest.mark.parametrize("rule", ["sample_max", "supremum"])
def test_conjugate_toy_decomposition(rule):
    params = UpdateParams(n_evidence=200_000, reciprocal_sim_n=200_000, scale_rule=rule)
    r = update_reliability(toy_problem(), params, seed=3, strict=False)
    assert abs(r.p_f - P_F_TOY) < 3 * r.cov_pf * r.p_f
    assert abs(r.p_f_given_z - P_FZ_TOY) < 3 * r.cov_pfz * r.p_f_given_z
    assert r.p_z == pytest.approx(r.p_h1 / r.c1)


def test_conjugate_toy_joint():
    p, cov = update_via_joint(toy_problem(), FAST, seed=2)
    assert abs(p - P_FZ_TOY) < 3 * cov * p


def test_flat_likelihood_leaves_prior():
    r = update_reliability(toy_problem(flat=True), FAST, seed=1, strict=False)
    assert abs(r.p_f_given_z - r.p_f) < 3 * r.cov_pfz * r.p_f
    assert r.r_up < 0.1
    p, cov = update_via_joint(toy_problem(flat=True), FAST, seed=1)
    assert abs(p - P_F_TOY) < 3 * cov * P_F_TOY


def test_scale_constant_cancels():
    # the posterior does not depend on how the likelihood is scaled
    def scaled(f):
        base = toy_problem()
        return UpdatingProblem(1, base.limit_state, lambda u: base.log_likelihood(u) + math.log(f), (0,),
                               LOG_PEAK + math.log(f))

    params = UpdateParams(n_evidence=200_000, reciprocal_sim_n=200_000, scale_rule="supremum")
    a = update_reliability(scaled(1.0), params, seed=0, strict=False)
    b = update_reliability(scaled(0.1), params, seed=0, strict=False)
    assert a.p_f_given_z == pytest.approx(b.p_f_given_z, rel=1e-12)


def test_predicted_cov_tracks_scatter():
    params = UpdateParams(n_ss_initial=2000, n_evidence=50_000, reciprocal_sim_n=50_000, max_outer_iterations=1)
    runs = [update_reliability(toy_problem(), params, seed=s, strict=False) for s in range(40)]
    est = np.array([r.p_f_given_z for r in runs])
    empirical = est.std(ddof=1) / est.mean()
    predicted = np.mean([r.cov_pfz for r in runs])
    assert 0.5 < predicted / empirical < 2.0


def test_strict_mode_raises_with_best_result():
    params = UpdateParams(n_ss_initial=1000, cov_thr=0.001, max_outer_iterations=2, n_evidence=20_000,
                          reciprocal_sim_n=20_000)
    with pytest.raises(ConvergenceError) as err:
        update_reliability(toy_problem(), params, seed=0)
    assert err.value.best.n_ss == 2000
    assert len(err.value.best.trace) == 2


def test_r_up_table_pairs():
    assert r_up(8.40e-3, 8.47e-2) == pytest.approx(0.425, abs=1e-3)
    oracle = abs(norm.isf(9.84e-3) / norm.isf(8.36e-3) - 1)
    assert r_up(8.36e-3, 9.84e-3) == pytest.approx(oracle, rel=1e-12)
    assert r_up(8.36e-3, 9.84e-3) == pytest.approx(0.026, abs=1e-3)
    assert r_up(0.01, 0.01) == 0.0
    with pytest.raises(ContractError):
        r_up(0.5, 0.2)
    with pytest.raises(ContractError):
        r_up(0.0, 0.2)


@given(st.floats(1e-6, 0.4), st.floats(1e-6, 0.999))
def test_r_up_sensitivities_match_finite_differences(p_f, p_fz):
    h = 1e-6
    d_pf, d_rest = r_up_sensitivities(p_f, p_fz)
    base = r_up(p_f, p_fz)
    if base < 1e-3 or p_fz * math.exp(h) >= 1:
        return
    num_rest = (r_up(p_f, p_fz * math.exp(h)) - r_up(p_f, p_fz * math.exp(-h))) / (2 * h)
    num_pf = (r_up(p_f * math.exp(h), min(p_fz * math.exp(h), 1 - 1e-15))
              - r_up(p_f * math.exp(-h), p_fz * math.exp(-h))) / (2 * h)
    assert d_rest == pytest.approx(num_rest, rel=1e-4, abs=1e-8)
    if p_fz * math.exp(h) < 1 - 1e-12:
        assert d_pf == pytest.approx(num_pf, rel=1e-4, abs=1e-8)
    assert r_up_std(p_f, p_fz, 0.0, 0.0) == 0.0


@given(st.floats(1e-6, 0.49), st.floats(1e-6, 0.999))
def test_r_up_non_negative(p_f, p_fz):
    assert r_up(p_f, p_fz) >= 0.0


def test_measurement_location_and_errors():
    m = Measurement((1.0, 2.0), 3.0)
    assert m.location == (1.0, 2.0, 0.0)
    with pytest.raises(ContractError):
        Measurement((0, 0), 1.0, sigma_m=0.0)
