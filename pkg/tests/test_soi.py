from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from settlesense.errors import ContractError
from settlesense.scenario import Scenario
from settlesense.soi import PriorCache, SoiParams, midpoints, soi_at, soi_from_curve
from settlesense.updating import UpdateParams

SMALL = UpdateParams(n_ss_initial=2000, max_outer_iterations=1, n_evidence=50_000, reciprocal_sim_n=50_000)


def test_midpoints_cover_band():
    z = midpoints(SoiParams())
    assert z.size == 20
    assert z[0] == pytest.approx(5.25) and z[-1] == pytest.approx(14.75)
    assert np.allclose(np.diff(z), 0.5)


def test_constant_curve():
    soi, noise = soi_from_curve(np.full(20, 0.2))
    assert soi == pytest.approx(0.2) and noise == 0.0


@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(5, 40))
def test_midpoint_rule_exact_for_affine_curves(a, b, n):
    p = SoiParams(n_dis=n)
    z = midpoints(p)
    soi, _ = soi_from_curve(a + b * z)
    assert soi == pytest.approx(a + b * 0.5 * (p.z_lob + p.z_upb), abs=1e-12)


def test_noise_combines_shared_and_independent_parts():
    n = 10
    soi, noise = soi_from_curve(np.zeros(n), d_pf=np.full(n, 2.0), cov_pf=np.full(n, 0.1),
                                sd_rest=np.full(n, 0.3))
    assert noise == pytest.approx(0.2**2 + n * 0.09 / n**2)


def test_soi_params_validation():
    with pytest.raises(ContractError):
        SoiParams(z_lob=5, z_upb=5)
    with pytest.raises(ContractError):
        SoiParams(n_dis=3)


def test_soi_at_case_study_small_budget():
    sc = Scenario()
    cache = PriorCache(sc, SMALL, seed=0)
    est = soi_at((15.0, 15.0), sc, SoiParams(n_dis=5), SMALL, seed=0, cache=cache)
    assert est.location == (15.0, 15.0, 0.0)
    assert len(est.per_z) == 5
    assert est.soi == pytest.approx(np.mean(est.r_up_values))
    assert est.soi > 0 and est.noise_var > 0
    assert all(p.p_f == est.per_z[0].p_f for p in est.per_z)  # one shared prior run
    again = soi_at((15.0, 15.0), sc, SoiParams(n_dis=5), SMALL, seed=0)
    assert again.soi == est.soi


def test_shared_cache_is_thread_safe():
    sc = Scenario()
    locs = [(12.0, 14.0), (15.0, 15.0), (18.0, 12.0)]
    serial_cache = PriorCache(sc, SMALL, seed=1)
    serial = [soi_at(l, sc, SoiParams(n_dis=5), SMALL, 1, serial_cache).soi for l in locs]
    cache = PriorCache(sc, SMALL, seed=1)
    with ThreadPoolExecutor(3) as pool:
        par = list(pool.map(lambda l: soi_at(l, sc, SoiParams(n_dis=5), SMALL, 1, cache).soi, locs))
    assert serial == par
