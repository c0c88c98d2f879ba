import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from settlesense import ground
from settlesense.errors import ContractError, GeometryError
from settlesense.ground import TunnelGeometry

FIG = TunnelGeometry(d=12.0, z0=23.0, y_s=0.0, delta=0.3)
VL, K = 0.005, 0.5


def smax_oracle(vl, k, d=12.0, h=23.0):
    # trough volume per metre = sqrt(2 pi) i S_max = V_L pi d^2 / 4
    return vl * math.pi * d * d / 4.0 / (math.sqrt(2.0 * math.pi) * k * h)


def test_s_max_fig_parameters():
    assert ground.s_max(FIG, VL, K) == pytest.approx(smax_oracle(VL, K), rel=1e-12)
    assert ground.s_max(FIG, VL, K) == pytest.approx(0.019617, abs=5e-7)


def test_s_max_scaling():
    base = ground.s_max(FIG, VL, K)
    assert ground.s_max(FIG, 2 * VL, K) == pytest.approx(2 * base, rel=1e-14)
    assert ground.s_max(FIG, VL, 2 * K) == pytest.approx(base / 2, rel=1e-14)


def test_y_shift():
    assert ground.y_shift(FIG, 0.5) == pytest.approx(6.0306, abs=1e-4)
    assert ground.y_shift(FIG, 0.3) == pytest.approx(3.6184, abs=1e-4)
    assert ground.y_shift(TunnelGeometry(delta=0.5), 0.5) == pytest.approx(0.0, abs=1e-14)


def test_settlement_limits():
    smax_mm = 1000 * smax_oracle(VL, K)
    assert ground.settlement(FIG, 0.0, 1000.0, 0.0, VL, K) == pytest.approx(-smax_mm, rel=1e-12)
    assert ground.settlement(FIG, 0.0, FIG.y_s, 0.0, VL, K) == pytest.approx(-0.3 * smax_mm, rel=1e-12)
    assert abs(ground.settlement(FIG, 500.0, 30.0, 0.0, VL, K)) < 1e-300


def test_fig4_profile_shape():
    xs = np.linspace(0, 30, 61)
    s = ground.settlement_magnitude(FIG, xs, 30.0, 0.0, VL, K)
    assert np.all(np.diff(s) <= 0)
    gx, gy = np.meshgrid(np.linspace(-30, 30, 61), np.linspace(-30, 30, 61), indexing="ij")
    grid = ground.settlement_magnitude(FIG, gx, gy, 0.0, VL, K)
    i, j = np.unravel_index(np.argmax(grid), grid.shape)
    assert (gx[i, j], gy[i, j]) == (0.0, 30.0)


def test_displacement_parity():
    ux, uy = ground.displacements(FIG, 0.0, 10.0, 0.0, VL, K)
    assert ux == 0.0
    a = ground.displacements(FIG, 7.0, 12.0, 0.0, VL, K)
    b = ground.displacements(FIG, -7.0, 12.0, 0.0, VL, K)
    assert a[0] == pytest.approx(-b[0], rel=1e-14)
    assert a[1] == pytest.approx(b[1], rel=1e-14)
    ux, _ = ground.displacements(FIG, 5.0, 30.0, 0.0, VL, K)
    assert ux == pytest.approx(5.0 / 23.0 * ground.settlement(FIG, 5.0, 30.0, 0.0, VL, K), rel=1e-14)


def test_strains_on_axis():
    exx, _, exy = ground.ground_strains(FIG, 0.0, 30.0, 0.0, VL, K)
    s = ground.settlement(FIG, 0.0, 30.0, 0.0, VL, K)
    assert exx == pytest.approx(s / 1000.0 / 23.0, rel=1e-12)
    assert exx < 0
    assert exy == 0.0


def fd_strains(geom, x, y, z, vl, k, h=1e-4):
    def u(xx, yy):
        ux, uy = ground.displacements(geom, xx, yy, z, vl, k)
        return ux / 1000.0, uy / 1000.0

    dux_dx = (u(x + h, y)[0] - u(x - h, y)[0]) / (2 * h)
    duy_dy = (u(x, y + h)[1] - u(x, y - h)[1]) / (2 * h)
    dux_dy = (u(x, y + h)[0] - u(x, y - h)[0]) / (2 * h)
    duy_dx = (u(x + h, y)[1] - u(x - h, y)[1]) / (2 * h)
    return dux_dx, duy_dy, 0.5 * (dux_dy + duy_dx)


@pytest.mark.parametrize("y_f", [math.inf, 80.0])
def test_strains_match_finite_differences(y_f):
    geom = TunnelGeometry(y_f=y_f)
    rng = np.random.default_rng(3)
    x = rng.uniform(-40, 40, 100)
    y = rng.uniform(-40, 60, 100)
    z = rng.uniform(-5, 5, 100)
    an = ground.ground_strains(geom, x, y, z, VL, K)
    fd = fd_strains(geom, x, y, z, VL, K)
    for a, f in zip(an, fd):
        scale = np.maximum(np.abs(a), 1e-9)
        assert np.max(np.abs(a - f) / scale) < 1e-5


@given(st.floats(-50, 50), st.floats(-50, 80), st.floats(0.001, 0.02), st.floats(0.2, 0.8))
def test_settlement_bounded_by_s_max(x, y, vl, k):
    s = ground.settlement_magnitude(FIG, x, y, 0.0, vl, k)
    assert 0.0 <= s <= 1000.0 * ground.s_max(FIG, vl, k) * (1 + 1e-12)


@given(st.floats(-50, 50), st.floats(-50, 80))
def test_settlement_even_in_x(x, y):
    a = ground.settlement(FIG, x, y, 0.0, VL, K)
    b = ground.settlement(FIG, -x, y, 0.0, VL, K)
    assert a == pytest.approx(b, rel=1e-13, abs=1e-300)


def test_finite_portal_reduces_settlement():
    far = ground.settlement_magnitude(FIG, 0.0, 40.0, 0.0, VL, K)
    near = ground.settlement_magnitude(TunnelGeometry(y_f=45.0), 0.0, 40.0, 0.0, VL, K)
    assert near < far


def test_geometry_errors():
    with pytest.raises(GeometryError):
        TunnelGeometry(z0=5.0)
    with pytest.raises(GeometryError):
        ground.settlement(FIG, 0.0, 0.0, 30.0, VL, K)
    with pytest.raises(GeometryError):
        TunnelGeometry(y_s=10.0, y_f=5.0)
    with pytest.raises(ContractError):
        ground.settlement(FIG, 0.0, 0.0, 0.0, -0.01, K)
