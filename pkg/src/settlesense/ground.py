"""Closed-form green-field ground movements above an advancing tunnel.

Coordinates: ``x`` transverse to the tunnel axis, ``y`` along it (pointing back
from the face towards the portal), ``z`` elevation with the ground surface at
``z = 0``. Geometry is in metres; settlements and horizontal displacements are
returned in millimetres; strains are dimensionless.

All functions broadcast over ``x, y, z, v_l, k``. ``v_l`` is the volume-loss
*fraction* (0.005 for 0.5 %).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import ContractError, GeometryError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TunnelGeometry:
    """Tunnel diameter ``d``, axis depth ``z0``, face ``y_s``, portal ``y_f`` and face ratio ``delta``.

    ``y_f = inf`` means the tunnel started infinitely far back; the portal terms
    are then dropped exactly rather than evaluated at a large finite value.
    """

    d: float = 12.0
    z0: float = 23.0
    y_s: float = 0.0
    y_f: float = math.inf
    delta: float = 0.3

    def __post_init__(self):
        if self.d <= 0:
            raise GeometryError(f"tunnel diameter must be positive (got {self.d})")
        if self.z0 <= self.d / 2:
            raise GeometryError(f"axis depth z0={self.z0} must exceed d/2={self.d / 2}")
        if self.y_f < self.y_s:
            raise GeometryError(f"portal y_f={self.y_f} must not lie ahead of the face y_s={self.y_s}")
        if not 0.0 < self.delta < 1.0:
            raise GeometryError(f"delta must lie in (0, 1) (got {self.delta})")

    @property
    def finite_portal(self) -> bool:
        return math.isfinite(self.y_f)


class GroundPoint(NamedTuple):
    x: float
    y: float
    z: float = 0.0


def _depth(geom, z):
    h = geom.z0 - np.asarray(z, dtype=float)
    if np.any(h <= 0):
        raise GeometryError("point must lie above the tunnel axis (z0 - z > 0)")
    return h


def _check_vk(v_l, k):
    if np.any(np.asarray(v_l) <= 0) or np.any(np.asarray(k) <= 0):
        raise ContractError("volume loss and trough width must be positive")


def s_max(geom: TunnelGeometry, v_l, k, z=0.0):
    """Magnitude of the far-field maximum settlement, in metres."""
    _check_vk(v_l, k)
    h = _depth(geom, z)
    return v_l * math.pi * geom.d**2 / (_SQRT_2PI * k * h * 4.0)


def y_shift(geom: TunnelGeometry, k):
    """Offset of the longitudinal profile relative to the face (m)."""
    return -special.ndtri(geom.delta) * k * geom.z0


def _terms(geom, x, y, z, v_l, k):
    _check_vk(v_l, k)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = _depth(geom, z)
    width = k * h
    a = geom.y_s + y_shift(geom, k)
    return x, y, h, width, a


def settlement(geom: TunnelGeometry, x, y, z, v_l, k):
    """Signed vertical settlement in mm (negative = downward)."""
    x, y, h, width, a = _terms(geom, x, y, z, v_l, k)
    bracket = special.ndtr((y - a) / width)
    if geom.finite_portal:
        bracket = bracket - special.ndtr((y - geom.y_f) / width)
    smax = v_l * math.pi * geom.d**2 / (_SQRT_2PI * k * h * 4.0)
    return -1000.0 * smax * np.exp(-(x**2) / (2.0 * width**2)) * bracket


def settlement_magnitude(geom: TunnelGeometry, x, y, z, v_l, k):
    """Settlement as a positive magnitude in mm (the convention measurements use)."""
    return -settlement(geom, x, y, z, v_l, k)


def displacements(geom: TunnelGeometry, x, y, z, v_l, k):
    """Horizontal displacements ``(U_x, U_y)`` in mm."""
    x, y, h, width, a = _terms(geom, x, y, z, v_l, k)
    s = settlement(geom, x, y, z, v_l, k)
    ux = x / h * s
    amp = 1000.0 * v_l * geom.d**2 / (8.0 * h)
    uy = np.exp((-((y - a) ** 2) - x**2) / (2.0 * width**2))
    if geom.finite_portal:
        uy = uy - np.exp((-((y - geom.y_f) ** 2) - x**2) / (2.0 * width**2))
    return ux, amp * uy


def ground_strains(geom: TunnelGeometry, x, y, z, v_l, k):
    """Horizontal ground strains ``(eps_xx, eps_yy, eps_xy)``.

    Tension is positive. Derivatives are the closed forms of the displacement
    field above; ``U`` in mm is converted back to metres.
    """
    x, y, h, width, a = _terms(geom, x, y, z, v_l, k)
    w2 = width**2
    s_m = settlement(geom, x, y, z, v_l, k) / 1000.0
    eps_xx = s_m / h * (1.0 - x**2 / w2)

    amp = v_l * geom.d**2 / (8.0 * h)
    e1 = np.exp((-((y - a) ** 2) - x**2) / (2.0 * w2))
    dyy = -(y - a) / w2 * e1
    diff = e1
    if geom.finite_portal:
        e2 = np.exp((-((y - geom.y_f) ** 2) - x**2) / (2.0 * w2))
        dyy = dyy + (y - geom.y_f) / w2 * e2
        diff = e1 - e2
    eps_yy = amp * dyy

    smax = v_l * math.pi * geom.d**2 / (_SQRT_2PI * k * h * 4.0)
    dens = np.exp(-0.5 * ((y - a) / width) ** 2)
    if geom.finite_portal:
        dens = dens - np.exp(-0.5 * ((y - geom.y_f) / width) ** 2)
    dux_dy = x / h * (-smax) * dens / (_SQRT_2PI * width) * np.exp(-(x**2) / (2.0 * w2))
    duy_dx = amp * (-x / w2) * diff
    eps_xy = 0.5 * (dux_dy + duy_dx)
    return eps_xx, eps_yy, eps_xy
