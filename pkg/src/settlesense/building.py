"""Equivalent-beam response of a building wall to green-field settlement.

Pipeline for a batch of realizations::

    wall_profile -> partition_zones -> beam_strains / zone_horizontal_strain
                 -> combined_strains -> eps_max -> limit_state

Everything operates on arrays shaped ``(n_realizations, n_profile)`` so that
a subset-simulation level is a handful of numpy calls.

The realization vector follows :data:`settlesense.distributions.VARIABLE_ORDER`
with the volume loss in percent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from . import ground
from .distributions import IDX
from .errors import ContractError

log = logging.getLogger(__name__)

SAGGING, HOGGING = "sagging", "hogging"
# strain slots in the order the damage criterion lists them
SLOT_NAMES = ("br_sag", "dr_sag", "br_hog1", "dr_hog1", "br_hog2", "dr_hog2")
# (bending error, shear error) column per zone slot: sag, hog1, hog2
_ERROR_COLUMNS = (
    (IDX["E_br_sag"], IDX["E_dr_sag"]),
    (IDX["E_br_hog1"], IDX["E_dr_hog1"]),
    (IDX["E_br_hog2"], IDX["E_dr_hog2"]),
)
MIN_ZONE_POINTS = 3
BLOCK_ROWS = 8192


@dataclass(frozen=True)
class BuildingGeometry:
    """Straight wall of length ``l_build`` and height ``H``.

    The wall lies on the line through ``anchor`` with direction ``theta_r``
    (degrees, counterclockwise from the x-axis). Its reference end point sits
    ``d_orig`` metres from the anchor along that line and the wall extends a
    further ``l_build`` in the same direction. The default is a transverse
    wall from ``(12, 3.5)`` to ``(20, 3.5)``, just behind the initial face and
    outside the trough's inflection line.
    """

    l_build: float = 8.0
    d_orig: float = 12.0
    theta_r: float = 0.0
    H: float = 9.0
    n_profile: int = 201
    anchor: tuple = (0.0, 3.5)

    def __post_init__(self):
        if self.l_build <= 0 or self.H <= 0:
            raise ContractError("wall length and height must be positive")
        if self.n_profile < 51 or self.n_profile % 2 == 0:
            raise ContractError(f"n_profile must be odd and >= 51 (got {self.n_profile})")
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))

    @property
    def direction(self) -> np.ndarray:
        t = math.radians(self.theta_r)
        return np.array([math.cos(t), math.sin(t)])

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.anchor) + self.d_orig * self.direction

    @property
    def end(self) -> np.ndarray:
        return self.start + self.l_build * self.direction

    def points(self):
        """Arclength ``s`` and plan coordinates ``(x, y)`` of the profile points."""
        s = np.linspace(0.0, self.l_build, self.n_profile)
        xy = self.start[None, :] + s[:, None] * self.direction[None, :]
        return s, xy[:, 0], xy[:, 1]


class WallProfile(NamedTuple):
    s: np.ndarray  # (P,) arclength, m
    x: np.ndarray  # (P,)
    y: np.ndarray  # (P,)
    w: np.ndarray  # (n, P) settlement magnitude, mm


@dataclass(frozen=True)
class DeflectionZone:
    kind: str
    span: tuple  # half-open index interval [start, stop)
    l_ref: float
    delta_ref: float  # mm
    eps_h_zone: float = 0.0


class ZoneLayout(NamedTuple):
    """Zone slots for a batch: index ``0`` sagging, ``1`` first hogging, ``2`` second hogging.

    ``start``/``stop`` are ``(n, 3)`` integer arrays, ``-1`` where a slot is empty.
    ``order`` lists, per realization, the slots in wall order (``-1`` padded).
    """

    start: np.ndarray
    stop: np.ndarray
    order: np.ndarray


def _realization(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, IDX["V_L"]] / 100.0, x[:, IDX["K"]]


def wall_profile(scenario, realization) -> WallProfile:
    """Settlement magnitudes (mm) at ``n_profile`` equally spaced wall points."""
    v_l, k = _realization(realization)
    s, px, py = scenario.building.points()
    w = ground.settlement_magnitude(scenario.tunnel, px[None, :], py[None, :], 0.0, v_l[:, None], k[:, None])
    return WallProfile(s, px, py, w)


def _runs(signs):
    """Maximal runs of equal sign as ``[(value, start, stop), ...]``."""
    cut = np.flatnonzero(signs[1:] != signs[:-1]) + 1
    bounds = np.concatenate(([0], cut, [signs.size]))
    return [(bool(signs[a]), int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _merge_short(runs):
    runs = list(runs)
    while len(runs) > 1:
        lengths = [b - a for _, a, b in runs]
        j = int(np.argmin(lengths))
        if lengths[j] >= MIN_ZONE_POINTS:
            break
        if j == 0:
            nb = 1
        elif j == len(runs) - 1:
            nb = j - 1
        else:
            nb = j - 1 if lengths[j - 1] >= lengths[j + 1] else j + 1
        lo, hi = min(j, nb), max(j, nb)
        merged = (runs[nb][0], runs[lo][1], runs[hi][2])
        runs[lo : hi + 1] = [merged]
        # coalesce neighbours that now share a sign
        out = [runs[0]]
        for r in runs[1:]:
            if r[0] == out[-1][0]:
                out[-1] = (r[0], out[-1][1], r[2])
            else:
                out.append(r)
        runs = out
    return runs


def _assign_slots(runs):
    """Map wall-ordered runs onto (sag, hog1, hog2) slots."""
    slots = [None, None, None]
    order = []
    hog = 1
    for is_sag, a, b in runs:
        if is_sag and slots[0] is None:
            slots[0] = (a, b)
            order.append(0)
        elif not is_sag and hog <= 2:
            slots[hog] = (a, b)
            order.append(hog)
            hog += 1
        else:
            log.debug("zone [%d, %d) beyond the three strain slots ignored", a, b)
    return slots, order


def curvature_signs(w):
    """Per-point concavity flag (True = sagging) from the discrete second difference."""
    w = np.atleast_2d(w)
    d2 = w[:, :-2] - 2.0 * w[:, 1:-1] + w[:, 2:]
    sag = d2 < 0.0
    return np.concatenate([sag[:, :1], sag, sag[:, -1:]], axis=1)


def partition(w) -> ZoneLayout:
    """Vectorised zone partition of settlement profiles ``w`` of shape ``(n, P)``."""
    signs = curvature_signs(w)
    n, p = signs.shape
    start = np.full((n, 3), -1, dtype=np.int64)
    stop = np.full((n, 3), -1, dtype=np.int64)
    order = np.full((n, 3), -1, dtype=np.int64)

    changes = signs[:, 1:] != signs[:, :-1]
    count = changes.sum(axis=1)
    first = np.where(count > 0, np.argmax(changes, axis=1) + 1, p)
    last = np.where(count > 0, p - 1 - np.argmax(changes[:, ::-1], axis=1), p)
    s0 = signs[:, 0]

    # fast path: at most two sign changes and no run shorter than the minimum
    fast = (count == 0) | (
        (count == 1) & (first >= MIN_ZONE_POINTS) & (p - first >= MIN_ZONE_POINTS)
    ) | (
        (count == 2)
        & (first >= MIN_ZONE_POINTS)
        & (last - first >= MIN_ZONE_POINTS)
        & (p - last >= MIN_ZONE_POINTS)
    )

    rows = np.flatnonzero(fast & (count == 0))
    slot = np.where(s0[rows], 0, 1)
    start[rows, slot] = 0
    stop[rows, slot] = p
    order[rows, 0] = slot

    rows = np.flatnonzero(fast & (count == 1))
    sag_first = s0[rows]
    for col, (a, b) in ((0, (0, first[rows])), (1, (first[rows], p))):
        is_sag = sag_first if col == 0 else ~sag_first
        sl = np.where(is_sag, 0, 1)
        start[rows, sl] = a
        stop[rows, sl] = b
        order[rows, col] = sl

    rows = np.flatnonzero(fast & (count == 2))
    mid_sag = ~s0[rows]
    # hog-sag-hog (the usual transverse case) or sag-hog-sag
    hsh = rows[mid_sag]
    start[hsh, 1], stop[hsh, 1] = 0, first[hsh]
    start[hsh, 0], stop[hsh, 0] = first[hsh], last[hsh]
    start[hsh, 2], stop[hsh, 2] = last[hsh], p
    order[hsh] = (1, 0, 2)

    for i in np.flatnonzero(~(fast & (count <= 2)) | (fast & (count == 2) & s0)):
        runs = _merge_short(_runs(signs[i]))
        slots, ordr = _assign_slots(runs)
        start[i] = stop[i] = order[i] = -1
        for sl, span in enumerate(slots):
            if span is not None:
                start[i, sl], stop[i, sl] = span
        order[i, : len(ordr)] = ordr
    return ZoneLayout(start, stop, order)


def _zone_geometry(s, w_m, a, b):
    """Chord length and max perpendicular offset of ``w_m`` (metres) over index range [a, b]."""
    n, p = w_m.shape
    idx = np.arange(p)
    ok = a >= 0
    a_ = np.where(ok, a, 0)
    b_ = np.where(ok, np.minimum(b, p - 1), 1)
    mask = (idx[None, :] >= a_[:, None]) & (idx[None, :] <= b_[:, None])
    rows = np.arange(n)
    sa, sb = s[a_], s[b_]
    wa, wb = w_m[rows, a_], w_m[rows, b_]
    length = sb - sa
    slope = (wb - wa) / np.where(length > 0, length, 1.0)
    chord = wa[:, None] + slope[:, None] * (s[None, :] - sa[:, None])
    offset = np.abs(w_m - chord) / np.sqrt(1.0 + slope[:, None] ** 2)
    delta = np.max(np.where(mask, offset, 0.0), axis=1)
    return np.where(ok, length, 0.0), np.where(ok, delta, 0.0)


def partition_zones(profile: WallProfile) -> List[List[DeflectionZone]]:
    """Zones of each realization in wall order.

    ``l_ref`` is the chord length between the zone's end points (the boundary
    point of the following zone included, so chords join the inflection
    points) and ``delta_ref`` the largest perpendicular offset, in mm, of the
    profile from that chord.
    """
    lay = partition(profile.w)
    w_m = profile.w / 1000.0
    out = []
    geo = [_zone_geometry(profile.s, w_m, lay.start[:, sl], lay.stop[:, sl]) for sl in range(3)]
    for i in range(profile.w.shape[0]):
        zones = []
        for sl in lay.order[i]:
            if sl < 0:
                continue
            zones.append(
                DeflectionZone(
                    SAGGING if sl == 0 else HOGGING,
                    (int(lay.start[i, sl]), int(lay.stop[i, sl])),
                    float(geo[sl][0][i]),
                    float(geo[sl][1][i] * 1000.0),
                )
            )
        out.append(zones)
    return out


def beam_strains(delta_ratio, l_ref, H, e_over_g, kind):
    """Maximum bending and shear strains of a deep beam for a deflection ratio.

    ``delta_ratio`` is Delta_ref / l_ref (dimensionless). The neutral axis
    depth ``t`` (and fibre distance ``a``) is ``H/2`` for sagging and ``H``
    for hogging.
    """
    l_ref = np.asarray(l_ref, dtype=float)
    if np.any(l_ref <= 0):
        raise ContractError("l_ref must be positive")
    t = H / 2.0 if kind == SAGGING else float(H)
    a = t
    inertia = H**3 / 12.0
    eps_b = delta_ratio / (l_ref / (12.0 * t) + 3.0 * inertia * e_over_g / (2.0 * a * l_ref * H))
    eps_d = delta_ratio / (1.0 + H * l_ref**2 / (18.0 * inertia) / e_over_g)
    return eps_b, eps_d


def horizontal_strain(scenario, profile: WallProfile, realization):
    """Ground strain resolved along the wall direction at each profile point, ``(n, P)``."""
    v_l, k = _realization(realization)
    exx, eyy, exy = ground.ground_strains(
        scenario.tunnel, profile.x[None, :], profile.y[None, :], 0.0, v_l[:, None], k[:, None]
    )
    t = math.radians(scenario.building.theta_r)
    c, s = math.cos(t), math.sin(t)
    return c * c * exx + s * s * eyy + 2.0 * c * s * exy


def zone_horizontal_strain(eps_h_points, start, stop, how="mean"):
    """Representative horizontal strain of a zone: mean (default) or max over its points."""
    p = eps_h_points.shape[1]
    idx = np.arange(p)
    ok = start >= 0
    mask = (idx[None, :] >= start[:, None]) & (idx[None, :] < stop[:, None]) & ok[:, None]
    if how == "mean":
        cnt = mask.sum(axis=1)
        total = np.where(mask, eps_h_points, 0.0).sum(axis=1)
        return np.where(cnt > 0, total / np.maximum(cnt, 1), 0.0)
    if how == "max":
        return np.where(ok, np.max(np.where(mask, eps_h_points, -np.inf), axis=1), 0.0)
    raise ContractError(f"unknown zone strain rule {how!r}")


def combined_strains(eps_b, eps_d, eps_h, e_over_g, err_b, err_d):
    """Extreme-fibre bending and diagonal strains including horizontal ground strain."""
    eps_br = (eps_b + eps_h) * err_b
    eps_dr = (eps_h * (1.0 - e_over_g / 4.0) + np.sqrt(eps_h**2 * e_over_g**2 / 16.0 + eps_d**2)) * err_d
    return eps_br, eps_dr


def strain_breakdown(scenario, realization):
    """The six strain slots, ``(n, 6)`` in :data:`SLOT_NAMES` order, and a populated mask."""
    x = np.atleast_2d(np.asarray(realization, dtype=float))
    prof = wall_profile(scenario, x)
    lay = partition(prof.w)
    eps_h_pts = horizontal_strain(scenario, prof, x)
    w_m = prof.w / 1000.0
    e_over_g = x[:, IDX["E_over_G"]]
    how = getattr(scenario, "zone_strain", "mean")
    H = scenario.building.H

    slots = np.zeros((x.shape[0], 6))
    populated = np.zeros((x.shape[0], 6), dtype=bool)
    for sl in range(3):
        a, b = lay.start[:, sl], lay.stop[:, sl]
        ok = a >= 0
        if not ok.any():
            continue
        length, delta = _zone_geometry(prof.s, w_m, a, b)
        ratio = np.where(ok, delta / np.where(length > 0, length, 1.0), 0.0)
        eps_b, eps_d = beam_strains(
            ratio, np.where(length > 0, length, 1.0), H, e_over_g, SAGGING if sl == 0 else HOGGING
        )
        eps_h = zone_horizontal_strain(eps_h_pts, a, b, how)
        cb, cd = _ERROR_COLUMNS[sl]
        eps_br, eps_dr = combined_strains(eps_b, eps_d, eps_h, e_over_g, x[:, cb], x[:, cd])
        slots[:, 2 * sl] = np.where(ok, eps_br, 0.0)
        slots[:, 2 * sl + 1] = np.where(ok, eps_dr, 0.0)
        populated[:, 2 * sl] = populated[:, 2 * sl + 1] = ok
    return slots, populated


def eps_max(scenario, realization):
    """Governing tensile strain of the wall, one value per realization.

    Large batches are processed in blocks of ``BLOCK_ROWS`` to bound the
    memory taken by the ``(n, n_profile)`` intermediates.
    """
    x = np.atleast_2d(np.asarray(realization, dtype=float))
    out = np.empty(x.shape[0])
    for a in range(0, x.shape[0], BLOCK_ROWS):
        slots, populated = strain_breakdown(scenario, x[a:a + BLOCK_ROWS])
        out[a:a + BLOCK_ROWS] = np.max(np.where(populated, slots, -np.inf), axis=1)
    return out


def limit_state(scenario, realization):
    """``eps_lim - eps_max``; failure where the result is <= 0."""
    return scenario.eps_lim - eps_max(scenario, realization)


# upper strain bound (percent) of damage categories 0..3; above the last -> 4
_DAMAGE_BANDS = (0.050, 0.075, 0.150, 0.300)


def classify_damage(eps_max_percent):
    """Damage category from the governing strain in percent.

    Band edges belong to the lower category. Category 5 has no strain band and
    is never returned.
    """
    e = np.asarray(eps_max_percent, dtype=float)
    if np.any(e < 0):
        raise ContractError("strain must be non-negative")
    cat = np.searchsorted(np.asarray(_DAMAGE_BANDS), e, side="left")
    return int(cat) if cat.ndim == 0 else cat
