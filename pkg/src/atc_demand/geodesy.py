"""WGS-84 conversions and pairwise kinematic quantities between aircraft.

Aircraft arguments are duck-typed: anything with ``lat``, ``lon`` (degrees),
``flight_level`` (hundreds of feet), ``ground_speed`` (knots) and
``track_unit_vector`` (east, north) works.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

FEET_TO_METRES = 0.3048
METRES_PER_NM = 1852.0
MEAN_EARTH_RADIUS_M = 6371000.0
MEAN_EARTH_RADIUS_NM = MEAN_EARTH_RADIUS_M / METRES_PER_NM


@dataclass(frozen=True)
class EcefPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def geodetic_to_ecef(lat: float, lon: float, alt: float = 0.0) -> EcefPoint:
    """Convert geodetic latitude/longitude (degrees) and ellipsoidal height (m) to ECEF."""
    if not (-90.0 <= lat <= 90.0):
        raise ConfigError(f"latitude {lat} outside [-90, 90]")
    if not (-180.0 <= lon <= 180.0):
        raise ConfigError(f"longitude {lon} outside [-180, 180]")
    phi = math.radians(lat)
    lam = math.radians(lon)
    sin_phi = math.sin(phi)
    cos_phi = math.cos(phi)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_phi * sin_phi)
    x = (n + alt) * cos_phi * math.cos(lam)
    y = (n + alt) * cos_phi * math.sin(lam)
    z = (n * (1.0 - WGS84_E2) + alt) * sin_phi
    return EcefPoint(x, y, z)


def aircraft_ecef(a) -> np.ndarray:
    alt = a.flight_level * 100.0 * FEET_TO_METRES
    return geodetic_to_ecef(a.lat, a.lon, alt).as_array()


def separation_distance(a, b) -> float:
    """Straight-line ECEF distance between two aircraft in metres."""
    if a is b:
        return 0.0
    return float(np.linalg.norm(aircraft_ecef(a) - aircraft_ecef(b)))


def haversine_nm(p1: tuple[float, float], p2: tuple[float, float]) -> float:
    """Great-circle distance between two (lat, lon) points on the mean-radius sphere."""
    lat1, lon1 = map(math.radians, p1)
    lat2, lon2 = map(math.radians, p2)
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * MEAN_EARTH_RADIUS_NM * math.asin(min(1.0, math.sqrt(h)))


def _enu_basis(lat: float, lon: float) -> tuple[np.ndarray, np.ndarray]:
    phi = math.radians(lat)
    lam = math.radians(lon)
    east = np.array([-math.sin(lam), math.cos(lam), 0.0])
    north = np.array([-math.sin(phi) * math.cos(lam),
                      -math.sin(phi) * math.sin(lam),
                      math.cos(phi)])
    return east, north


def _velocity_ecef(a) -> np.ndarray:
    east, north = _enu_basis(a.lat, a.lon)
    ve, vn = a.ground_speed * np.asarray(a.track_unit_vector, dtype=float)
    return ve * east + vn * north


def closing_speed(a, b) -> float:
    """Relative speed (knots) of the pair toward its midpoint; positive when converging.

    The midpoint is the centre of the ECEF chord between the two ground
    positions. Each aircraft's velocity (lifted to ECEF from its own east/north
    frame) is projected onto the horizontal direction toward the midpoint in
    the tangent plane there. The sum equals minus the rate of change of the
    pair's horizontal separation.
    """
    if a is b:
        return 0.0
    ga = geodetic_to_ecef(a.lat, a.lon).as_array()
    gb = geodetic_to_ecef(b.lat, b.lon).as_array()
    mid = 0.5 * (ga + gb)
    up = mid / np.linalg.norm(mid)
    total = 0.0
    for ac, g in ((a, ga), (b, gb)):
        rel = mid - g
        horiz = rel - (rel @ up) * up
        norm = float(np.linalg.norm(horiz))
        if norm < 1e-6:
            return 0.0
        total += float(_velocity_ecef(ac) @ horiz) / norm
    return total


def _ecef_many(lat: np.ndarray, lon: np.ndarray, alt: np.ndarray) -> np.ndarray:
    phi = np.radians(lat)
    lam = np.radians(lon)
    sin_phi = np.sin(phi)
    cos_phi = np.cos(phi)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_phi * sin_phi)
    return np.stack([(n + alt) * cos_phi * np.cos(lam),
                     (n + alt) * cos_phi * np.sin(lam),
                     (n * (1.0 - WGS84_E2) + alt) * sin_phi], axis=-1)


def pairwise_kinematics(aircraft) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs (separation metres, closing speed knots) as two n x n matrices.

    Vectorised equivalent of calling :func:`separation_distance` and
    :func:`closing_speed` on every pair; diagonals are zero.
    """
    n = len(aircraft)
    lat = np.array([a.lat for a in aircraft], dtype=float)
    lon = np.array([a.lon for a in aircraft], dtype=float)
    alt = np.array([a.flight_level for a in aircraft], dtype=float) * 100.0 * FEET_TO_METRES
    vel = np.array([a.ground_speed * np.asarray(a.track_unit_vector, dtype=float)
                    for a in aircraft]).reshape(n, 2)
    pos = _ecef_many(lat, lon, alt)
    sep = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)

    ground = _ecef_many(lat, lon, np.zeros(n))
    mid = 0.5 * (ground[:, None, :] + ground[None, :, :])
    up = mid / np.linalg.norm(mid, axis=-1, keepdims=True)
    phi, lam = np.radians(lat), np.radians(lon)
    east = np.stack([-np.sin(lam), np.cos(lam), np.zeros(n)], axis=-1)
    north = np.stack([-np.sin(phi) * np.cos(lam), -np.sin(phi) * np.sin(lam), np.cos(phi)], axis=-1)
    v_ecef = vel[:, :1] * east + vel[:, 1:] * north

    def toward_mid(from_pos):
        rel = mid - from_pos
        horiz = rel - (rel * up).sum(-1, keepdims=True) * up
        return horiz, np.linalg.norm(horiz, axis=-1)

    horiz_a, norm_a = toward_mid(ground[:, None, :])
    horiz_b, norm_b = toward_mid(ground[None, :, :])
    coincident = (norm_a < 1e-6) | (norm_b < 1e-6)
    comp_a = (v_ecef[:, None, :] * horiz_a).sum(-1) / np.where(coincident, 1.0, norm_a)
    comp_b = (v_ecef[None, :, :] * horiz_b).sum(-1) / np.where(coincident, 1.0, norm_b)
    closing = np.where(coincident, 0.0, comp_a + comp_b)
    np.fill_diagonal(sep, 0.0)
    np.fill_diagonal(closing, 0.0)
    return sep, closing
