import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atc_demand.errors import ConfigError
from atc_demand.geodesy import (MEAN_EARTH_RADIUS_NM, WGS84_A, closing_speed, geodetic_to_ecef, haversine_nm,
                                pairwise_kinematics, separation_distance)

from conftest import make_aircraft, random_aircraft


def _ecef_reference(lat, lon, h):
    """Alternative textbook form: N = a^2 / sqrt(a^2 cos^2(phi) + b^2 sin^2(phi))."""
    a = 6378137.0
    f = 1 / 298.257223563
    b = a * (1 - f)
    phi, lam = math.radians(lat), math.radians(lon)
    n = a * a / math.sqrt(a * a * math.cos(phi) ** 2 + b * b * math.sin(phi) ** 2)
    return ((n + h) * math.cos(phi) * math.cos(lam), (n + h) * math.cos(phi) * math.sin(lam),
            (b * b / (a * a) * n + h) * math.sin(phi))


def test_ecef_axes():
    p = geodetic_to_ecef(0.0, 0.0, 0.0)
    assert (p.x, p.y, p.z) == (6378137.0, 0.0, 0.0)
    q = geodetic_to_ecef(90.0, 0.0, 0.0)
    assert q.x == pytest.approx(0.0, abs=1e-6)
    assert q.z == pytest.approx(6356752.314, abs=1e-3)


def test_ecef_matches_textbook_form():
    p = geodetic_to_ecef(51.5, -1.0, 8000.0)
    np.testing.assert_allclose(p.as_array(), _ecef_reference(51.5, -1.0, 8000.0), rtol=0, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(-90, 90), st.floats(-180, 180), st.floats(0, 15000))
def test_ecef_norm_bounds_and_reference(lat, lon, alt):
    p = geodetic_to_ecef(lat, lon, alt).as_array()
    r = float(np.linalg.norm(p))
    assert WGS84_A - 22000.0 <= r <= WGS84_A + alt + 1e-6
    np.testing.assert_allclose(p, _ecef_reference(lat, lon, alt), rtol=0, atol=1e-6)


def test_ecef_rejects_out_of_range():
    with pytest.raises(ConfigError):
        geodetic_to_ecef(91.0, 0.0)


def test_separation_identity_symmetry_and_chord():
    a = make_aircraft("A", lat=0.0, lon=0.0, fl=0.0)
    b = make_aircraft("B", lat=0.0, lon=1.0, fl=0.0)
    assert separation_distance(a, a) == 0.0
    assert separation_distance(a, b) == separation_distance(b, a)
    chord = 2 * WGS84_A * math.sin(math.radians(1.0) / 2)
    assert separation_distance(a, b) == pytest.approx(chord, rel=5e-3)


def test_haversine_examples():
    assert haversine_nm((51.0, 0.0), (51.0, 0.0)) == 0.0
    assert haversine_nm((0.0, 0.0), (0.0, 180.0)) == pytest.approx(math.pi * MEAN_EARTH_RADIUS_NM, rel=1e-12)
    assert haversine_nm((0.0, 0.0), (0.0, 180.0)) == pytest.approx(10800.0, rel=1e-3)
    assert haversine_nm((51.0, 0.0), (52.0, 0.0)) == pytest.approx(60.0, abs=0.5)


def test_closing_speed_head_on_and_parallel():
    a = make_aircraft("A", lat=52.0, lon=-1.3, speed=240.0, track_deg=90.0)
    b = make_aircraft("B", lat=52.0, lon=-0.7, speed=240.0, track_deg=270.0)
    assert closing_speed(a, b) == pytest.approx(480.0, rel=1e-4)
    c = make_aircraft("C", lat=52.1, lon=-1.0, speed=450.0, track_deg=45.0)
    d = make_aircraft("D", lat=52.3, lon=-0.8, speed=450.0, track_deg=45.0)
    assert closing_speed(c, d) == pytest.approx(0.0, abs=0.5)
    assert closing_speed(a, a) == 0.0


def _advance(a, seconds):
    kx = 60.0 * math.cos(math.radians(a.lat))
    e, n = (c * a.ground_speed * seconds / 3600.0 for c in a.track_unit_vector)
    return a.lat + n / 60.0, a.lon + e / kx


def _fd_closing(a, b, h=1.0):
    """Minus the central difference of great-circle separation, in knots."""
    d_plus = haversine_nm(_advance(a, h), _advance(b, h))
    d_minus = haversine_nm(_advance(a, -h), _advance(b, -h))
    return -(d_plus - d_minus) / (2 * h) * 3600.0


@pytest.mark.parametrize("seed", range(30))
def test_closing_speed_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    a = random_aircraft(rng, 0)
    b = random_aircraft(rng, 1)
    if haversine_nm(a.position, b.position) < 5:
        pytest.skip("pair too close for a stable difference")
    fd = _fd_closing(a, b)
    assert closing_speed(a, b) == pytest.approx(fd, rel=0.01, abs=2.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7))
def test_pairwise_matrices_match_scalar_functions(seed, n):
    rng = np.random.default_rng(seed)
    ac = [random_aircraft(rng, k) for k in range(n)]
    sep, clo = pairwise_kinematics(ac)
    np.testing.assert_allclose(sep, sep.T, rtol=0, atol=1e-6)
    np.testing.assert_allclose(clo, clo.T, rtol=0, atol=1e-9)
    assert np.all(np.diag(sep) == 0) and np.all(np.diag(clo) == 0)
    for i in range(n):
        for j in range(n):
            if i != j:
                assert sep[i, j] == pytest.approx(separation_distance(ac[i], ac[j]), rel=1e-12, abs=1e-6)
                assert clo[i, j] == pytest.approx(closing_speed(ac[i], ac[j]), rel=1e-9, abs=1e-9)
                assert closing_speed(ac[i], ac[j]) == pytest.approx(closing_speed(ac[j], ac[i]), abs=1e-9)
