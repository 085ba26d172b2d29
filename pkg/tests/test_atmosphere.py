from decimal import Decimal, getcontext
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infratl.atmosphere import (AtmosGrid, AtmosProfile, AtmosphericSlice, GAMMA, R_AIR, SynthAtmosSpec,
                                adiabatic_sound_speed, build_slice, c_ratio_column, effective_sound_speed,
                                great_circle_sample, haversine, load_grid_csv, project_wind, save_grid_csv,
                                synth_atmosphere, uniform_grid)
from infratl.errors import DegenerateProfileError, DomainError, FormatError, ShapeError

# extended-precision evaluation of sqrt(1.4 * 287.058 * T)
C_288 = 340.2970287557621
C_273 = 331.3213693379888


def _decimal_c(T):
    getcontext().prec = 40
    return float((Decimal("1.4") * Decimal("287.058") * Decimal(T)).sqrt())


def test_sound_speed_oracle():
    assert _decimal_c("288.15") == pytest.approx(C_288, rel=1e-15)
    assert adiabatic_sound_speed(288.15) == pytest.approx(C_288, rel=1e-13)
    assert adiabatic_sound_speed(273.15) == pytest.approx(C_273, rel=1e-13)
    assert abs(adiabatic_sound_speed(288.15) - 340.29) < 0.01
    # the quoted 331.30 is a loose rounding of 331.32
    assert abs(adiabatic_sound_speed(273.15) - 331.30) < 0.05


@given(st.floats(1.0, 5000.0))
def test_sound_speed_homogeneity(T):
    assert adiabatic_sound_speed(4 * T) == pytest.approx(2 * adiabatic_sound_speed(T), rel=1e-14)


@pytest.mark.parametrize("T", [0.0, -5.0, float("nan")])
def test_sound_speed_domain(T):
    with pytest.raises(DomainError):
        adiabatic_sound_speed(T)


def test_project_wind_examples():
    assert project_wind(10, 0, 90) == pytest.approx(10)
    assert project_wind(10, 0, 270) == pytest.approx(-10)
    assert project_wind(3, 4, 0) == pytest.approx(4)


@given(st.floats(-200, 200), st.floats(-200, 200), st.floats(0, 360))
def test_project_wind_antisymmetric(u, v, az):
    assert project_wind(u, v, az) + project_wind(u, v, az + 180) == pytest.approx(0, abs=1e-9)


def _profile(T, u=0.0, v=0.0, z=None):
    z = np.arange(0.0, 10_000.0, 1000.0) if z is None else z
    n = len(z)
    return AtmosProfile(z, np.broadcast_to(T, n), np.broadcast_to(u, n), np.broadcast_to(v, n))


def test_c_ratio_column_examples():
    assert np.array_equal(c_ratio_column(_profile(250.0), 30.0), np.ones(10))
    u = np.zeros(10)
    u[3] = 34.03
    col = c_ratio_column(_profile(288.15, u=u), 90.0)
    assert col[0] == 1.0
    assert col[3] == pytest.approx(1.1, abs=1e-5)
    assert col[3] == pytest.approx((C_288 + 34.03) / C_288, rel=1e-12)


@settings(max_examples=50)
@given(st.lists(st.floats(150, 1500), min_size=3, max_size=8), st.floats(-50, 50), st.floats(0, 360))
def test_c_ratio_ground_is_one_and_offset(Ts, delta, az):
    n = len(Ts)
    z = 1000.0 * np.arange(n)
    u = np.linspace(-20, 40, n)
    prof = AtmosProfile(z, Ts, u, np.zeros(n))
    col = c_ratio_column(prof, az)
    assert col[0] == 1.0
    # a uniform along-path increment delta enters numerator and denominator alike
    shifted = AtmosProfile(z, Ts, u + delta * math.sin(math.radians(az)), np.zeros(n) + delta * math.cos(math.radians(az)))
    ceff = np.sqrt(GAMMA * R_AIR * np.asarray(Ts)) + project_wind(u, 0, az) + delta
    np.testing.assert_allclose(c_ratio_column(shifted, az), ceff / ceff[0], rtol=1e-12)


def test_c_ratio_degenerate():
    with pytest.raises(DegenerateProfileError):
        c_ratio_column(_profile(288.15, u=-400.0), 90.0)


def test_profile_validation():
    with pytest.raises(ShapeError):
        AtmosProfile([0, 0], [1, 1], [0, 0], [0, 0])
    with pytest.raises(DomainError):
        AtmosProfile([0, 1], [1, -1], [0, 0], [0, 0])


def test_great_circle_examples():
    one_deg = 2 * math.pi * 6_371_000.0 / 360
    pts = great_circle_sample((0.0, 0.0), 90.0, 111_195.0, 111_195.0)
    assert pts[-1] == pytest.approx([0.0, 111_195.0 / one_deg], abs=1e-9)
    assert pts[-1][1] == pytest.approx(1.0, abs=1e-4)
    pts = great_circle_sample((0.0, 0.0), 0.0, 111_195.0, 111_195.0)
    assert pts[-1] == pytest.approx([1.0, 0.0], abs=1e-4)
    pts = great_circle_sample((12.0, 34.0), 45.0, 0.0, 1000.0)
    assert pts.shape == (1, 2) and pts[0] == pytest.approx([12.0, 34.0])


@settings(max_examples=40)
@given(st.floats(-80, 80), st.floats(-180, 179), st.floats(0, 360), st.floats(1e4, 5e5))
def test_great_circle_spacing(lat, lon, brg, step):
    pts = great_circle_sample((lat, lon), brg, 10 * step, step)
    d = [haversine(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    np.testing.assert_allclose(d, step, rtol=1e-3)


def test_uniform_grid_slice_column_constant():
    z = np.arange(0.0, 130_001.0, 1000.0)
    T = 288.15 - 2e-3 * z + 1e-8 * z ** 2
    g = uniform_grid(T, 10.0 * np.sin(z / 2e4), 5.0, z)
    s = build_slice(g, (10.0, 20.0), 37.0, 90.0)
    assert s.shape == (len(z), 40)
    assert np.max(np.abs(s.c_ratio - s.c_ratio[:, :1])) < 1e-10
    np.testing.assert_allclose(s.c_ratio[0], 1.0, atol=1e-12)


def test_projection_cancels_wind():
    g = synth_atmosphere(seed=3)
    s90 = build_slice(g, (40.0, 10.0), 30.0, 90.0)
    s270 = build_slice(g, (40.0, 10.0), 30.0, 270.0)
    lats, lons = great_circle_sample((40.0, 10.0), 30.0, 3_900_000.0, 100_000.0).T
    T, _, _ = g.interpolate(lats, lons)
    np.testing.assert_allclose(s90.c_eff() + s270.c_eff(), 2 * adiabatic_sound_speed(T).T, rtol=1e-12)


def test_jet_maximum_at_its_altitude():
    z = np.arange(0.0, 130_001.0, 1000.0)
    u = 50.0 * np.exp(-((z - 50_000.0) / 5000.0) ** 2)
    g = uniform_grid(np.full(len(z), 250.0), u, 0.0, z)
    s = build_slice(g, (0.0, 0.0), 90.0, 90.0)
    assert np.all(z[np.argmax(s.c_ratio, axis=0)] == 50_000.0)


def test_synth_atmosphere():
    a = synth_atmosphere(seed=7)
    b = synth_atmosphere(seed=7)
    assert np.array_equal(a.wind_zonal_ms, b.wind_zonal_ms) and np.array_equal(a.temperature_K, b.temperature_K)
    calm = synth_atmosphere(SynthAtmosSpec(jets=()), seed=7)
    assert not calm.wind_zonal_ms.any() and not calm.wind_merid_ms.any()
    k = int(np.flatnonzero(a.altitudes_m == 110_000.0)[0])
    for i in range(0, len(a.lats_deg), 6):
        for j in range(0, len(a.lons_deg), 6):
            p = a.profile(i, j)
            assert max(c_ratio_column(p, az)[k] for az in (0, 90, 180, 270)) > 1.0


def test_grid_csv_round_trip(tmp_path):
    g = synth_atmosphere(SynthAtmosSpec(lat_step_deg=30, lon_step_deg=60, dz_m=10_000), seed=1)
    p = tmp_path / "g.csv"
    save_grid_csv(g, p)
    h = load_grid_csv(p)
    for name in ("lats_deg", "lons_deg", "altitudes_m", "temperature_K", "wind_zonal_ms", "wind_merid_ms"):
        assert np.array_equal(getattr(g, name), getattr(h, name))
    assert h.valid_time == g.valid_time


def test_grid_csv_rejects_unsorted(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("lat_deg,lon_deg,z_m,T_K,u_ms,v_ms\n0,0,1000,250,0,0\n0,0,0,250,0,0\n")
    with pytest.raises(FormatError):
        load_grid_csv(p)
    p.write_text("lat,lon\n")
    with pytest.raises(FormatError):
        load_grid_csv(p)


def test_slice_binary_round_trip():
    s = build_slice(synth_atmosphere(seed=2), (-30.0, 100.0), 200.0, 270.0)
    t = AtmosphericSlice.from_bytes(s.to_bytes())
    assert np.array_equal(t.c_ratio, s.c_ratio.astype(np.float32).astype(np.float64))
    assert np.array_equal(t.alt_axis_m, s.alt_axis_m) and np.array_equal(t.range_axis_m, s.range_axis_m)
    assert t.origin == s.origin and t.bearing_deg == s.bearing_deg
    assert np.array_equal(t.ground_ceff_ms, s.ground_ceff_ms)
    assert s.to_bytes()[:4] == b"ATMS"
    with pytest.raises(FormatError):
        AtmosphericSlice.from_bytes(b"XXXX" + s.to_bytes()[4:])


def test_grid_validation():
    with pytest.raises(DomainError):
        AtmosGrid([0.0], [180.0], [0.0], np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))
    with pytest.raises(ShapeError):
        AtmosGrid([0.0], [0.0], [0.0, 1.0], np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))


def test_effective_sound_speed_matches_parts():
    p = _profile(260.0, u=12.0, v=-3.0)
    np.testing.assert_allclose(effective_sound_speed(p, 60.0),
                               adiabatic_sound_speed(260.0) + 12 * math.sin(math.radians(60)) - 3 * math.cos(math.radians(60)))
