import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infratl.atmosphere import AtmosphericSlice
from infratl.errors import ConfigError, DataError, DomainError, FormatError, NumericalError
from infratl.pe import (PeConfig, TlCurve, march, plan_grid, read_batch_manifest, resample_tl, solve_tl,
                        tl_db, write_batch_manifest)

ALT = np.linspace(0.0, 60_000.0, 201)
RNG = 100_000.0 * np.arange(5)


def uniform_slice(c=1.0, alt=ALT, rng=RNG):
    return AtmosphericSlice(np.full((len(alt), len(rng)), c), alt, rng, ground_ceff_ms=340.0)


def test_tl_db_examples():
    assert tl_db(3.0, 3.0) == 0.0
    assert tl_db(0.1, 1.0) == pytest.approx(-20.0, abs=1e-12)
    assert tl_db(0.0, 1.0) == -300.0
    with pytest.raises(DomainError):
        tl_db(1.0, 0.0)
    with pytest.raises(DomainError):
        tl_db(-1.0, 1.0)


@given(st.floats(1e-10, 1e10), st.floats(1e-10, 1e10))
def test_tl_db_ratio_property(a, b):
    assert tl_db(a, b) == pytest.approx(max(20 * math.log10(a / b), -300.0), abs=1e-9)


def test_curve_floor_and_validation():
    c = TlCurve([-400.0, -10.0], [1000.0, 2000.0], 0.1)
    assert c.tl_db[0] == -300.0
    with pytest.raises(DataError):
        TlCurve([0.0, np.nan], [1000.0, 2000.0], 0.1)
    with pytest.raises(DataError):
        TlCurve([0.0, 1.0, 2.0], [1000.0, 2000.0, 3500.0], 0.1)
    with pytest.raises(DataError):
        TlCurve([0.0, 1.0], [1500.0, 4000.0], 0.1)


def test_curve_csv_round_trip(tmp_path):
    c = TlCurve(np.linspace(0, -80, 40), 5000.0 * np.arange(1, 41), 0.4)
    p = tmp_path / "c.csv"
    c.save(p)
    d = TlCurve.load(p)
    assert np.array_equal(d.tl_db, c.tl_db) and np.array_equal(d.range_axis_m, c.range_axis_m)
    assert d.frequency_hz == 0.4
    assert p.read_text().startswith("# frequency_hz=0.4\nrange_km,tl_db\n")
    with pytest.raises(FormatError):
        TlCurve.from_csv("range_km,tl_db\n1,2\n")


def test_resample_examples():
    r = 5000.0 * np.arange(1, 801)
    c = TlCurve(np.sin(r / 1e5), r, 0.1)
    same = resample_tl(c)
    assert np.array_equal(same.tl_db, c.tl_db) and len(same.tl_db) == 800
    fine = 1000.0 * np.arange(1, 4001)
    ramp = TlCurve(-0.01 * fine / 1000.0 + 3.0, fine, 0.2)
    out = resample_tl(ramp, 5000.0, 800)
    np.testing.assert_allclose(out.tl_db, -0.01 * out.range_axis_m / 1000.0 + 3.0, rtol=0, atol=1e-12)
    with pytest.raises(DataError):
        resample_tl(TlCurve(np.zeros(10), 1000.0 * np.arange(1, 11), 0.1), 5000.0, 800)


def test_plan_grid_validation():
    s = uniform_slice()
    for f in (0.05, 0.01, 6.0):
        with pytest.raises(ConfigError):
            plan_grid(s, f, PeConfig())
    with pytest.raises(ConfigError, match="lambda/8"):
        plan_grid(s, 1.0, PeConfig(dz_m=100.0))
    with pytest.raises(ConfigError, match="wavelength"):
        plan_grid(s, 1.0, PeConfig(dr_m=400.0))
    with pytest.raises(ConfigError, match="10 wavelengths"):
        plan_grid(s, 1.0, PeConfig(absorber_thickness_m=1000.0))
    g = plan_grid(s, 0.5, PeConfig())
    assert g.dz <= g.lam / 8 and g.dr <= g.lam and (2 * g.nz) & (2 * g.nz - 1) == 0
    assert g.n_sub * g.dr == pytest.approx(1000.0)


def test_config_validation():
    for bad in (dict(dz_m=-1.0), dict(absorber_strength=-0.1), dict(output_step_m=700.0),
                dict(absorption=((10.0, 5.0, 0.1),))):
        with pytest.raises(ConfigError):
            PeConfig(**bad)


def test_reference_range_is_zero_db_and_deterministic():
    cfg = PeConfig(max_range_m=50_000.0)
    s = uniform_slice()
    a = solve_tl(s, 0.5, cfg)
    b = solve_tl(s, 0.5, cfg)
    assert a.tl_db[0] == 0.0
    assert np.array_equal(a.tl_db, b.tl_db)


def test_homogeneous_short_range_spreading():
    cfg = PeConfig(max_range_m=100_000.0)
    c = solve_tl(uniform_slice(), 0.5, cfg)
    sel = c.range_axis_m >= 10_000.0
    np.testing.assert_allclose(c.tl_db[sel], -20 * np.log10(c.range_axis_m[sel] / 1000.0), atol=1.5)


def test_unitary_march_without_absorber():
    cfg = PeConfig(max_range_m=20_000.0, absorber_strength=0.0)
    norms = []
    march(_layered(), 0.5, cfg,
          on_step=lambda i, psi: norms.append(np.linalg.norm(psi)))
    growth = np.array(norms[1:]) / np.array(norms[:-1]) - 1.0
    assert np.max(growth) < 1e-6


def _layered():
    c = 1.0 + 0.08 * np.exp(-((ALT - 45_000.0) / 8000.0) ** 2)
    c = np.repeat(c[:, None], len(RNG), axis=1) * np.linspace(1.0, 1.01, len(RNG))[None, :]
    c[0] = 1.0
    return AtmosphericSlice(c, ALT, RNG, ground_ceff_ms=340.0)


def test_absorption_band_lowers_tl():
    cfg = PeConfig(max_range_m=60_000.0)
    lossy = PeConfig(max_range_m=60_000.0, absorption=((0.0, 5000.0, 0.05),))
    a = solve_tl(uniform_slice(), 0.5, cfg)
    b = solve_tl(uniform_slice(), 0.5, lossy)
    assert b.tl_db[-1] < a.tl_db[-1] - 1.0


def test_blowup_names_step():
    c = np.ones((len(ALT), len(RNG)))
    c[50:] = 1e-320
    s = AtmosphericSlice(c, ALT, RNG, ground_ceff_ms=340.0)
    with np.errstate(all="ignore"), pytest.raises(NumericalError, match="march step"):
        solve_tl(s, 0.5, PeConfig(max_range_m=5000.0))


def test_batch_manifest(tmp_path):
    entries = [{"slice_id": "a", "frequency_hz": 0.1, "curve": "labels/a.csv"}]
    p = str(tmp_path / "m.jsonl")
    write_batch_manifest(p, entries)
    assert read_batch_manifest(p) == entries
