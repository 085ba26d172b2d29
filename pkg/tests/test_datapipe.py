import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infratl.atmosphere import AtmosphericSlice, uniform_grid
from infratl.datapipe import (STD_ALT, STD_RANGE, DatabaseScheme, NormStats, SplitScheme, build_database,
                              count_slices, desk_scheme, destandardize, enumerate_database, fit_norm,
                              full_scheme, grid_origins, interpolate_slice, read_dataset, split_counts,
                              split_database, standardize, write_dataset)
from infratl.errors import ChecksumError, ConfigError, CoverageError, DataError
from infratl.gwfield import GwRealization, GwSpectrumParams
from infratl.pe import TlCurve


def test_grid_origins_count():
    assert len(grid_origins()) == 162


def test_enumeration_counts():
    recs = enumerate_database(grid_origins())
    assert count_slices(recs) == 25_920
    assert len(recs) == 25_920 * 5
    one = enumerate_database([(0.0, 0.0)], 1, 1, (90.0,), (0.1,))
    assert count_slices(one) == 1
    with pytest.raises(ConfigError):
        enumerate_database([])


def test_desk_enumeration():
    s = desk_scheme()
    recs = enumerate_database(s.origins, s.n_directions, s.n_gw, s.projections, s.frequencies)
    assert count_slices(recs) == 12 * 4 * 3 * 2
    assert len(recs) == 12 * 4 * 3 * 2 * 2


@pytest.fixture(scope="module")
def full_split():
    s = full_scheme()
    recs = enumerate_database(s.origins, s.n_directions, s.n_gw, s.projections, s.frequencies)
    return split_database(recs, 0, s.split)


def test_full_split_counts(full_split):
    assert split_counts(full_split) == {"train": 42_000, "val": 12_000, "test": 6_000, "generalization": 9_600}


def test_split_partition_properties(full_split):
    by_split = {}
    for r in full_split:
        by_split.setdefault(r.split, []).append(r)
    gen_origins = {r.origin_id for r in by_split["generalization"]}
    for name in ("train", "val", "test"):
        assert not gen_origins & {r.origin_id for r in by_split[name]}
        assert max(r.gw_id for r in by_split[name]) < 5
    assert len({r.sample_id for r in full_split}) == len(full_split)


def test_split_deterministic_and_selection_keeps_test():
    s = desk_scheme()
    recs = enumerate_database(s.origins, s.n_directions, s.n_gw, s.projections, s.frequencies)
    a = split_database(recs, 3, s.split)
    b = split_database(recs, 3, s.split)
    assert [r.split for r in a] == [r.split for r in b]
    c = split_database(recs, 3, s.split, selection=1)
    assert [r.split == "test" for r in a] == [r.split == "test" for r in c]
    assert [r.split for r in a] != [r.split for r in c]
    assert split_counts(a) == {"train": 224, "val": 64, "test": 32, "generalization": 96}


def test_split_scheme_validation():
    with pytest.raises(ConfigError):
        SplitScheme(ratios=(0.5, 0.2, 0.2))
    recs = enumerate_database([(0.0, 0.0)], 1, 1, (90.0,), (0.1,))
    with pytest.raises(ConfigError):
        split_database(recs, 0, SplitScheme(n_holdout_points=2))


def _slice(c, alt, rng):
    return AtmosphericSlice(c, alt, rng, ground_ceff_ms=np.full(len(rng), 340.0))


def test_interpolate_examples():
    c = 1.0 + 0.001 * np.arange(433)[:, None] * np.ones((1, 40))
    c[0] = 1.0
    s = _slice(c, STD_ALT, STD_RANGE)
    assert interpolate_slice(s) is s
    alt = np.linspace(0.0, 140_000.0, 57)
    rng = np.linspace(0.0, 4_000_000.0, 17)
    lin = 1.0 + 2e-6 * alt[:, None] + 1e-8 * rng[None, :]
    out = interpolate_slice(_slice(lin, alt, rng))
    assert out.shape == (433, 40)
    np.testing.assert_allclose(out.c_ratio, 1.0 + 2e-6 * STD_ALT[:, None] + 1e-8 * STD_RANGE[None, :],
                               rtol=1e-13)
    with pytest.raises(CoverageError):
        interpolate_slice(_slice(np.ones((10, 40)), np.linspace(0, 50_000, 10), STD_RANGE))


def test_standardize_examples():
    st_ = NormStats.fit([np.array([1.0, 2.0, 3.0])], [np.array([0.0, -1.0])], [0.1, 0.2])
    assert st_.input_mean == 2.0
    assert st_.input_std == pytest.approx(np.sqrt(2 / 3), rel=1e-15)
    np.testing.assert_allclose(st_.std_input([1.0, 2.0, 3.0]), [-1.224744871391589, 0.0, 1.224744871391589],
                               rtol=1e-14)
    assert st_.std_input(2.0) == 0.0
    with pytest.raises(DataError):
        NormStats.fit([np.ones(4)], [np.zeros(2)], [0.1, 0.2])
    single = NormStats.fit([np.arange(3.0)], [np.arange(2.0)], [0.4, 0.4])
    assert single.freq_std == 1.0 and single.std_freq(0.4) == 0.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(-100, 100), st.floats(0.1, 100))
def test_standardize_round_trip(xs, mean, std):
    x = np.array(xs)
    np.testing.assert_allclose(destandardize(standardize(x, mean, std), mean, std), x, rtol=1e-12, atol=1e-12)


def test_fit_norm_uses_train_only():
    recs = split_database(enumerate_database([(0.0, 0.0), (10.0, 0.0)], 2, 2, (90.0,), (0.1, 0.4)), 0,
                          SplitScheme(n_holdout_points=1, n_gw_train=1, ratios=(0.5, 0.25, 0.25)))
    col = np.array([[1.0], [1.05], [1.1]])
    slices = {r.slice_id: _slice(col + np.full((3, 2), 0.01 * r.direction + 0.1 * r.gw_id), [0, 1, 2], [0, 1])
              for r in recs}
    labels = {r.sample_id: TlCurve(np.array([-10.0, -14.0]) - r.origin_id, [5000.0, 10000.0], r.frequency_hz)
              for r in recs}
    n = fit_norm(recs, slices.__getitem__, lambda r: labels[r.sample_id])
    train = [r for r in recs if r.split == "train"]
    vals = np.concatenate([slices[r.slice_id].c_ratio.ravel() for r in train])
    assert n.input_mean == pytest.approx(vals.mean(), rel=1e-14)
    assert n.tl_mean == pytest.approx(np.mean([labels[r.sample_id].tl_db for r in train]), rel=1e-14)


def _tiny_dataset(tmp_path):
    recs = enumerate_database([(0.0, 0.0)], 1, 1, (90.0,), (0.1,))
    recs = split_database(recs, 0, SplitScheme(n_holdout_points=0, n_gw_train=1, ratios=(1.0, 0.0, 0.0)))
    s = _slice(np.linspace(1, 1.2, 433 * 40).reshape(433, 40), STD_ALT, STD_RANGE)
    s = s.replace(c_ratio=np.vstack([np.ones((1, 40)), s.c_ratio[1:]]))
    g = GwRealization(np.random.default_rng(0).normal(size=(433, 40)), STD_ALT, STD_RANGE, 1, GwSpectrumParams())
    lab = TlCurve(np.linspace(0, -60, 20), 5000.0 * np.arange(1, 21), 0.1)
    write_dataset(tmp_path, recs, {recs[0].slice_id: s}, {0: g}, {recs[0].sample_id: lab}, None, {"k": 1})
    return recs, s, g, lab


def test_dataset_round_trip(tmp_path):
    recs, s, g, lab = _tiny_dataset(tmp_path)
    ds = read_dataset(tmp_path)
    assert ds.records == recs and ds.meta == {"k": 1} and ds.norm is None
    assert np.array_equal(ds.slice(recs[0].slice_id).c_ratio, s.c_ratio.astype(np.float32))
    assert np.array_equal(ds.gw(0).du, g.du.astype(np.float32))
    assert np.array_equal(ds.label(recs[0]).tl_db, lab.tl_db)


def test_dataset_corruption_names_file(tmp_path):
    recs, *_ = _tiny_dataset(tmp_path)
    path = os.path.join(tmp_path, recs[0].label)
    with open(path, "a") as fh:
        fh.write("999,0\n")
    with pytest.raises(ChecksumError, match=recs[0].sample_id):
        read_dataset(tmp_path)


def test_empty_dataset_round_trip(tmp_path):
    write_dataset(tmp_path, [], {}, {}, {})
    ds = read_dataset(tmp_path)
    assert ds.records == [] and ds.select("train") == []


def tiny_scheme():
    return DatabaseScheme(origins=((0.0, 0.0), (30.0, 60.0)), n_directions=1, n_gw=2, projections=(90.0,),
                          frequencies=(0.4,), split=SplitScheme(0, 1, (0.5, 0.0, 0.5)),
                          label_step_m=5000.0, label_points=20)


def test_build_database_resumes(tmp_path):
    z = np.arange(0.0, 130_001.0, 1000.0)
    grid = uniform_grid(288.15 - 1e-3 * np.minimum(z, 40e3) + 3e-3 * np.maximum(z - 40e3, 0), 10.0, 0.0, z,
                        lat_step_deg=30, lon_step_deg=30)
    out = str(tmp_path / "db")
    first = build_database(out, grid, tiny_scheme(), seed=1)
    assert first["computed"] == 4 and first["skipped"] == 0 and not first["failed"]
    with open(os.path.join(out, "manifest.jsonl"), "rb") as fh:
        manifest = fh.read()
    again = build_database(out, grid, tiny_scheme(), seed=1)
    assert again["computed"] == 0 and again["skipped"] == 4
    with open(os.path.join(out, "manifest.jsonl"), "rb") as fh:
        assert fh.read() == manifest
    ds = read_dataset(out)
    assert len(ds.records) == 4 and ds.norm is not None
    x, f, y = ds.arrays(ds.select("train"))
    assert x.shape == (1, 433, 40) and y.shape == (1, 20) and x.dtype == np.float32
