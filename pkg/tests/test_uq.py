import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infratl.atmosphere import AtmosphericSlice
from infratl.crnn.checkpoint import ModelCheckpoint
from infratl.crnn.model import ModelConfig, init_params
from infratl.datapipe import STD_ALT, STD_RANGE, NormStats
from infratl.errors import ConfigError, FormatError
from infratl.gwfield import GwRealization, GwSpectrumParams
from infratl.uq import (UncertaintyEstimate, combined_uncertainty, mc_dropout_predict, mc_predictions,
                        population_std, population_var, sample_mean, tta_predict, tta_predictions)

SMALL = dict(input_shape=(433, 40), filters=(2, 2, 2), gru_hidden=6, dft_widths=(16, 12), output_width=50)


def make_ckpt(rate, seed=0):
    cfg = ModelConfig(dropout=rate, **SMALL)
    params, state = init_params(cfg, seed)
    # non-trivial running statistics so the head is not a pure bias
    state = {k: (v + 0.5 if k.endswith(".var") else v) for k, v in state.items()}
    norm = NormStats(1.0, 0.05, -60.0, 15.0, 0.25, 0.15).to_dict()
    return ModelCheckpoint(cfg, params, state, norm, [], seed, {"label_step_m": 5000.0})


def base_slice():
    c = 1.0 + 0.1 * np.sin(STD_ALT / 15_000.0)[:, None] * np.linspace(0.8, 1.2, 40)[None, :]
    c[0] = 1.0
    return AtmosphericSlice(c, STD_ALT, STD_RANGE, ground_ceff_ms=np.full(40, 340.0))


def gw(seed, scale=10.0):
    du = scale * np.random.default_rng(seed).normal(size=(433, 40))
    return GwRealization(du, STD_ALT, STD_RANGE, seed, GwSpectrumParams())


def test_statistics_helpers():
    s = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
    np.testing.assert_allclose(sample_mean(s), [3.0, 6.0])
    np.testing.assert_allclose(population_var(s), np.var(s, axis=0), rtol=1e-15)
    same = np.full((7, 3), 0.1 + 0.2)
    assert not population_std(same).any()


@settings(max_examples=60)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2 ** 31))
def test_law_of_total_variance_identity(n_tta, n_mc, seed):
    grid = np.random.default_rng(seed).normal(size=(n_tta, n_mc, 3)) * 5 - 40
    pooled = population_var(grid.reshape(n_tta * n_mc, 3))
    within = np.mean(population_var(grid, axis=1), axis=0)
    between = population_var(sample_mean(grid, axis=1))
    np.testing.assert_allclose(pooled, within + between, rtol=1e-12, atol=1e-12)
    assert np.all(pooled >= between - 1e-12)


def test_dropout_rate_zero_gives_zero_std():
    est = mc_dropout_predict(make_ckpt(0.0), base_slice(), 0.4, n=20, seed=1)
    assert est.component == "epistemic" and est.n_mc == 20
    assert np.all(est.std_curve == 0.0)
    assert len(est.mean_curve) == 50 and est.range_axis_m[0] == 5000.0


def test_mc_dropout_spreads_and_is_deterministic():
    ck = make_ckpt(0.35)
    a = mc_dropout_predict(ck, base_slice(), 0.4, n=100, seed=4)
    b = mc_dropout_predict(ck, base_slice(), 0.4, n=100, seed=4)
    assert np.any(a.std_curve > 0) and np.all(a.std_curve >= 0)
    assert np.array_equal(a.mean_curve, b.mean_curve) and np.array_equal(a.std_curve, b.std_curve)
    with pytest.raises(ConfigError):
        mc_dropout_predict(ck, base_slice(), 0.4, n=1)


@pytest.fixture(scope="module")
def mc_runs():
    ck = make_ckpt(0.35)
    s = base_slice()
    return [mc_dropout_predict(ck, s, 0.4, n=1000, seed=k) for k in (11, 12)] + \
        [mc_dropout_predict(ck, s, 0.4, n=100, seed=13)]


def test_mc_clt_self_consistency(mc_runs):
    """Two independent n=1000 runs agree to 3 std/sqrt(1000) at 99% of nodes."""
    a, b, _ = mc_runs
    bound = 3 * a.std_curve / math.sqrt(1000)
    frac = np.mean(np.abs(a.mean_curve - b.mean_curve) < bound)
    print("fraction of nodes within 3 std/sqrt(n): %.3f" % frac)
    assert frac >= 0.99


def test_mc_convergence(mc_runs):
    big, _, small = mc_runs
    rel = np.median(np.abs(small.std_curve - big.std_curve) / big.std_curve)
    assert rel < 0.15


def test_tta_identical_realizations_zero_std():
    g = gw(3)
    est = tta_predict(make_ckpt(0.35), base_slice(), [g, g, g], 0.4)
    assert est.component == "data" and est.n_tta == 3
    assert np.all(est.std_curve == 0.0)


def test_tta_std_matches_population_std():
    ck = make_ckpt(0.35)
    fields = [gw(s) for s in range(10)]
    est = tta_predict(ck, base_slice(), fields, 0.4)
    preds = tta_predictions(ck, base_slice(), fields, 0.4)
    assert preds.shape == (10, 50)
    np.testing.assert_allclose(est.std_curve, np.std(preds, axis=0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(est.mean_curve, np.mean(preds, axis=0), rtol=1e-12)
    assert np.any(est.std_curve > 0)
    with pytest.raises(ConfigError):
        tta_predict(ck, base_slice(), fields[:1], 0.4)


def test_combined_degenerate_cases():
    fields = [gw(s) for s in range(4)]
    s = base_slice()
    z = combined_uncertainty(make_ckpt(0.0), s, [fields[0]] * 3, 0.4, n_mc=3)
    assert np.all(z.std_curve == 0.0)
    c = combined_uncertainty(make_ckpt(0.0), s, fields, 0.4, n_mc=5)
    t = tta_predict(make_ckpt(0.0), s, fields, 0.4)
    assert np.array_equal(c.std_curve, t.std_curve)
    with pytest.raises(ConfigError):
        combined_uncertainty(make_ckpt(0.0), s, fields[:1], 0.4, n_mc=3)


def test_combined_ten_by_ten_total_variance():
    fields = [gw(s) for s in range(10)]
    est = combined_uncertainty(make_ckpt(0.35), base_slice(), fields, 0.4, n_mc=10, seed=2)
    grid = est.extra["grid"]
    assert grid.shape == (10, 10, 50) and est.n_tta == 10 and est.n_mc == 10
    pooled = population_var(grid.reshape(100, 50))
    np.testing.assert_allclose(est.std_curve ** 2, pooled, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(est.std_curve ** 2, est.extra["within_var"] + est.extra["between_var"],
                               rtol=1e-15)
    assert np.all(est.std_curve ** 2 >= est.extra["between_var"])


def test_mc_rows_keyed_by_pass_index():
    ck = make_ckpt(0.35)
    whole = mc_predictions(ck, [base_slice()], 0.4, 6, seed=5)[0]
    tail = mc_predictions(ck, [base_slice()], 0.4, 3, seed=5, pass_offset=3)[0]
    np.testing.assert_allclose(whole[3:], tail, rtol=1e-5, atol=1e-4)


def test_uncertainty_csv_round_trip():
    est = UncertaintyEstimate(np.linspace(0, -50, 5), np.linspace(0, 2, 5), 5000.0 * np.arange(1, 6), 10, 10,
                              "combined")
    back = UncertaintyEstimate.from_csv(est.to_csv())
    assert np.array_equal(back.mean_curve, est.mean_curve) and np.array_equal(back.std_curve, est.std_curve)
    np.testing.assert_allclose(back.range_axis_m, est.range_axis_m, rtol=1e-15)
    assert (back.n_mc, back.n_tta, back.component) == (10, 10, "combined")
    assert est.to_csv().splitlines()[1] == "range_km,mean_db,std_db"
    with pytest.raises(FormatError):
        UncertaintyEstimate.from_csv("range_km,mean_db,std_db\n")
