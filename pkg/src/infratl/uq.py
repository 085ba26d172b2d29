"""Predictive spread: MC dropout, test-time augmentation over GW fields, and both.

All spreads are population standard deviations.  Means are taken as the
first sample plus the mean deviation from it, so a set of identical curves
has exactly zero spread.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .crnn.model import Dropout, predict_batch
from .datapipe import NormStats
from .errors import ConfigError, FormatError
from .gwfield import perturb_slice


@dataclass(frozen=True)
class UncertaintyEstimate:
    mean_curve: np.ndarray
    std_curve: np.ndarray
    range_axis_m: np.ndarray
    n_mc: int
    n_tta: int
    component: str
    extra: dict = field(default_factory=dict, compare=False)

    def to_csv(self):
        head = {"component": self.component, "n_mc": self.n_mc, "n_tta": self.n_tta}
        lines = ["# " + json.dumps(head, sort_keys=True), "range_km,mean_db,std_db"]
        lines += ["%.17g,%.17g,%.17g" % (r / 1000.0, m, s)
                  for r, m, s in zip(self.range_axis_m, self.mean_curve, self.std_curve)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if len(lines) < 2 or not lines[0].startswith("# ") or lines[1] != "range_km,mean_db,std_db":
            raise FormatError("not an uncertainty csv")
        head = json.loads(lines[0][2:])
        arr = np.array([ln.split(",") for ln in lines[2:] if ln.strip()], float).reshape(-1, 3)
        return cls(arr[:, 1], arr[:, 2], arr[:, 0] * 1000.0, head["n_mc"], head["n_tta"], head["component"])


def sample_mean(samples, axis=0):
    s = np.asarray(samples, np.float64)
    first = np.take(s, [0], axis=axis)
    return np.squeeze(first, axis) + np.mean(s - first, axis=axis)


def population_var(samples, axis=0):
    s = np.asarray(samples, np.float64)
    m = np.expand_dims(sample_mean(s, axis), axis)
    return np.mean((s - m) ** 2, axis=axis)


def population_std(samples, axis=0):
    return np.sqrt(population_var(samples, axis))


def _prepare(ckpt, slices, frequency):
    norm = NormStats.from_dict(ckpt.norm)
    x = np.stack([norm.std_input(s.c_ratio) for s in slices]).astype(np.float32)
    f = np.full(len(slices), norm.std_freq(float(frequency)), np.float32)
    return norm, x, f


def _predict(ckpt, x, f, drop=None, chunk=32):
    """Forward pass; without active dropout identical rows are evaluated once.

    BLAS blocking can round identical rows of one batch differently, so
    sharing the evaluation is what makes equal inputs give zero spread.
    """
    if drop is not None and ckpt.config.dropout > 0:
        return predict_batch(ckpt.params, ckpt.state, ckpt.config, x, f, chunk=chunk, drop=drop)
    first = {}
    idx = np.array([first.setdefault(x[i].tobytes() + f[i].tobytes(), i) for i in range(len(x))], int)
    uniq = np.unique(idx)
    y = predict_batch(ckpt.params, ckpt.state, ckpt.config, x[uniq], f[uniq], chunk=chunk)
    return y[np.searchsorted(uniq, idx)]


def _axis(ckpt):
    from .crnn.train import range_axis
    return range_axis(ckpt)


def mc_predictions(ckpt, slices, frequency, n, seed, pass_offset=0, chunk=32):
    """dB predictions of shape (len(slices), n, D) with dropout active.

    Pass ``k`` of slice ``i`` uses mask stream key (seed, pass_offset + i*n + k).
    """
    norm, x, f = _prepare(ckpt, slices, frequency)
    xs = np.repeat(x, n, axis=0)
    fs = np.repeat(f, n)
    keys = [(seed, pass_offset + j) for j in range(len(xs))]
    drop = Dropout("mc", row_keys=keys)
    y = _predict(ckpt, xs, fs, drop, chunk)
    return norm.unstd_tl(y.astype(np.float64)).reshape(len(slices), n, -1)


def mc_dropout_predict(ckpt, slc, frequency, n=100, seed=0, pass_offset=0):
    if n < 2:
        raise ConfigError("MC dropout needs n >= 2")
    preds = mc_predictions(ckpt, [slc], frequency, n, seed, pass_offset)[0]
    return UncertaintyEstimate(sample_mean(preds), population_std(preds), _axis(ckpt), n, 1, "epistemic")


def tta_predictions(ckpt, base_slice, gw_fields, frequency):
    slices = [perturb_slice(base_slice, g) for g in gw_fields]
    norm, x, f = _prepare(ckpt, slices, frequency)
    y = _predict(ckpt, x, f)
    return norm.unstd_tl(y.astype(np.float64))


def tta_predict(ckpt, base_slice, gw_fields, frequency):
    if len(gw_fields) < 2:
        raise ConfigError("test-time augmentation needs at least two GW realizations")
    preds = tta_predictions(ckpt, base_slice, gw_fields, frequency)
    return UncertaintyEstimate(sample_mean(preds), population_std(preds), _axis(ckpt), 1, len(gw_fields), "data")


def combined_uncertainty(ckpt, base_slice, gw_fields, frequency, n_mc=10, seed=0):
    """Pooled spread over the n_tta x n_mc grid of dropout passes per GW realization.

    Computed as mean within-realization variance plus variance of the
    realization means, which equals the pooled variance of the grid.
    """
    n_tta = len(gw_fields)
    if n_tta * n_mc < 4 or n_tta < 1 or n_mc < 1:
        raise ConfigError("combined uncertainty needs n_tta * n_mc >= 4")
    slices = [perturb_slice(base_slice, g) for g in gw_fields]
    grid = mc_predictions(ckpt, slices, frequency, n_mc, seed)
    means = sample_mean(grid, axis=1)
    within = np.mean(population_var(grid, axis=1), axis=0)
    between = population_var(means, axis=0)
    return UncertaintyEstimate(sample_mean(means), np.sqrt(within + between), _axis(ckpt), n_mc, n_tta,
                               "combined", {"within_var": within, "between_var": between, "grid": grid})
