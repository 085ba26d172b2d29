"""Training loop, cross-validation driver and prediction."""

from dataclasses import asdict, dataclass
import math

import numpy as np

from ..errors import DomainError, NumericalError, ShapeError
from ..pe import TlCurve
from ..rng import stream
from . import layers as L
from .checkpoint import ModelCheckpoint
from .model import Dropout, ModelConfig, backward, forward, init_params, predict_batch


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 150
    patience: int = 20
    lr: float = 1e-4
    lr_factor: float = 0.1
    lr_patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # stop as soon as the validation loss reaches this value (0 disables)
    stop_at: float = 0.0


class PlateauTracker:
    """Best-validation bookkeeping with early stop and learning-rate decay.

    ``update`` returns (improved, reduce_lr, stop).  The LR counter restarts
    after each reduction; the early-stop counter only restarts on improvement.
    """

    def __init__(self, patience=20, lr_patience=10):
        self.patience = patience
        self.lr_patience = lr_patience
        self.best = math.inf
        self.stale = 0
        self.lr_stale = 0

    def update(self, val):
        if val < self.best:
            self.best = val
            self.stale = self.lr_stale = 0
            return True, False, False
        self.stale += 1
        self.lr_stale += 1
        reduce = self.lr_stale >= self.lr_patience
        if reduce:
            self.lr_stale = 0
        return False, reduce, self.stale >= self.patience


def batches(n, batch_size, rng):
    """Shuffled index batches; a trailing batch of one is merged into the previous."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def evaluate_rmse(params, state, cfg, x, f, y, chunk=64):
    if len(x) == 0:
        return float("nan")
    pred = predict_batch(params, state, cfg, x, f, chunk=chunk)
    return math.sqrt(float(np.mean((pred.astype(np.float64) - y) ** 2)))


def train(train_set, val_set, model_cfg=None, train_cfg=None, seed=0, norm=None, log=None, meta=None):
    """Fit a model; returns the checkpoint holding the best-validation parameters.

    ``train_set``/``val_set`` are standardized (x, f, y) arrays.
    """
    model_cfg = model_cfg or ModelConfig()
    tc = train_cfg or TrainConfig()
    xt, ft, yt = train_set
    xv, fv, yv = val_set
    if len(xt) < 2:
        raise ShapeError("need at least two training samples")
    if yt.shape[1] != model_cfg.output_width:
        raise ShapeError("labels have %d points, model outputs %d" % (yt.shape[1], model_cfg.output_width))
    params, state = init_params(model_cfg, seed)
    # start the head at the mean training curve so early steps fit shape, not offset
    params["head.b"][:] = np.mean(yt, axis=0)
    opt = L.AdamState()
    lr = tc.lr
    tracker = PlateauTracker(tc.patience, tc.lr_patience)
    best = ({k: v.copy() for k, v in params.items()}, dict(state))
    history = []
    for epoch in range(tc.max_epochs):
        losses = []
        for b, idx in enumerate(batches(len(xt), tc.batch_size, stream(seed, 0x7A, epoch))):
            drop = Dropout("train", stream(seed, 0xD0, epoch, b))
            y, cache, state = forward(params, state, model_cfg, xt[idx], ft[idx], drop=drop,
                                      bn_train=True, keep_cache=True)
            loss, dy = L.rmse_loss(y, yt[idx])
            if not math.isfinite(loss):
                raise NumericalError("training loss is not finite at epoch %d, batch %d" % (epoch, b))
            grads = backward(dy, cache, model_cfg)
            L.adam_step(params, grads, opt, lr, tc.beta1, tc.beta2, tc.adam_eps)
            losses.append(loss)
        val = evaluate_rmse(params, state, model_cfg, xv, fv, yv) if len(xv) else float(np.mean(losses))
        improved, reduce, stop = tracker.update(val)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val, "lr": lr}
        history.append(entry)
        if log:
            log(entry)
        if improved:
            best = ({k: v.copy() for k, v in params.items()}, dict(state))
        if stop or val <= tc.stop_at:
            break
        if reduce:
            lr *= tc.lr_factor
    m = dict(meta or {})
    m["train_config"] = asdict(tc)
    return ModelCheckpoint(model_cfg, best[0], best[1], norm.to_dict() if norm is not None else {},
                           history, seed, m)


def best_val(ckpt):
    return min((h["val_loss"] for h in ckpt.history), default=math.inf)


def cross_validate(make_sets, runs, model_cfg=None, train_cfg=None, seed=0, log=None, meta=None):
    """Train ``runs`` models on independent train/val selections.

    ``make_sets(selection)`` returns (train_set, val_set, norm).  Returns
    (all checkpoints, index of the lowest best-validation run).
    """
    ckpts = []
    for r in range(runs):
        tr, va, norm = make_sets(r)
        run_log = (lambda e, r=r: log(dict(e, run=r))) if log else None
        m = dict(meta or {}, selection=r)
        ckpts.append(train(tr, va, model_cfg, train_cfg, int(stream(seed, 0xC5, r).integers(2 ** 62)),
                           norm, run_log, m))
    scores = [best_val(c) for c in ckpts]
    return ckpts, int(np.argmin(scores))


def predict(ckpt, slices, frequencies, chunk=32):
    """TL curves in dB for standard-grid slices; a single slice gives a single curve."""
    from ..datapipe import NormStats

    single = not isinstance(slices, (list, tuple))
    slices = [slices] if single else list(slices)
    freqs = np.broadcast_to(np.asarray(frequencies, float), (len(slices),))
    if np.any(~(freqs > 0)):
        raise DomainError("frequency must be a positive number")
    norm = NormStats.from_dict(ckpt.norm)
    shape = tuple(ckpt.config.input_shape)
    for s in slices:
        if s.c_ratio.shape != shape:
            raise ShapeError("slice shape %s, model expects %s" % (s.c_ratio.shape, shape))
    x = np.stack([norm.std_input(s.c_ratio) for s in slices]).astype(np.float32) if slices else \
        np.zeros((0,) + shape, np.float32)
    f = norm.std_freq(freqs).astype(np.float32)
    y = predict_batch(ckpt.params, ckpt.state, ckpt.config, x, f, chunk=chunk)
    curves = tl_curves(ckpt, norm.unstd_tl(y.astype(np.float64)), freqs)
    return curves[0] if single else curves


def range_axis(ckpt):
    step = float(ckpt.meta.get("label_step_m", 5000.0))
    return step * np.arange(1, ckpt.config.output_width + 1)


def tl_curves(ckpt, tl, freqs):
    r = range_axis(ckpt)
    return [TlCurve(row, r, f) for row, f in zip(tl, freqs)]
