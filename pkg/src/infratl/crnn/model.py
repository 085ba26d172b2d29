"""Convolutional-recurrent TL surrogate.

Stack: three feature-extraction blocks (3x3 conv, 2x2 ceil max-pool, tanh,
dropout), an alignment that turns the (alt, range, channel) volume into a
range sequence, two GRUs, the standardized frequency appended to the final
state, three dense blocks (batchnorm, relu dense, dropout), and a
batchnorm + linear head.

The conv blocks run conv -> pool -> tanh, which equals conv -> tanh -> pool
because tanh is increasing, and pools four times fewer values.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError
from ..rng import stream
from . import layers as L


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple = (433, 40)
    filters: tuple = (64, 128, 256)
    kernel: int = 3
    dropout: float = 0.35
    gru_hidden: int = 512
    dft_widths: tuple = (2048, 1536, 1024)
    output_width: int = 800
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    # second GRU emits its final state only
    gru2_sequence: bool = False

    def __post_init__(self):
        for name in ("input_shape", "filters", "dft_widths"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.gru2_sequence:
            raise NotImplementedError("only the final-state variant of the second GRU is built")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def latent_shape(self):
        h, w = self.input_shape
        for _ in self.filters:
            h, w = L.pool_out_shape(h, w)
        return h, w, self.filters[-1]


DESK_MODEL = ModelConfig(filters=(16, 32, 64), gru_hidden=128, dft_widths=(256, 192, 128),
                         output_width=200)


def param_shapes(cfg):
    """Ordered {name: shape} of trainable tensors."""
    shapes = {}
    c_in = 1
    k = cfg.kernel
    for i, f in enumerate(cfg.filters):
        shapes["cfe%d.W" % i] = (k, k, c_in, f)
        shapes["cfe%d.b" % i] = (f,)
        c_in = f
    h, w, c = cfg.latent_shape()
    d, H = h * c, cfg.gru_hidden
    for name, d_in in (("gru0", d), ("gru1", H)):
        shapes[name + ".W"] = (d_in, 3 * H)
        shapes[name + ".U"] = (H, 3 * H)
        shapes[name + ".bx"] = (3 * H,)
        shapes[name + ".bh"] = (3 * H,)
    width = H + 1
    for i, out in enumerate(cfg.dft_widths):
        shapes["dft%d.gamma" % i] = (width,)
        shapes["dft%d.beta" % i] = (width,)
        shapes["dft%d.W" % i] = (width, out)
        shapes["dft%d.b" % i] = (out,)
        width = out
    shapes["head.gamma"] = (width,)
    shapes["head.beta"] = (width,)
    shapes["head.W"] = (width, cfg.output_width)
    shapes["head.b"] = (cfg.output_width,)
    return shapes


def bn_names(cfg):
    return ["dft%d" % i for i in range(len(cfg.dft_widths))] + ["head"]


def param_count(cfg):
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg, seed, dtype=np.float32):
    """Glorot kernels, zero biases, unit batchnorm scales.  Returns (params, state)."""
    params = {}
    for i, (name, shape) in enumerate(param_shapes(cfg).items()):
        kind = name.rsplit(".", 1)[1]
        if kind in ("W", "U"):
            params[name] = L.glorot_init(shape, stream(seed, 0x1A17, i), dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype)
        else:
            params[name] = np.zeros(shape, dtype)
    state = {}
    for name in bn_names(cfg):
        width = params[name + ".gamma"].shape[0]
        state[name + ".mean"] = np.zeros(width, dtype)
        state[name + ".var"] = np.ones(width, dtype)
    return params, state


def check_pooling_chain(cfg):
    h, w, _ = cfg.latent_shape()
    if tuple(cfg.input_shape) == (433, 40) and len(cfg.filters) == 3 and (h, w) != (55, 5):
        raise ShapeError("pooling chain does not map (433, 40) to (55, 5)")
    return h, w


@dataclass
class Dropout:
    """How dropout behaves for one forward pass.

    mode "train" draws from ``rng``; mode "mc" keys every row's masks by
    ``row_keys[i] + (layer,)``; mode "infer" disables dropout.
    """
    mode: str = "infer"
    rng: object = None
    row_keys: list = field(default=None)


def forward(params, state, cfg, x, freq, drop=None, bn_train=False, keep_cache=False):
    """Forward pass.

    x: (B, n_alt, n_range) standardized slices; freq: (B,) standardized
    frequency.  Returns ``(y, cache, new_state)``.  Batchnorm uses batch
    statistics only when ``bn_train``.
    """
    drop = drop or Dropout()
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != tuple(cfg.input_shape):
        raise ShapeError("model input must be (batch, %d, %d), got %s" % (*cfg.input_shape, x.shape))
    dtype = params["head.W"].dtype
    B = x.shape[0]
    h = x.astype(dtype, copy=False)[..., None]
    freq = np.asarray(freq, dtype).reshape(B, 1)
    caches = []
    layer = 0

    def do_dropout(v):
        nonlocal layer
        out, mask = L.dropout(v, cfg.dropout, drop.mode, drop.rng, drop.row_keys, layer)
        layer += 1
        return out, mask

    for i in range(len(cfg.filters)):
        h, c_conv = L.conv2d(h, params["cfe%d.W" % i], params["cfe%d.b" % i])
        h, c_pool = L.maxpool2d_ceil(h, keep_cache)
        h = np.tanh(h)
        t_out = h
        h, mask = do_dropout(h)
        caches.append((c_conv, c_pool, t_out, mask))
    # alignment: (B, alt, range, ch) -> (B, range, alt*ch), altitude-major
    lat_shape = h.shape
    h = h.transpose(0, 2, 1, 3).reshape(B, lat_shape[2], lat_shape[1] * lat_shape[3])
    h, c_g0 = L.gru(h, params["gru0.W"], params["gru0.U"], params["gru0.bx"], params["gru0.bh"], True)
    h, c_g1 = L.gru(h, params["gru1.W"], params["gru1.U"], params["gru1.bx"], params["gru1.bh"], False)
    h = np.concatenate([h, freq], axis=1)
    new_state = dict(state)
    dense_caches = []
    for i in range(len(cfg.dft_widths)):
        n = "dft%d" % i
        h, c_bn, (m, v) = L.batchnorm(h, params[n + ".gamma"], params[n + ".beta"], state[n + ".mean"],
                                      state[n + ".var"], "train" if bn_train else "infer",
                                      cfg.bn_momentum, cfg.bn_eps)
        new_state[n + ".mean"], new_state[n + ".var"] = m, v
        h, c_d = L.dense(h, params[n + ".W"], params[n + ".b"], "relu")
        h, mask = do_dropout(h)
        dense_caches.append((c_bn, c_d, mask))
    h, c_bn, (m, v) = L.batchnorm(h, params["head.gamma"], params["head.beta"], state["head.mean"],
                                  state["head.var"], "train" if bn_train else "infer",
                                  cfg.bn_momentum, cfg.bn_eps)
    new_state["head.mean"], new_state["head.var"] = m, v
    y, c_head = L.dense(h, params["head.W"], params["head.b"])
    cache = None
    if keep_cache:
        cache = (caches, lat_shape, c_g0, c_g1, dense_caches, c_bn, c_head)
    return y, cache, new_state


def backward(dy, cache, cfg):
    """Gradients of every trainable tensor given dL/dy."""
    caches, lat_shape, c_g0, c_g1, dense_caches, c_bn_head, c_head = cache
    g = {}
    dh, g["head.W"], g["head.b"] = L.dense_grad(dy, c_head)
    dh, g["head.gamma"], g["head.beta"] = L.batchnorm_grad(dh, c_bn_head)
    for i in reversed(range(len(cfg.dft_widths))):
        n = "dft%d" % i
        c_bn, c_d, mask = dense_caches[i]
        dh = L.dropout_grad(dh, mask)
        dh, g[n + ".W"], g[n + ".b"] = L.dense_grad(dh, c_d)
        dh, g[n + ".gamma"], g[n + ".beta"] = L.batchnorm_grad(dh, c_bn)
    dh = dh[:, :-1]
    dh, g["gru1.W"], g["gru1.U"], g["gru1.bx"], g["gru1.bh"] = L.gru_grad(dh, c_g1)
    dh, g["gru0.W"], g["gru0.U"], g["gru0.bx"], g["gru0.bh"] = L.gru_grad(dh, c_g0)
    B = dh.shape[0]
    dh = dh.reshape(B, lat_shape[2], lat_shape[1], lat_shape[3]).transpose(0, 2, 1, 3)
    for i in reversed(range(len(cfg.filters))):
        c_conv, c_pool, t_out, mask = caches[i]
        dh = L.dropout_grad(dh, mask)
        dh = dh * (1 - t_out * t_out)
        dh = L.maxpool2d_grad(dh, c_pool)
        dh, g["cfe%d.W" % i], g["cfe%d.b" % i] = L.conv2d_grad(dh, c_conv)
    return g


def predict_batch(params, state, cfg, x, freq, chunk=32, drop=None):
    """Inference-mode forward in chunks; rows are independent of each other."""
    x = np.asarray(x)
    freq = np.asarray(freq).reshape(-1)
    out = []
    for s in range(0, x.shape[0], chunk):
        d = drop
        if drop is not None and drop.row_keys is not None:
            d = Dropout(drop.mode, drop.rng, drop.row_keys[s:s + chunk])
        y, _, _ = forward(params, state, cfg, x[s:s + chunk], freq[s:s + chunk], drop=d)
        out.append(y)
    if not out:
        return np.zeros((0, cfg.output_width), params["head.W"].dtype)
    return np.concatenate(out, axis=0)
