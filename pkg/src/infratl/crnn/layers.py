"""Layer kernels with hand-written backward passes.

Tensors are plain numpy arrays.  Images are NHWC, sequences are (batch,
steps, features).  Every forward returns ``(output, cache)`` and the
matching ``*_grad`` consumes the cache; the arithmetic follows the input
dtype so the same code runs in float32 for training and float64 for
finite-difference checks.
"""

import math

import numpy as np

from ..errors import DataError, ShapeError
from ..rng import stream


def glorot_init(shape, rng, dtype=np.float32):
    """Uniform on +-sqrt(6 / (fan_in + fan_out)).

    2D shapes are (in, out); 4D conv kernels are (kh, kw, c_in, c_out).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        rf = shape[0] * shape[1]
        fan_in, fan_out = shape[2] * rf, shape[3] * rf
    else:
        raise ShapeError("cannot derive fans from shape %s" % (shape,))
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape).astype(dtype)


# -- activations -------------------------------------------------------------

def activate(x, kind):
    if kind == "linear":
        return x
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0)
    raise ValueError("unknown activation %r" % kind)


def activate_grad(dy, y, kind):
    """Gradient through an activation given its *output* y."""
    if kind == "linear":
        return dy
    if kind == "tanh":
        return dy * (1 - y * y)
    if kind == "relu":
        return dy * (y > 0)
    raise ValueError("unknown activation %r" % kind)


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1 + e)
    return out


# -- convolution ---------------------------------------------------------------

def conv2d(x, W, b, activation="linear"):
    """Stride-1 'same' convolution (cross-correlation), x: (B,H,W,C), W: (kh,kw,C,F).

    The kw horizontal shifts are stacked along channels once; each kernel
    row is then a single matmul over a contiguous window of image rows.
    """
    if x.ndim != 4 or W.ndim != 4 or x.shape[3] != W.shape[2]:
        raise ShapeError("conv2d: input %s incompatible with kernel %s" % (x.shape, W.shape))
    kh, kw, C, F = W.shape
    B, H, Wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    n = H * Wd
    if kh * kw * C <= 16:
        # few input channels: a full im2col keeps the matmul from being memory bound
        cols = np.concatenate([xp[:, i:i + H, j:j + Wd, :] for i in range(kh) for j in range(kw)], axis=3)
        cols = cols.reshape(B * n, kh * kw * C)
        y = cols @ W.reshape(kh * kw * C, F)
        y += b
        y = activate(y.reshape(B, H, Wd, F), activation)
        return y, (cols, W, y, activation)
    xw = np.concatenate([xp[:, :, j:j + Wd, :] for j in range(kw)], axis=3)
    xw = xw.reshape(B, (H + kh - 1) * Wd, kw * C)
    y = xw[:, :n] @ W[0].reshape(kw * C, F)
    for i in range(1, kh):
        y += xw[:, i * Wd:i * Wd + n] @ W[i].reshape(kw * C, F)
    y += b
    y = activate(y.reshape(B, H, Wd, F), activation)
    return y, (xw, W, y, activation)


def conv2d_grad(dy, cache):
    """Returns (dx, dW, db)."""
    xw, W, y, activation = cache
    dy = activate_grad(dy, y, activation)
    kh, kw, C, F = W.shape
    B, H, Wd, _ = dy.shape
    n = H * Wd
    ph, pw = kh // 2, kw // 2
    if xw.ndim == 2:
        dyf = dy.reshape(B * n, F)
        dW = (xw.T @ dyf).reshape(W.shape)
        dcols = (dyf @ W.reshape(-1, F).T).reshape(B, H, Wd, kh * kw, C)
        dxp = np.zeros((B, H + kh - 1, Wd + kw - 1, C), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + H, j:j + Wd, :] += dcols[:, :, :, i * kw + j, :]
        return dxp[:, ph:ph + H, pw:pw + Wd, :], dW, dyf.sum(axis=0)
    dy2 = dy.reshape(B, n, F)
    dyf = dy2.reshape(B * n, F)
    dW = np.empty_like(W)
    dxw = np.zeros_like(xw)
    for i in range(kh):
        win = xw[:, i * Wd:i * Wd + n]
        dW[i] = (win.reshape(B * n, kw * C).T @ dyf).reshape(kw, C, F)
        dxw[:, i * Wd:i * Wd + n] += dy2 @ W[i].reshape(kw * C, F).T
    dxw = dxw.reshape(B, H + kh - 1, Wd, kw, C)
    dxp = np.zeros((B, H + kh - 1, Wd + kw - 1, C), dtype=dy.dtype)
    for j in range(kw):
        dxp[:, :, j:j + Wd, :] += dxw[:, :, :, j, :]
    return dxp[:, ph:ph + H, pw:pw + Wd, :], dW, dyf.sum(axis=0)


# -- pooling -------------------------------------------------------------------

def pool_out_shape(h, w):
    return -(-h // 2), -(-w // 2)


def maxpool2d_ceil(x, with_index=True):
    """2x2 max pooling with ceil-mode output size.

    Ties go to the first element of the window in row-major order.  The
    window index is only built when ``with_index`` (needed for backward).
    """
    B, H, W, C = x.shape
    Ho, Wo = pool_out_shape(H, W)
    if H % 2 or W % 2:
        xp = np.full((B, 2 * Ho, 2 * Wo, C), -np.inf, dtype=x.dtype)
        xp[:, :H, :W] = x
    else:
        xp = x
    views = (xp[:, 0::2, 0::2], xp[:, 0::2, 1::2], xp[:, 1::2, 0::2], xp[:, 1::2, 1::2])
    y = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    if not with_index:
        return y, None
    idx = np.full(y.shape, 3, dtype=np.int8)
    for k in (2, 1, 0):
        idx[views[k] == y] = k
    return y, (idx, x.shape)


def maxpool2d_grad(dy, cache):
    idx, shape = cache
    B, H, W, C = shape
    Ho, Wo = dy.shape[1:3]
    dx = np.zeros((B, 2 * Ho, 2 * Wo, C), dtype=dy.dtype)
    for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, a::2, b::2] = np.where(idx == k, dy, 0)
    return dx[:, :H, :W]


# -- dropout -------------------------------------------------------------------

def dropout_mask(shape, rate, rng, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1 - rate)


def dropout(x, rate, mode, rng=None, row_keys=None, layer=0):
    """Inverted dropout.

    mode "train": masks from ``rng`` (a Generator).  mode "mc": one mask per
    row from ``stream(*row_keys[i], layer)``, so a row's mask does not depend
    on what else is in the batch.  mode "infer": identity.
    """
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode == "infer" or rate == 0:
        return x, None
    if mode == "train":
        mask = dropout_mask(x.shape, rate, rng, x.dtype)
    elif mode == "mc":
        if row_keys is None or len(row_keys) != x.shape[0]:
            raise ValueError("mc dropout needs one key per batch row")
        mask = np.stack([dropout_mask(x.shape[1:], rate, stream(*k, layer), x.dtype) for k in row_keys])
    else:
        raise ValueError("unknown dropout mode %r" % mode)
    return x * mask, mask


def dropout_grad(dy, mask):
    return dy if mask is None else dy * mask


# -- GRU -----------------------------------------------------------------------

def gru(x, W, U, bx, bh, return_sequences=True, h0=None):
    """Gated recurrent unit, gates ordered [update z, reset r, candidate n].

        z = sig(x Wz + bxz + h Uz + bhz)
        r = sig(x Wr + bxr + h Ur + bhr)
        n = tanh(x Wn + bxn + r * (h Un + bhn))
        h' = (1 - z) * n + z * h
    """
    B, T, D = x.shape
    Hd = U.shape[0]
    if W.shape != (D, 3 * Hd):
        raise ShapeError("gru: input width %d incompatible with W %s" % (D, W.shape))
    xw = (x.reshape(B * T, D) @ W).reshape(B, T, 3 * Hd) + bx
    h = np.zeros((B, Hd), dtype=xw.dtype) if h0 is None else h0
    hs, steps = [], []
    for t in range(T):
        hu = h @ U + bh
        zr = _sigmoid(xw[:, t, :2 * Hd] + hu[:, :2 * Hd])
        z, r = zr[:, :Hd], zr[:, Hd:]
        n = np.tanh(xw[:, t, 2 * Hd:] + r * hu[:, 2 * Hd:])
        steps.append((h, z, r, n, hu[:, 2 * Hd:]))
        h = (1 - z) * n + z * h
        hs.append(h)
    out = np.stack(hs, axis=1) if return_sequences else h
    return out, (x, W, U, steps, return_sequences)


def gru_grad(dout, cache):
    """Returns (dx, dW, dU, dbx, dbh)."""
    x, W, U, steps, return_sequences = cache
    B, T, D = x.shape
    Hd = U.shape[0]
    dxw = np.empty((B, T, 3 * Hd), dtype=dout.dtype)
    dU = np.zeros_like(U)
    dbh = np.zeros(3 * Hd, dtype=dout.dtype)
    dh = np.zeros((B, Hd), dtype=dout.dtype)
    for t in reversed(range(T)):
        dh = dh + (dout[:, t] if return_sequences else (dout if t == T - 1 else 0))
        h, z, r, n, hun = steps[t]
        dn = dh * (1 - z)
        dz = dh * (h - n)
        dhn = dn * (1 - n * n)            # wrt candidate pre-activation
        dr = dhn * hun
        dzp = dz * z * (1 - z)
        drp = dr * r * (1 - r)
        dhu = np.concatenate([dzp, drp, dhn * r], axis=1)
        dxw[:, t] = np.concatenate([dzp, drp, dhn], axis=1)
        dU += h.T @ dhu
        dbh += dhu.sum(axis=0)
        dh = dh * z + dhu @ U.T
    dxw2 = dxw.reshape(B * T, 3 * Hd)
    dW = x.reshape(B * T, D).T @ dxw2
    dx = (dxw2 @ W.T).reshape(B, T, D)
    dbx = dxw2.sum(axis=0)
    return dx, dW, dU, dbx, dbh


# -- batch normalization -----------------------------------------------------

def batchnorm(x, gamma, beta, running_mean, running_var, mode, momentum=0.99, eps=1e-5):
    """Per-feature normalization of (B, F) input.

    Returns ``(y, cache, (new_mean, new_var))``; running statistics only move
    in training mode (``new = momentum * old + (1 - momentum) * batch``).
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise DataError("batch normalization needs at least 2 rows in training mode")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        new = (momentum * running_mean + (1 - momentum) * mu,
               momentum * running_var + (1 - momentum) * var)
    else:
        mu, var, new = running_mean, running_var, (running_mean, running_var)
    inv = 1 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = gamma * xhat + beta
    return y, (xhat, inv, gamma, mode == "train"), new


def batchnorm_grad(dy, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma, batch_stats = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if batch_stats:
        n = dy.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


# -- dense ---------------------------------------------------------------------

def dense(x, W, b, activation="linear"):
    if x.shape[-1] != W.shape[0]:
        raise ShapeError("dense: input width %d does not match W %s" % (x.shape[-1], W.shape))
    y = activate(x @ W + b, activation)
    return y, (x, W, y, activation)


def dense_grad(dy, cache):
    x, W, y, activation = cache
    dy = activate_grad(dy, y, activation)
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# -- loss and optimizer --------------------------------------------------------

def rmse_loss(pred, target, eps=1e-12):
    """Root mean squared error over every element, with its gradient."""
    if pred.shape != target.shape:
        raise ShapeError("rmse: shapes %s and %s differ" % (pred.shape, target.shape))
    diff = pred - target
    loss = math.sqrt(float(np.mean(diff.astype(np.float64) ** 2)))
    grad = diff / (diff.size * max(loss, eps))
    return loss, grad.astype(pred.dtype)


class AdamState:
    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of every key present in ``grads``."""
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for k, g in grads.items():
        p = params[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params, state
