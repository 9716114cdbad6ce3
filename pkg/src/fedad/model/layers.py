"""Forward/backward primitives for the attention-CNN-LSTM forecaster.

Batched arrays are laid out ``(batch, steps, channels)``. Every ``*_backward``
takes the upstream gradient and whatever the matching forward cached, and
returns gradients in the same layout as the forward inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import DegenerateScores, ShapeMismatch

DEGENERATE_SUM = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatch(f"expected (n, c) or (batch, n, c) input, got shape {x.shape}")


# -- convolution --------------------------------------------------------------


def conv1d_valid(x, kernel, bias):
    """Valid cross-correlation of ``x`` (B, n, c) with ``kernel`` (k, c, c')."""
    k, c_in, c_out = kernel.shape
    B, n, c = x.shape
    if c != c_in:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {c_in}")
    if k > n:
        raise ShapeMismatch(f"kernel size {k} exceeds sequence length {n}")
    if bias.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({c_out},)")
    windows = sliding_window_view(x, k, axis=1)  # (B, n', c, k)
    return np.einsum("bick,kco->bio", windows, kernel, optimize=True) + bias


def conv1d_valid_backward(dout, x, kernel):
    k = kernel.shape[0]
    n_out = dout.shape[1]
    windows = sliding_window_view(x, k, axis=1)
    dkernel = np.einsum("bick,bio->kco", windows, dout, optimize=True)
    dbias = dout.sum(axis=(0, 1))
    dx = np.zeros_like(x)
    for j in range(k):
        dx[:, j : j + n_out, :] += dout @ kernel[j].T
    return dx, dkernel, dbias


def conv1d_forward(x, kernel, bias):
    """Public single/batched valid convolution: ``n' = n - k + 1``."""
    xb, single = _as_batch(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim == 1:
        kernel = kernel[:, None, None]
    bias = np.atleast_1d(np.asarray(bias, dtype=np.float64))
    if kernel.ndim != 3:
        raise ShapeMismatch(f"kernel must be (k, c, c'), got shape {kernel.shape}")
    out = conv1d_valid(xb, kernel, bias)
    return out[0] if single else out


def conv1d_same(x, kernel, bias):
    """Zero-padded convolution preserving length; ``k`` must be odd."""
    pad = (kernel.shape[0] - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    return conv1d_valid(xp, kernel, bias), xp


def conv1d_same_backward(dout, xp, kernel):
    pad = (kernel.shape[0] - 1) // 2
    dxp, dk, db = conv1d_valid_backward(dout, xp, kernel)
    n = xp.shape[1] - 2 * pad
    return dxp[:, pad : pad + n, :], dk, db


# -- pooling / resampling -----------------------------------------------------


def maxpool(x, width):
    """Ceil-mode max pooling along steps; the last window may be partial."""
    if width == 1:
        return x, None
    B, n, c = x.shape
    n_out = -(-n // width)
    pad = n_out * width - n
    if pad:
        x = np.concatenate([x, np.full((B, pad, c), -np.inf)], axis=1)
    r = x.reshape(B, n_out, width, c)
    arg = r.argmax(axis=2)
    out = np.take_along_axis(r, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (arg, n)


def maxpool_backward(dout, cache, width):
    if width == 1:
        return dout
    arg, n = cache
    B, n_out, c = dout.shape
    dr = np.zeros((B, n_out, width, c))
    np.put_along_axis(dr, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    return dr.reshape(B, n_out * width, c)[:, :n, :]


def pooled_length(n, width):
    return -(-n // width)


def upsample_index(n_small, n):
    """Nearest-neighbour source index for each of ``n`` output steps."""
    return (np.arange(n) * n_small) // n


def upsample(x, n):
    idx = upsample_index(x.shape[1], n)
    return x[:, idx, :]


def upsample_backward(dout, n_small):
    idx = upsample_index(n_small, dout.shape[1])
    dx = np.zeros((dout.shape[0], n_small, dout.shape[2]))
    np.add.at(dx, (slice(None), idx, slice(None)), dout)
    return dx


# -- attention ----------------------------------------------------------------


def attention_scores(u, V, W):
    """Bilinear attention: ``e_i = u^T W v_i``, ``alpha = e / sum(e)``, ``c = sum alpha_i v_i``.

    Scores are normalized by their plain sum, not a softmax. When the sum is
    not positive (or not finite) the weights fall back to uniform and a
    :class:`DegenerateScores` warning is emitted.
    """
    u = np.asarray(u, dtype=np.float64)
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.shape != (u.shape[0], V.shape[1]):
        raise ShapeMismatch(f"W {W.shape} incompatible with u {u.shape} and v {V.shape[1:]}")
    e = V @ (W.T @ u)
    total = e.sum()
    if not np.isfinite(total) or total <= DEGENERATE_SUM:
        warnings.warn(
            f"attention scores sum to {total!r}; using uniform weights",
            DegenerateScores,
            stacklevel=2,
        )
        alphas = np.full(len(e), 1.0 / len(e))
    else:
        alphas = e / total
    return alphas, alphas @ V


def fuse(w_cnn, w_att):
    w_cnn = np.asarray(w_cnn, dtype=np.float64)
    w_att = np.asarray(w_att, dtype=np.float64)
    if w_cnn.shape != w_att.shape:
        raise ShapeMismatch(f"feature shape {w_cnn.shape} != gate shape {w_att.shape}")
    return w_cnn * w_att


# -- LSTM ---------------------------------------------------------------------


@dataclass
class LstmState:
    h: np.ndarray
    C: np.ndarray


GATES = ("f", "i", "C", "o")


def lstm_step(x_t, h_prev, C_prev, p):
    """One Eq.-8 style step on batched rows; returns new (h, C) and the cache."""
    z = np.concatenate([h_prev, x_t], axis=-1)
    f = sigmoid(z @ p["W_f"].T + p["b_f"])
    i = sigmoid(z @ p["W_i"].T + p["b_i"])
    g = np.tanh(z @ p["W_C"].T + p["b_C"])
    o = sigmoid(z @ p["W_o"].T + p["b_o"])
    C = f * C_prev + i * g
    tC = np.tanh(C)
    h = o * tC
    return h, C, (z, f, i, g, o, C_prev, tC)


def lstm_step_backward(dh, dC, cache, p, grads):
    """Accumulate weight gradients into ``grads``; return (dh_prev, dC_prev, dx)."""
    z, f, i, g, o, C_prev, tC = cache
    do = dh * tC
    dC = dC + dh * o * (1.0 - tC * tC)
    da = {
        "f": dC * C_prev * f * (1.0 - f),
        "i": dC * g * i * (1.0 - i),
        "C": dC * i * (1.0 - g * g),
        "o": do * o * (1.0 - o),
    }
    dz = 0.0
    for gate in GATES:
        grads[f"W_{gate}"] += da[gate].T @ z
        grads[f"b_{gate}"] += da[gate].sum(axis=0)
        dz = dz + da[gate] @ p[f"W_{gate}"]
    H = dh.shape[-1]
    return dz[:, :H], dC * f, dz[:, H:]


def lstm_cell(x_t, prev: LstmState, params) -> LstmState:
    """Single LSTM cell update on unbatched or batched vectors."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(prev.h, dtype=np.float64)
    C_prev = np.asarray(prev.C, dtype=np.float64)
    H = params["W_f"].shape[0]
    if h_prev.shape[-1] != H or C_prev.shape[-1] != H:
        raise ShapeMismatch(f"state size {h_prev.shape[-1]} != hidden size {H}")
    if params["W_f"].shape[1] != H + x_t.shape[-1]:
        raise ShapeMismatch(
            f"W_f has {params['W_f'].shape[1]} columns, expected {H + x_t.shape[-1]}"
        )
    h, C, _ = lstm_step(x_t, h_prev, C_prev, params)
    return LstmState(h=h, C=C)
