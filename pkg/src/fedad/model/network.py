"""Forward and exact backward pass of the attention-gated CNN-LSTM forecaster.

Pipeline for one history window ``(T, d)``::

    CNN stack (valid conv -> ReLU -> max-pool)       -> features (n, m)
    attention branch (same conv -> ReLU -> pool)*,
        1x1 conv, nearest upsample to n, sigmoid    -> gate (n, m)
    fused = features * gate
    LSTM over the n fused rows, final hidden state
    linear projection                                -> prediction (T, d)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeMismatch, StaleTape
from . import layers
from .params import ArchConfig, ParameterSet


@dataclass
class ForwardTape:
    x: np.ndarray
    prediction: np.ndarray
    single: bool
    param_len: int
    cnn: list = field(default_factory=list)
    att: list = field(default_factory=list)
    features: np.ndarray | None = None
    att_z: np.ndarray | None = None
    gate: np.ndarray | None = None
    lstm: list = field(default_factory=list)
    h_last: np.ndarray | None = None


def _relu(x):
    return np.maximum(x, 0.0)


def _attention_forward(features, params: ParameterSet, arch: ArchConfig):
    n = features.shape[1]
    z = features
    caches = []
    for j, (_, width) in enumerate(arch.attention_stages):
        a, xp = layers.conv1d_same(z, params[f"att.{j}.kernel"], params[f"att.{j}.bias"])
        z, pool_cache = layers.maxpool(_relu(a), width)
        caches.append((xp, a, pool_cache))
    s = z @ params["att.proj.kernel"][0] + params["att.proj.bias"]
    gate = layers.sigmoid(layers.upsample(s, n))
    return gate, z, caches


def attention_branch(features, params: ParameterSet) -> np.ndarray:
    """Gate in (0, 1) with the same shape as ``features`` (``(n, m)`` or batched)."""
    fb, single = layers._as_batch(features)
    _, m = params.arch.feature_shape()
    if fb.shape[2] != m:
        raise ShapeMismatch(f"features have {fb.shape[2]} channels, branch expects {m}")
    gate, _, _ = _attention_forward(fb, params, params.arch)
    return gate[0] if single else gate


def forward(history, params: ParameterSet, cfg: ArchConfig | None = None):
    """Predict the next ``T`` steps for one ``(T, d)`` window or a ``(B, T, d)`` batch."""
    arch = cfg or params.arch
    if arch != params.arch:
        raise ShapeMismatch("ArchConfig does not match the parameter set")
    x, single = layers._as_batch(history)
    if x.shape[1:] != (arch.window, arch.input_dims):
        raise ShapeMismatch(f"window shape {x.shape[1:]} != ({arch.window}, {arch.input_dims})")
    tape = ForwardTape(x=x, prediction=None, single=single, param_len=len(params))

    h = x
    for j, width in enumerate(arch.pool_widths):
        a = layers.conv1d_valid(h, params[f"cnn.{j}.kernel"], params[f"cnn.{j}.bias"])
        pooled, pool_cache = layers.maxpool(_relu(a), width)
        tape.cnn.append((h, a, pool_cache))
        h = pooled
    tape.features = h

    if arch.attention:
        gate, z, caches = _attention_forward(h, params, arch)
        tape.gate, tape.att_z, tape.att = gate, z, caches
        seq = layers.fuse(h, gate)
    else:
        seq = h

    p = params.lstm()
    B, n, _ = seq.shape
    H = arch.lstm_hidden
    h_t = np.zeros((B, H))
    C_t = np.zeros((B, H))
    for t in range(n):
        h_t, C_t, cache = layers.lstm_step(seq[:, t, :], h_t, C_t, p)
        tape.lstm.append(cache)
    tape.h_last = h_t

    y = h_t @ params["out.weight"].T + params["out.bias"]
    pred = y.reshape(B, arch.window, arch.input_dims)
    tape.prediction = pred
    return (pred[0] if single else pred), tape


def backward(tape: ForwardTape, target, params: ParameterSet, lam: float = 0.0):
    """Mean-squared-error loss (plus ``lam * ||w||^2``) and its exact gradient.

    The loss is averaged over every predicted value of every window in the
    batch, so a batch gradient equals the mean of per-window gradients.
    """
    arch = params.arch
    target = np.asarray(target, dtype=np.float64)
    if tape.single and target.ndim == 2:
        target = target[None]
    if target.shape != tape.prediction.shape or tape.param_len != len(params):
        raise StaleTape(
            f"target {target.shape} / params {len(params)} do not match tape "
            f"{tape.prediction.shape} / {tape.param_len}"
        )
    B = target.shape[0]
    diff = tape.prediction - target
    loss = float(np.mean(diff * diff))
    grads = ParameterSet(arch)
    g = grads.tensors

    dy = (2.0 / diff.size) * diff.reshape(B, -1)
    g["out.weight"][...] = dy.T @ tape.h_last
    g["out.bias"][...] = dy.sum(axis=0)
    dh = dy @ params["out.weight"]

    p = params.lstm()
    lstm_grads = {name[5:]: t for name, t in g.items() if name.startswith("lstm.")}
    n = len(tape.lstm)
    dseq = np.zeros((B, n, tape.features.shape[2]))
    dC = np.zeros_like(dh)
    for t in range(n - 1, -1, -1):
        dh, dC, dx = layers.lstm_step_backward(dh, dC, tape.lstm[t], p, lstm_grads)
        dseq[:, t, :] = dx

    if arch.attention:
        gate = tape.gate
        dfeat = dseq * gate
        dup = dseq * tape.features * gate * (1.0 - gate)
        ds = layers.upsample_backward(dup, tape.att_z.shape[1])
        g["att.proj.kernel"][0] = np.einsum("bni,bno->io", tape.att_z, ds, optimize=True)
        g["att.proj.bias"][...] = ds.sum(axis=(0, 1))
        dz = ds @ params["att.proj.kernel"][0].T
        for j in range(len(arch.attention_stages) - 1, -1, -1):
            xp, a, pool_cache = tape.att[j]
            dr = layers.maxpool_backward(dz, pool_cache, arch.attention_stages[j][1])
            dz, dk, db = layers.conv1d_same_backward(dr * (a > 0), xp, params[f"att.{j}.kernel"])
            g[f"att.{j}.kernel"][...] = dk
            g[f"att.{j}.bias"][...] = db
        dfeat = dfeat + dz
    else:
        dfeat = dseq

    dh_cnn = dfeat
    for j in range(len(arch.pool_widths) - 1, -1, -1):
        h_in, a, pool_cache = tape.cnn[j]
        dr = layers.maxpool_backward(dh_cnn, pool_cache, arch.pool_widths[j])
        dh_cnn, dk, db = layers.conv1d_valid_backward(dr * (a > 0), h_in, params[f"cnn.{j}.kernel"])
        g[f"cnn.{j}.kernel"][...] = dk
        g[f"cnn.{j}.bias"][...] = db

    grad = grads.flat
    if lam:
        w = params.flat
        loss += lam * float(w @ w)
        grad = grad + 2.0 * lam * w
    return loss, grad


def predict(histories, params: ParameterSet, batch_size: int = 512) -> np.ndarray:
    """Forecasts for a stack of windows, chunked to bound memory."""
    histories = np.asarray(histories, dtype=np.float64)
    out = [forward(histories[s : s + batch_size], params)[0] for s in range(0, len(histories), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.arch.window, params.arch.input_dims))


def loss_and_grad(histories, targets, params: ParameterSet, lam: float = 0.0):
    _, tape = forward(histories, params)
    return backward(tape, targets, params, lam)
