"""Top-k gradient sparsification with momentum-corrected local accumulation.

Each node keeps a velocity ``u`` and a residual ``v``. Every round the raw
gradient is (optionally) clipped, folded in with ``u <- m*u + g`` and
``v <- v + u``, and the ``k`` largest ``|v|`` coordinates are sent and reset.
Unsent mass stays in ``v`` until it is large enough to be selected, so a
coordinate held for several rounds is eventually applied with exactly the
momentum-SGD weight it would have had.

Wire format of a :class:`SparseUpdate` (little-endian)::

    u32 round | u32 node_id | u32 dense_len | u32 count
    count * u32 indices (strictly increasing)
    count * f64 values
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .exceptions import CorruptUpdate, LengthMismatch, NonFiniteGradient

HEADER = struct.Struct("<4I")
HEADER_BYTES = HEADER.size
ENTRY_BYTES = 4 + 8
BROADCAST_NODE_ID = 0xFFFFFFFF


@dataclass(frozen=True)
class CompressorConfig:
    """``rho`` is a percentage: 0.3 keeps the top 0.3% of coordinates."""

    rho: float = 0.3
    momentum: float = 0.9
    clip_norm: Optional[float] = 1.0
    warmup_rounds: int = 0

    def __post_init__(self):
        if not 0 < self.rho <= 100:
            raise ValueError(f"rho must lie in (0, 100], got {self.rho}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive or None, got {self.clip_norm}")
        if self.warmup_rounds < 0:
            raise ValueError("warmup_rounds must be >= 0")


@dataclass
class CompressorState:
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, length: int) -> "CompressorState":
        return cls(u=np.zeros(length), v=np.zeros(length))

    def copy(self) -> "CompressorState":
        return CompressorState(self.u.copy(), self.v.copy())


@dataclass(frozen=True, eq=False)
class SparseUpdate:
    round: int
    node_id: int
    dense_len: int
    indices: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def nbytes(self) -> int:
        return encoded_size(len(self.indices))

    def encode(self) -> bytes:
        return encode_update(self)

    def __eq__(self, other):
        if not isinstance(other, SparseUpdate):
            return NotImplemented
        return (
            (self.round, self.node_id, self.dense_len) == (other.round, other.node_id, other.dense_len)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def keep_count(length: int, rho: float) -> int:
    """``max(1, floor(L * rho / 100))`` computed without float round-off."""
    return max(1, math.floor(length * Fraction(str(rho)) / 100))


def clip(grad, clip_norm: float):
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or inf")
    norm = float(np.linalg.norm(grad))
    if norm > clip_norm:
        return grad * (clip_norm / norm)
    return grad


def accumulate(state: CompressorState, grad, m: float) -> CompressorState:
    """Momentum-corrected accumulation: ``u <- m*u + g``, ``v <- v + u``.

    Works for any numeric dtype, including object arrays of Fractions.
    """
    grad = np.asarray(grad)
    if grad.shape != state.u.shape:
        raise LengthMismatch(f"gradient length {grad.shape} != state length {state.u.shape}")
    u = m * state.u + grad
    return CompressorState(u=u, v=state.v + u)


def topk_select(v, rho: float):
    """Indices (ascending) of the ``k`` largest ``|v_i|`` and the induced threshold.

    Ties are broken in favour of the lower index.
    """
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("cannot select from an empty vector")
    k = keep_count(v.size, rho)
    mag = np.abs(v)
    order = np.argsort(-mag, kind="stable")[:k]
    thr = mag[order[-1]]
    return np.sort(order), thr


def compress(state: CompressorState, round: int, node_id: int, cfg: CompressorConfig):
    """Emit the selected residual coordinates and clear them in ``v``.

    During the first ``cfg.warmup_rounds`` rounds every coordinate is sent.
    """
    L = state.v.shape[0]
    if round < cfg.warmup_rounds or keep_count(L, cfg.rho) >= L:
        idx = np.arange(L)
    else:
        idx, _ = topk_select(state.v, cfg.rho)
    update = SparseUpdate(
        round=int(round),
        node_id=int(node_id),
        dense_len=L,
        indices=idx.astype(np.int64),
        values=state.v[idx].copy(),
    )
    v = state.v.copy()
    v[idx] = 0
    return update, CompressorState(u=state.u.copy(), v=v)


def decode(update: SparseUpdate) -> np.ndarray:
    idx = np.asarray(update.indices)
    vals = np.asarray(update.values, dtype=np.float64)
    if idx.shape != vals.shape or idx.ndim != 1:
        raise CorruptUpdate(f"{idx.shape[0]} indices but {vals.shape[0]} values")
    if idx.size > update.dense_len:
        raise CorruptUpdate("more entries than the dense length")
    if idx.size:
        if idx.min() < 0 or idx.max() >= update.dense_len:
            raise CorruptUpdate(f"index out of range [0, {update.dense_len})")
        if np.any(np.diff(idx) <= 0):
            raise CorruptUpdate("indices must be unique and strictly increasing")
    dense = np.zeros(update.dense_len)
    dense[idx] = vals
    return dense


def encoded_size(count: int) -> int:
    return HEADER_BYTES + count * ENTRY_BYTES


def encode_update(update: SparseUpdate) -> bytes:
    count = len(update.indices)
    return b"".join(
        (
            HEADER.pack(update.round, update.node_id, update.dense_len, count),
            np.asarray(update.indices, dtype="<u4").tobytes(),
            np.asarray(update.values, dtype="<f8").tobytes(),
        )
    )


def decode_update_bytes(buf: bytes) -> SparseUpdate:
    if len(buf) < HEADER_BYTES:
        raise CorruptUpdate("buffer shorter than header")
    rnd, node, dense_len, count = HEADER.unpack_from(buf, 0)
    if len(buf) != encoded_size(count):
        raise CorruptUpdate(f"buffer has {len(buf)} bytes, header implies {encoded_size(count)}")
    idx = np.frombuffer(buf, dtype="<u4", count=count, offset=HEADER_BYTES).astype(np.int64)
    vals = np.frombuffer(buf, dtype="<f8", count=count, offset=HEADER_BYTES + 4 * count).astype(np.float64)
    update = SparseUpdate(rnd, node, dense_len, idx, vals)
    decode(update)
    return update


def broadcast_size(length: int) -> int:
    """Bytes of a dense parameter frame: same header, ``L`` f64 values, no indices."""
    return HEADER_BYTES + 8 * length


def encode_broadcast(round: int, params) -> bytes:
    params = np.asarray(params, dtype="<f8")
    return HEADER.pack(round, BROADCAST_NODE_ID, params.size, params.size) + params.tobytes()
