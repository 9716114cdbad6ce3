"""Architecture config, named parameter tensors, and the checkpoint container.

Canonical flat order
--------------------
Tensors are flattened in C order and concatenated in this sequence:

1. ``cnn.{j}.kernel`` ``(k, c_in, c_out)`` then ``cnn.{j}.bias`` for each CNN layer ``j``
2. ``att.{j}.kernel`` / ``att.{j}.bias`` for each attention aggregation stage
3. ``att.proj.kernel`` ``(1, m, m)`` and ``att.proj.bias`` (the 1x1 convolution)
4. ``lstm.W_f, lstm.b_f, lstm.W_i, lstm.b_i, lstm.W_C, lstm.b_C, lstm.W_o, lstm.b_o``
   with weights shaped ``(hidden, hidden + m)`` acting on ``[h_{t-1}, x_t]``
5. ``out.weight`` ``(T*d, hidden)`` and ``out.bias`` ``(T*d,)``

Attention entries are absent when attention is disabled.
"""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..exceptions import ShapeMismatch
from .layers import pooled_length

CHECKPOINT_MAGIC = b"FEDADCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    input_dims: int = 1
    window: int = 16
    cnn_layers: tuple = ((3, 16), (3, 32))
    pool_widths: tuple = (2, 2)
    attention: bool = True
    attention_stages: tuple = ((3, 2), (3, 2))
    lstm_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "cnn_layers", tuple(tuple(int(v) for v in l) for l in self.cnn_layers))
        object.__setattr__(self, "pool_widths", tuple(int(p) for p in self.pool_widths))
        object.__setattr__(
            self, "attention_stages", tuple(tuple(int(v) for v in s) for s in self.attention_stages)
        )
        if self.input_dims < 1 or self.window < 1:
            raise ValueError("input_dims and window must be >= 1")
        if not self.cnn_layers:
            raise ValueError("at least one CNN layer is required")
        if len(self.pool_widths) != len(self.cnn_layers):
            raise ValueError("pool_widths needs one entry per CNN layer")
        if self.lstm_hidden < 1:
            raise ValueError("lstm_hidden must be >= 1")
        for k, c in self.cnn_layers:
            if k < 1 or k % 2 == 0 or c < 1:
                raise ValueError(f"CNN layer (kernel={k}, channels={c}) needs odd kernel >= 1")
        for k, p in self.attention_stages:
            if k < 1 or k % 2 == 0 or p < 1:
                raise ValueError(f"attention stage (kernel={k}, pool={p}) needs odd kernel >= 1")
        if any(p < 1 for p in self.pool_widths):
            raise ValueError("pool widths must be >= 1")
        self.feature_shape()

    def feature_shape(self) -> tuple[int, int]:
        """``(n, m)``: length and channel count of the CNN feature sequence."""
        n = self.window
        for (k, _), p in zip(self.cnn_layers, self.pool_widths):
            n = n - k + 1
            if n < 1:
                raise ValueError(f"window {self.window} too short for CNN stack {self.cnn_layers}")
            n = pooled_length(n, p)
        return n, self.cnn_layers[-1][1]

    @property
    def output_size(self) -> int:
        return self.window * self.input_dims

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_layers"] = [list(l) for l in self.cnn_layers]
        d["pool_widths"] = list(self.pool_widths)
        d["attention_stages"] = [list(s) for s in self.attention_stages]
        return d

    @classmethod
    def from_dict(cls, d) -> "ArchConfig":
        return cls(**d)


def param_layout(cfg: ArchConfig) -> list[tuple[str, tuple, int]]:
    """``(name, shape, fan_in)`` for every tensor, in canonical order."""
    layout = []
    c_in = cfg.input_dims
    for j, (k, c_out) in enumerate(cfg.cnn_layers):
        layout.append((f"cnn.{j}.kernel", (k, c_in, c_out), k * c_in))
        layout.append((f"cnn.{j}.bias", (c_out,), k * c_in))
        c_in = c_out
    _, m = cfg.feature_shape()
    if cfg.attention:
        for j, (k, _) in enumerate(cfg.attention_stages):
            layout.append((f"att.{j}.kernel", (k, m, m), k * m))
            layout.append((f"att.{j}.bias", (m,), k * m))
        layout.append(("att.proj.kernel", (1, m, m), m))
        layout.append(("att.proj.bias", (m,), m))
    H = cfg.lstm_hidden
    for gate in ("f", "i", "C", "o"):
        layout.append((f"lstm.W_{gate}", (H, H + m), H + m))
        layout.append((f"lstm.b_{gate}", (H,), H + m))
    layout.append(("out.weight", (cfg.output_size, H), H))
    layout.append(("out.bias", (cfg.output_size,), H))
    return layout


def param_count(cfg: ArchConfig) -> int:
    return sum(math.prod(shape) for _, shape, _ in param_layout(cfg))


class ParameterSet:
    """Named float64 tensors backed by one contiguous flat vector.

    Tensors are views into ``flat``; treat a ParameterSet as immutable and use
    :meth:`with_flat` to derive new ones.
    """

    def __init__(self, arch: ArchConfig, flat=None):
        self.arch = arch
        self.layout = param_layout(arch)
        size = sum(math.prod(shape) for _, shape, _ in self.layout)
        if flat is None:
            flat = np.zeros(size)
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ShapeMismatch(f"flat vector has shape {flat.shape}, expected ({size},)")
        self.flat = flat
        self.tensors = OrderedDict()
        offset = 0
        for name, shape, _ in self.layout:
            n = math.prod(shape)
            self.tensors[name] = flat[offset : offset + n].reshape(shape)
            offset += n

    def __len__(self):
        return self.flat.shape[0]

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def names(self):
        return list(self.tensors)

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    @classmethod
    def unflatten(cls, arch: ArchConfig, flat) -> "ParameterSet":
        return cls(arch, flat)

    @classmethod
    def from_tensors(cls, arch: ArchConfig, tensors) -> "ParameterSet":
        parts = []
        for name, shape, _ in param_layout(arch):
            t = np.asarray(tensors[name], dtype=np.float64)
            if t.shape != shape:
                raise ShapeMismatch(f"{name}: shape {t.shape}, expected {shape}")
            parts.append(t.ravel())
        return cls(arch, np.concatenate(parts))

    def with_flat(self, flat) -> "ParameterSet":
        return ParameterSet(self.arch, flat)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.arch, self.flat)

    def lstm(self) -> dict:
        return {name[5:]: t for name, t in self.tensors.items() if name.startswith("lstm.")}

    def __eq__(self, other):
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"ParameterSet(L={len(self)}, tensors={len(self.tensors)})"


def init_params(arch: ArchConfig, seed: int = 0) -> ParameterSet:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
    rng = np.random.default_rng(seed)
    parts = []
    for _, shape, fan_in in param_layout(arch):
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=math.prod(shape)))
    return ParameterSet(arch, np.concatenate(parts))


def save_checkpoint(path, params: ParameterSet, extra: dict | None = None) -> None:
    """Write ``magic | u32 header_len | JSON header | little-endian f64 payload``."""
    entries, offset = [], 0
    for name, shape, _ in params.layout:
        entries.append({"name": name, "shape": list(shape), "offset": offset})
        offset += math.prod(shape)
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "length": len(params),
        "order": entries,
        "arch": params.arch.to_dict(),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fedad checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arch = ArchConfig.from_dict(header["arch"])
    flat = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
    if flat.shape[0] != header["length"]:
        raise ValueError(f"{path}: payload has {flat.shape[0]} values, header says {header['length']}")
    return ParameterSet(arch, flat.astype(np.float64)), header
