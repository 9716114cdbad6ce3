"""Sensor series ingestion, [0, 1] scaling, sliding windows and node partitioning."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import (
    DimensionMismatch,
    EmptySeries,
    InvalidFractions,
    ParseError,
    SeriesTooShort,
    TooFewWindows,
)

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class RawSeries:
    """An ordered multi-dimensional series, one row per time step."""

    name: str
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.points.ndim != 2 or self.points.shape[0] == 0 or self.points.shape[1] == 0:
            raise EmptySeries(f"series {self.name!r} has no points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (self.points.shape[0],):
                raise DimensionMismatch(
                    f"{self.labels.shape[0]} labels for {self.points.shape[0]} points"
                )

    @property
    def dims(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray

    @property
    def dims(self) -> int:
        return len(self.min)


@dataclass
class WindowPair:
    history: np.ndarray
    horizon: np.ndarray
    start_index: int
    label: bool = False


@dataclass
class NodePartition:
    node_id: int
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def load_csv(path, dims: int, has_labels: bool = False, name: str | None = None) -> RawSeries:
    """Read a comma- or whitespace-separated series.

    Blank lines and ``#`` comment lines are skipped. Any malformed row raises
    :class:`ParseError` carrying the 1-based line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    expected = dims + (1 if has_labels else 0)
    points, labels = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cells = [c for c in _SPLIT.split(text) if c != ""]
            row = []
            for col, cell in enumerate(cells[:dims], start=1):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(lineno, col, f"not a number: {cell!r}") from None
                if not math.isfinite(value):
                    raise ParseError(lineno, col, f"non-finite value: {cell!r}")
                row.append(value)
            if len(cells) < expected:
                raise ParseError(lineno, len(cells) + 1, f"expected {expected} columns")
            if len(cells) > expected:
                raise ParseError(lineno, expected + 1, f"expected {expected} columns")
            if has_labels:
                cell = cells[dims]
                try:
                    flag = float(cell)
                except ValueError:
                    flag = None
                if flag not in (0.0, 1.0):
                    raise ParseError(lineno, dims + 1, f"label must be 0 or 1, got {cell!r}")
                labels.append(flag == 1.0)
            points.append(row)
    if not points:
        raise EmptySeries(f"{path} contains no data rows")
    return RawSeries(
        name=name or path.stem,
        points=np.array(points, dtype=np.float64),
        labels=np.array(labels, dtype=bool) if has_labels else None,
    )


def fit_normalizer(series) -> NormalizationParams:
    points = series.points if isinstance(series, RawSeries) else np.asarray(series, dtype=np.float64)
    if points.size == 0:
        raise EmptySeries("cannot fit a normalizer on an empty series")
    if points.ndim == 1:
        points = points[:, None]
    return NormalizationParams(min=points.min(axis=0), max=points.max(axis=0))


def _check_dims(series: RawSeries, params: NormalizationParams):
    if series.dims != params.dims:
        raise DimensionMismatch(f"series has {series.dims} dims, normalizer has {params.dims}")


def normalize(series: RawSeries, params: NormalizationParams) -> RawSeries:
    """Map each dimension to ``(x - min) / (max - min)``; constant dimensions map to 0."""
    _check_dims(series, params)
    span = params.max - params.min
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    scaled = (series.points - params.min) / safe
    scaled[:, flat] = 0.0
    return RawSeries(series.name, scaled, None if series.labels is None else series.labels.copy())


def denormalize(series: RawSeries, params: NormalizationParams) -> RawSeries:
    _check_dims(series, params)
    points = series.points * (params.max - params.min) + params.min
    return RawSeries(series.name, points, None if series.labels is None else series.labels.copy())


def make_windows(series: RawSeries, T: int) -> list[WindowPair]:
    """All stride-1 (history, horizon) pairs; there are ``n - 2T + 1`` of them."""
    if T < 1:
        raise ValueError(f"window length must be >= 1, got {T}")
    n = len(series)
    if n < 2 * T:
        raise SeriesTooShort(f"need at least {2 * T} points for T={T}, got {n}")
    pts = series.points
    labels = series.labels
    out = []
    for s in range(n - 2 * T + 1):
        label = bool(labels[s + T : s + 2 * T].any()) if labels is not None else False
        out.append(WindowPair(pts[s : s + T], pts[s + T : s + 2 * T], s, label))
    return out


def _split_count(n: int, frac: float) -> int:
    return int(math.floor(n * frac + 1e-9))


def partition(windows, N: int, train_frac: float = 0.6, val_frac: float = 0.1, seed: int = 0):
    """Shuffle, deal round-robin to ``N`` nodes, then split each node chronologically."""
    if N < 1:
        raise InvalidFractions(f"node count must be >= 1, got {N}")
    if not (train_frac > 0 and val_frac >= 0 and train_frac + val_frac < 1):
        raise InvalidFractions(f"train_frac={train_frac}, val_frac={val_frac}")
    windows = list(windows)
    if len(windows) < N:
        raise TooFewWindows(f"{len(windows)} windows cannot cover {N} nodes")
    order = np.random.default_rng(seed).permutation(len(windows))
    parts = []
    for node_id in range(N):
        mine = sorted((windows[i] for i in order[node_id::N]), key=lambda w: w.start_index)
        n_train = _split_count(len(mine), train_frac)
        n_val = _split_count(len(mine), val_frac)
        parts.append(
            NodePartition(
                node_id=node_id,
                train=mine[:n_train],
                validation=mine[n_train : n_train + n_val],
                test=mine[n_train + n_val :],
            )
        )
    return parts


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """Stack histories and horizons into ``(n, T, d)`` arrays."""
    windows = list(windows)
    if not windows:
        raise EmptySeries("no windows to stack")
    return (
        np.stack([w.history for w in windows]),
        np.stack([w.horizon for w in windows]),
    )
