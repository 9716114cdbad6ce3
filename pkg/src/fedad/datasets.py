"""Seeded synthetic series with injected, labelled anomalies."""

from __future__ import annotations

import numpy as np

from .timeseries import RawSeries


def _event_starts(rng, n, n_events, event_len, margin):
    """One event per equal-length chunk so anomalies are spread over the whole series."""
    chunk = n // n_events
    starts = []
    for j in range(n_events):
        lo = j * chunk + margin
        hi = (j + 1) * chunk - event_len - margin
        starts.append(int(rng.integers(lo, max(hi, lo + 1))))
    return starts


def make_sine_series(
    n_points: int = 5000,
    dims: int = 1,
    period: float = 50.0,
    noise: float = 0.05,
    anomaly_fraction: float = 0.02,
    n_events: int = 10,
    spike_height: float = 2.0,
    shift_height: float = 1.2,
    seed: int = 0,
) -> RawSeries:
    """Sine waves plus Gaussian noise, with alternating spike and level-shift events.

    ``round(anomaly_fraction * n_points)`` points are labelled anomalous,
    split evenly across ``n_events`` contiguous events.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_points, dtype=np.float64)
    phases = rng.uniform(0, 2 * np.pi, size=dims)
    points = np.sin(2 * np.pi * t[:, None] / period + phases) + 0.3 * np.sin(
        4 * np.pi * t[:, None] / period + 2 * phases
    )
    points += rng.normal(0.0, noise, size=points.shape)
    labels = np.zeros(n_points, dtype=bool)
    n_anom = int(round(anomaly_fraction * n_points))
    if n_anom and n_events:
        event_len = max(1, n_anom // n_events)
        margin = max(1, int(period // 2))
        for j, s in enumerate(_event_starts(rng, n_points, n_events, event_len, margin)):
            seg = slice(s, s + event_len)
            sign = rng.choice([-1.0, 1.0])
            if j % 2 == 0:
                bump = spike_height * np.sin(np.linspace(0, np.pi, event_len + 2)[1:-1])
                points[seg] += sign * bump[:, None]
            else:
                points[seg] += sign * shift_height
            labels[seg] = True
    return RawSeries(name="synthetic-sine", points=points, labels=labels)


def make_ecg_like_series(n_beats: int = 120, beat_len: int = 40, noise: float = 0.02,
                         abnormal_beats=(30, 75, 100), seed: int = 0) -> RawSeries:
    """Quasi-periodic P-QRS-T waveform; listed beats are replaced by a widened, inverted complex."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, beat_len, endpoint=False)

    def bump(center, width, height):
        return height * np.exp(-0.5 * ((x - center) / width) ** 2)

    normal = bump(0.2, 0.03, 0.15) - bump(0.38, 0.01, 0.1) + bump(0.42, 0.012, 1.0) - bump(0.46, 0.01, 0.25) + bump(0.7, 0.05, 0.3)
    abnormal = bump(0.2, 0.03, 0.15) - bump(0.42, 0.05, 0.8) + bump(0.7, 0.05, 0.3)
    beats, labels = [], []
    for b in range(n_beats):
        is_bad = b in set(abnormal_beats)
        beats.append(abnormal if is_bad else normal)
        labels.append(np.full(beat_len, is_bad))
    points = np.concatenate(beats) + rng.normal(0.0, noise, size=n_beats * beat_len)
    return RawSeries(name="ecg-like", points=points[:, None], labels=np.concatenate(labels))


def write_csv(series: RawSeries, path) -> None:
    """Write ``series`` in the CSV layout :func:`fedad.timeseries.load_csv` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {series.name}: {series.dims} value column(s)")
        fh.write(", label\n" if series.labels is not None else "\n")
        for i, row in enumerate(series.points):
            cells = [repr(float(v)) for v in row]
            if series.labels is not None:
                cells.append("1" if series.labels[i] else "0")
            fh.write(",".join(cells) + "\n")
