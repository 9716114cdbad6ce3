import numpy as np
import pytest

from fedad.model.params import ArchConfig
from fedad.timeseries import RawSeries, make_windows, partition

SMALL_ARCH = ArchConfig(
    input_dims=1,
    window=8,
    cnn_layers=((3, 4),),
    pool_widths=(2,),
    attention_stages=((3, 2),),
    lstm_hidden=6,
)


def sine_partitions(n_nodes, n_points=300, window=8, seed=0):
    t = np.arange(n_points)
    x = 0.5 + 0.4 * np.sin(2 * np.pi * t / 25) + 0.02 * np.random.default_rng(seed).normal(size=n_points)
    series = RawSeries("sine", x[:, None])
    return partition(make_windows(series, window), n_nodes, 0.6, 0.1, seed=seed)


@pytest.fixture
def small_arch():
    return SMALL_ARCH


def small_config(tmp_path, mode="train", rounds=20, **over):
    """A fast experiment config on a short synthetic series."""
    cfg = {
        "mode": mode,
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
        "window": 8,
        "dataset": {"synthetic": {"n_points": 600, "n_events": 4}},
        "federation": {"n_nodes": 2, "eta": 1.0, "rounds": rounds, "batch_size": 32},
        "compressor": {"rho": 10, "momentum": 0.9, "clip_norm": 1.0},
        "arch": {
            "cnn_layers": [[3, 4]],
            "pool_widths": [2],
            "attention_stages": [[3, 2]],
            "lstm_hidden": 6,
        },
    }
    for key, value in over.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return cfg


@pytest.fixture
def write_config(tmp_path):
    import json

    def _write(cfg, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(cfg))
        return str(path)

    return _write
