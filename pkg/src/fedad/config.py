"""Experiment configuration: a single JSON document merged over defaults."""

from __future__ import annotations

import json
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError

MODES = ("train", "sweep-rho", "compare-comm", "eval")


@dataclass
class SyntheticConfig:
    n_points: int = 5000
    dims: int = 1
    period: float = 50.0
    noise: float = 0.05
    anomaly_fraction: float = 0.02
    n_events: int = 10


@dataclass
class DatasetConfig:
    path: Optional[str] = None
    dims: int = 1
    has_labels: bool = True
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class FederationSection:
    n_nodes: int = 10
    eta: float = 0.001
    rounds: int = 1000
    batch_size: int = 128
    local_steps: int = 1
    lam: float = 0.0


@dataclass
class CompressorSection:
    rho: float = 0.3
    momentum: float = 0.9
    clip_norm: Optional[float] = 1.0
    warmup_rounds: int = 0


@dataclass
class ArchSection:
    cnn_layers: list = field(default_factory=lambda: [[3, 16], [3, 32]])
    pool_widths: list = field(default_factory=lambda: [2, 2])
    attention: bool = True
    attention_stages: list = field(default_factory=lambda: [[3, 2], [3, 2]])
    lstm_hidden: int = 32


@dataclass
class SweepSection:
    rhos: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5, 0.9, 1, 100])


@dataclass
class CompareSection:
    rho: float = 0.3
    target_loss: Optional[float] = None
    target_fraction: float = 0.9
    smoothing: int = 10


@dataclass
class ExperimentConfig:
    mode: str = "train"
    seed: int = 0
    output_dir: str = "runs/default"
    window: int = 16
    train_frac: float = 0.6
    val_frac: float = 0.1
    theta: float = 0.05
    diagonal_cov: bool = False
    checkpoint: Optional[str] = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    federation: FederationSection = field(default_factory=FederationSection)
    compressor: CompressorSection = field(default_factory=CompressorSection)
    arch: ArchSection = field(default_factory=ArchSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    compare: CompareSection = field(default_factory=CompareSection)

    def to_dict(self) -> dict:
        return asdict(self)


def _scalar_ok(value, hint) -> bool:
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        return any(_scalar_ok(value, a) for a in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if hint is list:
        return isinstance(value, list)
    return True


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a JSON object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        where = f"{path}.{name}" if path else name
        hint, value = hints[name], data[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, where)
        elif not _scalar_ok(value, hint):
            raise ConfigError(where, f"expected {getattr(hint, '__name__', hint)}, got {value!r}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def need(cond, where, msg):
        if not cond:
            raise ConfigError(where, msg)

    need(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")
    need(cfg.window >= 1, "window", "must be >= 1")
    need(cfg.train_frac > 0, "train_frac", "must be > 0")
    need(cfg.val_frac > 0, "val_frac", "must be > 0 (threshold selection needs validation windows)")
    need(cfg.train_frac + cfg.val_frac < 1, "val_frac", "train_frac + val_frac must be < 1")
    need(0 < cfg.theta, "theta", "must be > 0")
    fed = cfg.federation
    need(fed.n_nodes >= 1, "federation.n_nodes", "must be >= 1")
    need(fed.eta > 0, "federation.eta", "must be > 0")
    need(fed.rounds >= 1, "federation.rounds", "must be >= 1")
    need(fed.batch_size >= 1, "federation.batch_size", "must be >= 1")
    need(fed.local_steps >= 1, "federation.local_steps", "must be >= 1")
    need(fed.lam >= 0, "federation.lam", "must be >= 0")
    comp = cfg.compressor
    need(0 < comp.rho <= 100, "compressor.rho", "must lie in (0, 100]")
    need(0 <= comp.momentum < 1, "compressor.momentum", "must lie in [0, 1)")
    need(comp.clip_norm is None or comp.clip_norm > 0, "compressor.clip_norm", "must be > 0 or null")
    need(comp.warmup_rounds >= 0, "compressor.warmup_rounds", "must be >= 0")
    need(cfg.arch.lstm_hidden >= 1, "arch.lstm_hidden", "must be >= 1")
    need(all(0 < r <= 100 for r in cfg.sweep.rhos) and cfg.sweep.rhos, "sweep.rhos", "values must lie in (0, 100]")
    need(0 < cfg.compare.rho <= 100, "compare.rho", "must lie in (0, 100]")
    need(0 < cfg.compare.target_fraction < 1, "compare.target_fraction", "must lie in (0, 1)")
    need(cfg.compare.smoothing >= 1, "compare.smoothing", "must be >= 1")
    if cfg.dataset.path is not None:
        need(Path(cfg.dataset.path).is_file(), "dataset.path", f"file not found: {cfg.dataset.path}")
        need(cfg.dataset.dims >= 1, "dataset.dims", "must be >= 1")
    else:
        syn = cfg.dataset.synthetic
        need(syn.n_points >= 2 * cfg.window, "dataset.synthetic.n_points", "too short for the window")
        need(0 <= syn.anomaly_fraction < 1, "dataset.synthetic.anomaly_fraction", "must lie in [0, 1)")
    if cfg.mode == "eval":
        need(cfg.checkpoint is not None, "checkpoint", "required in eval mode")
        need(Path(cfg.checkpoint).is_file(), "checkpoint", f"file not found: {cfg.checkpoint}")
    try:
        from .model.params import ArchConfig

        ArchConfig(
            input_dims=1,
            window=cfg.window,
            cnn_layers=cfg.arch.cnn_layers,
            pool_widths=cfg.arch.pool_widths,
            attention=cfg.arch.attention,
            attention_stages=cfg.arch.attention_stages,
            lstm_hidden=cfg.arch.lstm_hidden,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError("arch", str(exc)) from None
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data, ""))


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None


def describe_fields(cls=ExperimentConfig, prefix="") -> list[str]:
    """One ``path (type, default ...)`` line per leaf field, for ``--help``."""
    lines = []
    hints = typing.get_type_hints(cls)
    for f in fields(cls):
        hint = hints[f.name]
        path = f"{prefix}{f.name}"
        if is_dataclass(hint):
            lines.extend(describe_fields(hint, path + "."))
            continue
        if f.default is not MISSING:
            default = f.default
        elif f.default_factory is not MISSING:
            default = f.default_factory()
        else:
            default = None
        lines.append(f"  {path} (default: {json.dumps(default)})")
    return lines
