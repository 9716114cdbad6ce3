"""Experiment modes behind the ``fedad`` command.

Every mode writes into ``config.output_dir`` and finishes with a
``manifest.json`` that embeds the resolved configuration.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__
from .compression import broadcast_size, encoded_size, keep_count
from .config import ExperimentConfig
from .datasets import make_sine_series
from .estimators import FederatedAnomalyDetector
from .model.params import load_checkpoint, param_count, save_checkpoint
from .timeseries import load_csv

logger = logging.getLogger(__name__)


def load_dataset(cfg: ExperimentConfig):
    ds = cfg.dataset
    if ds.path is not None:
        return load_csv(ds.path, ds.dims, ds.has_labels)
    syn = ds.synthetic
    return make_sine_series(
        n_points=syn.n_points,
        dims=syn.dims,
        period=syn.period,
        noise=syn.noise,
        anomaly_fraction=syn.anomaly_fraction,
        n_events=syn.n_events,
        seed=cfg.seed,
    )


def make_detector(cfg: ExperimentConfig, rho: float | None = None) -> FederatedAnomalyDetector:
    fed, comp, arch = cfg.federation, cfg.compressor, cfg.arch
    return FederatedAnomalyDetector(
        window=cfg.window,
        n_nodes=fed.n_nodes,
        rounds=fed.rounds,
        eta=fed.eta,
        batch_size=fed.batch_size,
        local_steps=fed.local_steps,
        rho=comp.rho if rho is None else rho,
        momentum=comp.momentum,
        clip_norm=comp.clip_norm,
        warmup_rounds=comp.warmup_rounds,
        lam=fed.lam,
        cnn_layers=tuple(map(tuple, arch.cnn_layers)),
        pool_widths=tuple(arch.pool_widths),
        attention=arch.attention,
        attention_stages=tuple(map(tuple, arch.attention_stages)),
        lstm_hidden=arch.lstm_hidden,
        theta=cfg.theta,
        train_frac=cfg.train_frac,
        val_frac=cfg.val_frac,
        diagonal_cov=cfg.diagonal_cov,
        seed=cfg.seed,
    )


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


class _RoundWriter:
    def __init__(self, path: Path):
        self.fh = path.open("w", encoding="utf-8")

    def __call__(self, report):
        self.fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")

    def close(self):
        self.fh.close()


def _fit(cfg, series, out: Path | None, rounds_name="rounds.jsonl", rho=None, on_update=None):
    det = make_detector(cfg, rho)
    writer = _RoundWriter(out / rounds_name) if out is not None else None
    try:
        det.fit(series.points, series.labels, on_round=writer, on_update=on_update)
    finally:
        if writer is not None:
            writer.close()
    return det


def _eval_payload(det: FederatedAnomalyDetector) -> dict:
    report = det.evaluate().to_dict()
    report["validation_f_theta"] = det.validation_f_theta_
    report["param_count"] = len(det.params_)
    return report


def _write_scores(path: Path, det: FederatedAnomalyDetector) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["start_index", "score", "label", "decision"])
        for start, score, label, decision in det.test_scores():
            w.writerow([start, repr(score), int(label), int(decision)])


def write_manifest(cfg: ExperimentConfig, out: Path, artifacts: list[str], extra: dict | None = None) -> None:
    payload = {
        "fedad_version": __version__,
        "mode": cfg.mode,
        "config": cfg.to_dict(),
        "artifacts": sorted(artifacts),
    }
    if extra:
        payload.update(extra)
    _dump_json(out / "manifest.json", payload)


def run_train(cfg: ExperimentConfig, out: Path) -> dict:
    series = load_dataset(cfg)
    det = _fit(cfg, series, out)
    save_checkpoint(
        out / "checkpoint.bin",
        det.params_,
        extra={
            "normalizer": {"min": det.normalizer_.data_min_.tolist(), "max": det.normalizer_.data_max_.tolist()},
            "anomaly_model": det.anomaly_model_.to_dict(),
            "seed": cfg.seed,
        },
    )
    payload = _eval_payload(det)
    _dump_json(out / "eval.json", payload)
    _write_scores(out / "scores.csv", det)
    write_manifest(cfg, out, ["rounds.jsonl", "checkpoint.bin", "eval.json", "scores.csv"],
                   {"param_count": len(det.params_)})
    return payload


def run_eval(cfg: ExperimentConfig, out: Path) -> dict:
    params, _ = load_checkpoint(cfg.checkpoint)
    series = load_dataset(cfg)
    det = make_detector(cfg).calibrate(series.points, series.labels, params)
    payload = _eval_payload(det)
    _dump_json(out / "eval.json", payload)
    _write_scores(out / "scores.csv", det)
    write_manifest(cfg, out, ["eval.json", "scores.csv"], {"param_count": len(params)})
    return payload


def sweep_rho(cfg: ExperimentConfig, out: Path | None = None) -> list[dict]:
    """Train once per rho; report detection metrics and uplink volume."""
    series = load_dataset(cfg)
    rows = []
    for rho in cfg.sweep.rhos:
        name = f"rounds_rho{rho}.jsonl"
        det = _fit(cfg, series, out, rounds_name=name, rho=float(rho))
        L = len(det.params_)
        uplink = sum(r.uplink_bytes for r in det.round_reports_)
        dense = det.n_nodes * det.rounds * encoded_size(L)
        report = det.evaluate()
        k = keep_count(L, rho)
        rows.append(
            {
                "rho": float(rho),
                "param_count": L,
                "entries_per_node_round": k,
                "entry_ratio": L / k,
                "total_uplink_bytes": uplink,
                "dense_uplink_bytes": dense,
                "compression_ratio": dense / uplink,
                "rmse": report.rmse,
                "accuracy": report.accuracy,
                "precision": report.precision,
                "recall": report.recall,
                "f_theta": report.f_theta,
            }
        )
    if out is not None:
        _write_csv(out / "sweep.csv", rows)
        write_manifest(
            cfg, out, ["sweep.csv"] + [f"rounds_rho{r}.jsonl" for r in cfg.sweep.rhos]
        )
    return rows


def smoothed(losses, window: int) -> np.ndarray:
    """Trailing mean over at most ``window`` rounds."""
    c = np.cumsum(np.concatenate([[0.0], np.asarray(losses, dtype=np.float64)]))
    idx = np.arange(1, len(losses) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def rounds_to_target(losses, target: float, window: int) -> int | None:
    """1-based round count at which the smoothed loss first reaches ``target``."""
    hits = np.nonzero(smoothed(losses, window) <= target)[0]
    return int(hits[0]) + 1 if hits.size else None


def default_target(losses, fraction: float, window: int) -> float:
    """Loss level at which ``fraction`` of the smoothed loss reduction has been made."""
    sm = smoothed(losses, window)
    best = float(sm.min())
    return best + (1.0 - fraction) * (float(sm[0]) - best)


def compare_comm(cfg: ExperimentConfig, out: Path | None = None, update_sink=None) -> list[dict]:
    """Identical runs without and with compression, side by side.

    ``update_sink(variant, update)`` sees every SparseUpdate that was counted.
    """
    series = load_dataset(cfg)
    variants = [("without GCM", 100.0), ("with GCM", float(cfg.compare.rho))]
    runs = []
    for label, rho in variants:
        slug = label.replace(" ", "_")
        sink = (lambda u, _label=label: update_sink(_label, u)) if update_sink is not None else None
        det = _fit(cfg, series, out, rounds_name=f"rounds_{slug}.jsonl", rho=rho, on_update=sink)
        runs.append((label, rho, det))

    window = cfg.compare.smoothing
    dense_losses = [r.loss for r in runs[0][2].round_reports_]
    target = cfg.compare.target_loss
    if target is None:
        target = default_target(dense_losses, cfg.compare.target_fraction, window)
    rows = []
    for label, rho, det in runs:
        losses = [r.loss for r in det.round_reports_]
        reached = rounds_to_target(losses, target, window)
        if reached is None:
            logger.warning("%s: target loss %.6g not reached in %d rounds", label, target, len(losses))
        rows.append(
            {
                "variant": label,
                "rho": rho,
                "target_loss": target,
                "rounds_to_target": reached,
                "target_reached": reached is not None,
                "total_uplink_bytes": sum(r.uplink_bytes for r in det.round_reports_),
                "total_downlink_bytes": sum(r.downlink_bytes for r in det.round_reports_),
                "entries_sent": sum(r.entries_sent for r in det.round_reports_),
                "final_smoothed_loss": float(smoothed(losses, window)[-1]),
                "f_theta": det.evaluate().f_theta,
            }
        )
    if out is not None:
        _write_csv(out / "compare.csv", rows)
        write_manifest(
            cfg,
            out,
            ["compare.csv"] + [f"rounds_{label.replace(' ', '_')}.jsonl" for label, _ in variants],
            {"broadcast_bytes_per_node_round": broadcast_size(param_count(runs[0][2].arch_))},
        )
    return rows


def run(cfg: ExperimentConfig):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.mode == "train":
        return run_train(cfg, out)
    if cfg.mode == "eval":
        return run_eval(cfg, out)
    if cfg.mode == "sweep-rho":
        return sweep_rho(cfg, out)
    if cfg.mode == "compare-comm":
        return compare_comm(cfg, out)
    raise ValueError(f"unknown mode {cfg.mode!r}")

