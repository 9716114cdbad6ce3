"""In-process federated training: edge nodes upload compressed gradients,
the aggregator averages them and applies the SGD step, then broadcasts.

Each round runs three phases:

1. local training: every node computes a mean mini-batch gradient at the
   current global parameters;
2. compression: the gradient is clipped, accumulated into the node's
   velocity/residual buffers and the Top-rho% residual entries are uploaded;
3. aggregation: the aggregator averages the decoded sparse updates over all
   ``N`` nodes, takes ``w <- w - eta * g`` and sends the new parameters back.

Byte counts come from the actual wire encodings, never from estimates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import compression
from .compression import CompressorConfig, CompressorState, SparseUpdate
from .exceptions import EmptyPartition, LengthMismatch, MixedRounds
from .model import network
from .model.params import ArchConfig, ParameterSet, init_params
from .timeseries import NodePartition, stack_windows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FederationConfig:
    n_nodes: int = 10
    eta: float = 0.001
    rounds: int = 1000
    batch_size: int = 128
    local_steps: int = 1
    seed: int = 0
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    lam: float = 0.0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.rounds < 1 or self.batch_size < 1 or self.local_steps < 1:
            raise ValueError("rounds, batch_size and local_steps must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


def node_rng(seed: int, node_id: int) -> np.random.Generator:
    """Batch-sampling generator for one node, independent of all others."""
    return np.random.default_rng([seed, node_id])


def sample_batch(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    """Indices of one mini-batch, without replacement, of size ``min(B, n)``."""
    return rng.choice(n, size=min(batch_size, n), replace=False)


class EdgeNode:
    def __init__(self, node_id: int, partition: NodePartition, arch: ArchConfig, seed: int):
        self.node_id = node_id
        self.partition = partition
        self.arch = arch
        self.rng = node_rng(seed, node_id)
        if partition.train:
            self.train_x, self.train_y = stack_windows(partition.train)
        else:
            self.train_x = self.train_y = None
        self.params: ParameterSet | None = None
        self.compressor_state: CompressorState | None = None

    def receive(self, params: ParameterSet) -> None:
        self.params = params.copy()
        if self.compressor_state is None:
            self.compressor_state = CompressorState.zeros(len(params))


@dataclass
class RoundReport:
    round: int
    loss: float
    uplink_bytes: int
    downlink_bytes: int
    entries_sent: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return asdict(self)


class Aggregator:
    def __init__(self, params: ParameterSet):
        self.params = params
        self.round = 0
        self.ledger: list[dict] = []

    def record(self, round: int, uplink: int, downlink: int) -> None:
        self.ledger.append({"round": round, "uplink_bytes": uplink, "downlink_bytes": downlink})

    @property
    def total_uplink(self) -> int:
        return sum(r["uplink_bytes"] for r in self.ledger)


def local_train(node: EdgeNode, global_params: ParameterSet, cfg: FederationConfig):
    """Mean gradient and loss over ``local_steps`` mini-batches at the global weights.

    The node's copy of the weights is not advanced between steps.
    """
    if node.train_x is None:
        raise EmptyPartition(f"node {node.node_id} has no training windows")
    node.receive(global_params)
    n = node.train_x.shape[0]
    grad_sum = np.zeros(len(global_params))
    loss_sum = 0.0
    for _ in range(cfg.local_steps):
        idx = sample_batch(node.rng, n, cfg.batch_size)
        loss, grad = network.loss_and_grad(node.train_x[idx], node.train_y[idx], node.params, cfg.lam)
        grad_sum += grad
        loss_sum += loss
    if cfg.local_steps == 1:
        return grad, loss
    return grad_sum / cfg.local_steps, loss_sum / cfg.local_steps


def aggregate(updates, global_params: ParameterSet, eta: float) -> ParameterSet:
    """FedAvg over decoded sparse gradients followed by one SGD step."""
    updates = list(updates)
    if not updates:
        raise MixedRounds("no updates to aggregate")
    rounds = {u.round for u in updates}
    if len(rounds) != 1:
        raise MixedRounds(f"updates from several rounds: {sorted(rounds)}")
    L = len(global_params)
    for u in updates:
        if u.dense_len != L:
            raise LengthMismatch(f"update from node {u.node_id} has length {u.dense_len}, model has {L}")
    g = np.sum([compression.decode(u) for u in updates], axis=0) / len(updates)
    return global_params.with_flat(global_params.flat - eta * g)


def run_round(nodes, aggregator: Aggregator, cfg: FederationConfig, on_update=None) -> RoundReport:
    t0 = time.perf_counter()
    rnd = aggregator.round
    ccfg = cfg.compressor
    updates: list[SparseUpdate] = []
    losses = []
    for node in nodes:
        grad, loss = local_train(node, aggregator.params, cfg)
        if ccfg.clip_norm is not None:
            grad = compression.clip(grad, ccfg.clip_norm)
        state = compression.accumulate(node.compressor_state, grad, ccfg.momentum)
        update, node.compressor_state = compression.compress(state, rnd, node.node_id, ccfg)
        updates.append(update)
        losses.append(loss)
        if on_update is not None:
            on_update(update)
    aggregator.params = aggregate(updates, aggregator.params, cfg.eta)
    for node in nodes:
        node.receive(aggregator.params)
    uplink = sum(len(u.encode()) for u in updates)
    downlink = len(nodes) * compression.broadcast_size(len(aggregator.params))
    aggregator.record(rnd, uplink, downlink)
    aggregator.round += 1
    return RoundReport(
        round=rnd,
        loss=float(np.mean(losses)),
        uplink_bytes=uplink,
        downlink_bytes=downlink,
        entries_sent=sum(len(u) for u in updates),
        wall_time_s=time.perf_counter() - t0,
    )


def build_nodes(partitions, arch: ArchConfig, cfg: FederationConfig) -> list[EdgeNode]:
    return [EdgeNode(p.node_id, p, arch, cfg.seed) for p in partitions]


def run_training(
    partitions,
    arch: ArchConfig,
    cfg: FederationConfig,
    params: ParameterSet | None = None,
    on_round=None,
    on_update=None,
):
    """Run ``cfg.rounds`` rounds; returns the final global parameters and round reports."""
    if params is None:
        params = init_params(arch, cfg.seed)
    nodes = build_nodes(partitions, arch, cfg)
    aggregator = Aggregator(params)
    for node in nodes:
        node.receive(params)
    reports = []
    for _ in range(cfg.rounds):
        report = run_round(nodes, aggregator, cfg, on_update=on_update)
        reports.append(report)
        if on_round is not None:
            on_round(report)
        if report.round % 50 == 0:
            logger.debug("round %d loss %.6f uplink %d", report.round, report.loss, report.uplink_bytes)
    return aggregator.params, reports
