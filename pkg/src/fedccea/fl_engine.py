"""One federated round: broadcast, partial-data local updates, size-weighted
averaging, and test evaluation; plus the multi-round training harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datasets import ClientPartition, LabeledDataset
from .errors import DegenerateRoundError
from .nn_core import MLPParams, MLPSpec, evaluate_accuracy, init_mlp, sgd_train
from .rng import RngStream


@dataclass(frozen=True)
class FLConfig:
    n_clients: int
    rounds: int
    local_epochs: int
    batch_size: int
    lr: float
    model_spec: MLPSpec
    seed: int

    def __post_init__(self):
        if self.n_clients < 2:
            raise ValueError("n_clients must be at least 2")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class RoundOutcome:
    global_params: MLPParams
    accuracy: float


@dataclass(frozen=True)
class FederatedRunResult:
    accuracies: tuple[float, ...]
    final_params: MLPParams

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1]


def local_update(
    global_params: MLPParams, client: ClientPartition, d_i: int, cfg: FLConfig
) -> MLPParams:
    """Train a copy of the global model on the first d_i samples of the
    client's fixed-order dataset; d_i = 0 contributes nothing this round."""
    size = len(client.dataset)
    if not 0 <= d_i <= size:
        raise ValueError(f"client {client.client_id}: size {d_i} outside [0, {size}]")
    if d_i == 0:
        return global_params.copy()
    return sgd_train(
        global_params, client.dataset.prefix(d_i), cfg.local_epochs, cfg.batch_size, cfg.lr
    )


def fed_avg(local_params: Sequence[MLPParams], d: Sequence[int]) -> MLPParams:
    """Data-size-weighted mean of local parameters.

    Clients with d_i = 0 carry exactly zero weight (they are skipped, so
    appending one cannot perturb the sum).
    """
    d = np.asarray(d, dtype=np.float64)
    if len(local_params) != len(d):
        raise ValueError(f"{len(local_params)} parameter sets but {len(d)} sizes")
    total = d.sum()
    if total <= 0:
        raise DegenerateRoundError("all sampled sizes are zero; nothing to aggregate")
    active = [(w, p) for w, p in zip(d / total, local_params) if w > 0]
    first = active[0][1]
    weights = [np.zeros_like(m) for m in first.weights]
    biases = [np.zeros_like(b) for b in first.biases]
    for w, params in active:
        for acc, layer in zip(weights, params.weights):
            acc += w * layer
        for acc, layer in zip(biases, params.biases):
            acc += w * layer
    return MLPParams(weights, biases)


def run_round(
    global_params: MLPParams,
    partitions: Sequence[ClientPartition],
    d: Sequence[int],
    test: LabeledDataset,
    cfg: FLConfig,
) -> RoundOutcome:
    """Local updates for every client, aggregation, then test accuracy.

    A degenerate round (every d_i = 0) carries the previous global forward.
    """
    if sum(int(x) for x in d) == 0:
        return RoundOutcome(global_params.copy(), evaluate_accuracy(global_params, test))
    local = [
        local_update(global_params, client, int(d_i), cfg)
        for client, d_i in zip(partitions, d)
    ]
    aggregated = fed_avg(local, d)
    return RoundOutcome(aggregated, evaluate_accuracy(aggregated, test))


def train_federated(
    partitions: Sequence[ClientPartition],
    d_schedule: Sequence[Sequence[int]] | None,
    test: LabeledDataset,
    cfg: FLConfig,
) -> FederatedRunResult:
    """Run cfg.rounds federated rounds from a fresh seeded init.

    d_schedule is one size vector per round; None means full participation
    (every client trains on its whole dataset every round).
    """
    if len(partitions) == 0:
        raise ValueError("need at least one client partition")
    full = [len(p.dataset) for p in partitions]
    if d_schedule is None:
        schedule = [full] * cfg.rounds
    else:
        schedule = [list(int(x) for x in d) for d in d_schedule]
        if len(schedule) != cfg.rounds:
            raise ValueError(f"schedule has {len(schedule)} rounds, config says {cfg.rounds}")
        for d in schedule:
            if len(d) != len(partitions):
                raise ValueError(f"size vector length {len(d)} != {len(partitions)} clients")
    params = init_mlp(cfg.model_spec, RngStream(cfg.seed))
    accuracies = []
    for d in schedule:
        outcome = run_round(params, partitions, d, test, cfg)
        params = outcome.global_params
        accuracies.append(outcome.accuracy)
    return FederatedRunResult(tuple(accuracies), params)
