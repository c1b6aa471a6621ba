"""Federated averaging over simulated clients.

Each round the server samples participants, broadcasts the global
parameters, every participant trains locally on its own shard, and the
server replaces the global model with the shard-size-weighted mean of the
returned parameter vectors. The held-out split is scored after every round.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .dataset import Dataset, NormStats, SplitSpec, normalize, partition, split
from .model import (
    Checkpoint,
    NetworkSpec,
    ParameterVector,
    TrainingConfig,
    init_params,
    loss,
    predict,
    save_checkpoint,
    train_local,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

RESULTS_HEADER = ("round", "accuracy", "precision", "recall", "f1", "loss", "participants")


@dataclass(frozen=True)
class RoundConfig:
    total_users: int = 10
    participants_per_round: int = 10
    rounds: int = 50
    local_epochs: int = 90
    training: TrainingConfig = field(default_factory=TrainingConfig)
    selection_seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    partition_seed: int = 0
    init_seed: int = 0
    variant: str = "afed"

    def __post_init__(self):
        if self.total_users < 1:
            raise ValueError("total_users must be positive")
        if not 1 <= self.participants_per_round <= self.total_users:
            raise ValueError("participants_per_round must lie in 1..total_users")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be non-negative")

    @classmethod
    def from_master_seed(cls, master: int, **kwargs) -> "RoundConfig":
        """Fill every seed field from one integer (see `fedmup.seeding`)."""
        training = kwargs.pop("training", TrainingConfig())
        train_fraction = kwargs.pop("train_fraction", 0.8)
        return cls(
            training=replace(training, seed=derive_seed(master, "train")),
            selection_seed=derive_seed(master, "selection"),
            split=SplitSpec(train_fraction, derive_seed(master, "split")),
            partition_seed=derive_seed(master, "partition"),
            init_seed=derive_seed(master, "init"),
            **kwargs,
        )

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec.for_variant(self.variant)


@dataclass(frozen=True)
class ClientState:
    client_id: int
    shard: Dataset
    last_params: ParameterVector | None = None

    @property
    def shard_size(self) -> int:
        return len(self.shard)


@dataclass(frozen=True)
class GlobalModel:
    params: ParameterVector
    spec: NetworkSpec
    round_index: int = 0
    stats: NormStats | None = None

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "GlobalModel":
        stats = None if ckpt.norm_min is None else NormStats(ckpt.norm_min, ckpt.norm_max)
        return cls(ckpt.params, ckpt.spec, ckpt.round_index, stats)


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    mean_global_loss: float
    participant_ids: tuple[int, ...]

    def csv_row(self) -> list[str]:
        return [
            str(self.round_index),
            repr(self.accuracy),
            repr(self.precision),
            repr(self.recall),
            repr(self.f1),
            repr(self.mean_global_loss),
            " ".join(map(str, self.participant_ids)),
        ]


def select_participants(round_index: int, n: int, k: int, seed: int) -> list[int]:
    """k distinct client ids in ascending order, keyed on (seed, round)."""
    if not 1 <= k <= n:
        raise ValueError(f"cannot select {k} of {n} clients")
    if k == n:
        return list(range(n))
    rng = np.random.default_rng([seed, round_index])
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


def aggregation_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0 or (sizes <= 0).any():
        raise ValueError("shard sizes must be positive")
    return sizes / sizes.sum()


def aggregate(locals_: Sequence[tuple[ParameterVector, int]]) -> ParameterVector:
    """Shard-size-weighted mean, accumulated in the given (client-id) order.

    Weights are normalized by the participants' total shard size so they sum
    to one whatever the number of participants.
    """
    if not locals_:
        raise ValueError("nothing to aggregate")
    first = locals_[0][0]
    for vec, _ in locals_:
        if vec.fingerprint != first.fingerprint or len(vec) != len(first):
            raise ValueError("cannot aggregate parameter vectors with different layouts")
    weights = aggregation_weights([size for _, size in locals_])
    if len(locals_) == 1:
        return first
    acc = weights[0] * first.values
    for w, (vec, _) in zip(weights[1:], locals_[1:]):
        acc += w * vec.values
    return ParameterVector(acc, first.fingerprint)


def client_seed(base_seed: int, round_index: int, client_id: int) -> int:
    return derive_seed(base_seed, "train", round_index, client_id)


def _train_client(args):
    params, spec, shard, config = args
    return train_local(params, spec, shard.features, shard.labels, config)


def evaluate_global(params: ParameterVector, spec: NetworkSpec, testset: Dataset) -> tuple[metrics.MetricsReport, float]:
    preds = predict(params, spec, testset.features)
    return metrics.evaluate(testset.labels, preds), loss(params, spec, testset.features, testset.labels)


def run_round(
    global_model: GlobalModel,
    clients: Sequence[ClientState],
    config: RoundConfig,
    testset: Dataset,
    executor: Executor | None = None,
) -> tuple[GlobalModel, RoundReport, list[ClientState]]:
    """Broadcast, train every selected client, aggregate, evaluate.

    Clients start from the broadcast parameters each round. `executor` may run
    the client updates in parallel; the reduction order stays ascending by
    client id so results do not depend on it.
    """
    if not clients:
        raise ValueError("a round needs at least one participant")
    clients = sorted(clients, key=lambda c: c.client_id)
    spec = global_model.spec
    r = global_model.round_index
    jobs = [
        (
            global_model.params,
            spec,
            c.shard,
            replace(config.training, epochs=config.local_epochs, seed=client_seed(config.training.seed, r, c.client_id)),
        )
        for c in clients
    ]
    if executor is None:
        results = [_train_client(job) for job in jobs]
    else:
        results = list(executor.map(_train_client, jobs))
    new_params = aggregate([(p, c.shard_size) for (p, _), c in zip(results, clients)])
    updated = [replace(c, last_params=p) for (p, _), c in zip(results, clients)]
    report, test_loss = evaluate_global(new_params, spec, testset)
    new_global = GlobalModel(new_params, spec, r + 1, global_model.stats)
    rr = RoundReport(
        round_index=r + 1,
        accuracy=report.accuracy,
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        mean_global_loss=test_loss,
        participant_ids=tuple(c.client_id for c in clients),
    )
    return new_global, rr, updated


@dataclass
class ExperimentResult:
    reports: list[RoundReport]
    final: GlobalModel
    initial: RoundReport
    stats: NormStats
    train: Dataset
    test: Dataset

    def checkpoint(self, **extra: str) -> Checkpoint:
        return Checkpoint(self.final.spec, self.final.params, self.final.round_index,
                          self.stats.minimum, self.stats.maximum, dict(extra))


def prepare(config: RoundConfig, data: Dataset) -> tuple[Dataset, Dataset, list[ClientState]]:
    """Normalize, split and shard `data` the way `run_experiment` does."""
    normed = data if data.normalized else normalize(data)
    train, test = split(normed, config.split)
    shards = partition(train, config.total_users, config.partition_seed)
    clients = [ClientState(i, s) for i, s in enumerate(shards)]
    return train, test, clients


def run_experiment(
    config: RoundConfig,
    data: Dataset,
    executor: Executor | None = None,
) -> ExperimentResult:
    """Full pipeline: normalize, split, shard, then `config.rounds` rounds.

    `initial` scores the untrained global model (round 0); `reports` holds
    one entry per communication round, numbered from 1.
    """
    spec = config.spec
    train, test, clients = prepare(config, data)
    model = GlobalModel(init_params(spec, config.init_seed), spec, 0, test.stats)
    report0, loss0 = evaluate_global(model.params, spec, test)
    initial = RoundReport(0, report0.accuracy, report0.precision, report0.recall, report0.f1, loss0, ())
    reports = []
    for t in range(config.rounds):
        ids = select_participants(t, config.total_users, config.participants_per_round, config.selection_seed)
        selected = [clients[i] for i in ids]
        model, rr, updated = run_round(model, selected, config, test, executor)
        for c in updated:
            clients[c.client_id] = c
        reports.append(rr)
        log.info("round %d acc=%.4f f1=%.4f loss=%.4f", rr.round_index, rr.accuracy, rr.f1, rr.mean_global_loss)
    return ExperimentResult(reports, model, initial, test.stats, train, test)


def write_results(reports: Sequence[RoundReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for rr in reports:
            writer.writerow(rr.csv_row())


def read_results(path: str | Path) -> list[RoundReport]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValueError(f"{path}: results header must be {','.join(RESULTS_HEADER)}")
        return [
            RoundReport(
                int(row["round"]),
                float(row["accuracy"]),
                float(row["precision"]),
                float(row["recall"]),
                float(row["f1"]),
                float(row["loss"]),
                tuple(int(p) for p in row["participants"].split()),
            )
            for row in reader
        ]


def save_experiment(
    result: ExperimentResult,
    results_path: str | Path,
    checkpoint_path: str | Path,
    **extra: str,
) -> None:
    write_results(result.reports, results_path)
    save_checkpoint(checkpoint_path, result.checkpoint(**extra))
