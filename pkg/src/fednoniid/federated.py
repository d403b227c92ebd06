"""FedAvg simulation: local SGD, weighted aggregation, round accounting.

One round broadcasts the global parameters, runs ``local_epochs`` of
seeded-shuffled minibatch SGD on each sampled client, and replaces the
global model with the weighted mean of the returned parameters (equal
weights or proportional to client sample counts).  Everything is a pure
function of (shards, config): reruns are bit-identical.

Reproducibility notes
  * Clients within a round share the per-round data-order stream, so
    identical shards produce identical local updates (and K copies of one
    shard reduce exactly to centralized training on it).
  * Aggregation accumulates in float64 in ascending node-id order and casts
    the mean back to float32, which absorbs summation-order noise.
  * Per-round traffic is ``clients_per_round * 4 bytes * param_count`` in
    each direction; evaluation consumes no randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .datasets import Dataset
from .nn import Conv2D, Dense, Flatten, Network, ParamSet, ReLU, sgd_step
from .partition import MaterializedShard
from .rng import PCG32, FED_ORDER, FED_SAMPLE, MODEL_INIT, derive_seed

EQUAL = "equal"
SIZE_PROPORTIONAL = "size_proportional"

_EPOCH_STREAM_BITS = 20  # round index shifted past the epoch counter


def build_model(arch: str, input_shape: tuple[int, ...], num_classes: int,
                seed: int) -> Network:
    h, w, c = input_shape
    if arch == "mnist_mlp":
        return Network(
            input_shape,
            [Flatten(), Dense(h * w * c, 128), ReLU(), Dense(128, num_classes)],
            seed=seed,
        )
    if arch == "cifar_cnn":
        return Network(
            input_shape,
            [
                Conv2D(c, 16, 3, stride=2, padding=1),
                ReLU(),
                Conv2D(16, 32, 3, stride=2, padding=1),
                ReLU(),
                Flatten(),
                Dense(32 * ((h + 3) // 4) * ((w + 3) // 4), num_classes),
            ],
            seed=seed,
        )
    raise ValueError(f"unknown model architecture {arch!r}")


@dataclass(frozen=True)
class FedConfig:
    node_num: int
    rounds: int
    clients_per_round: int | None = None  # None -> all nodes
    local_epochs: int = 1
    batch_size: int = 32
    lr: float = 0.05
    weighting: str = SIZE_PROPORTIONAL
    model_arch: str = "mnist_mlp"
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.node_num < 1:
            raise ValueError("node_num must be >= 1")
        k = self.clients_per_round
        if k is not None and not (1 <= k <= self.node_num):
            raise ValueError("clients_per_round must lie in [1, node_num]")
        if self.weighting not in (EQUAL, SIZE_PROPORTIONAL):
            raise ValueError(f"weighting must be '{EQUAL}' or '{SIZE_PROPORTIONAL}'")

    @property
    def sampled(self) -> int:
        return self.node_num if self.clients_per_round is None else self.clients_per_round

    def to_dict(self) -> dict:
        return {
            "node_num": self.node_num,
            "rounds": self.rounds,
            "clients_per_round": self.sampled,
            "local_epochs": self.local_epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weighting": self.weighting,
            "model_arch": self.model_arch,
            "eval_every": self.eval_every,
            "seed": self.seed,
        }


@dataclass
class RoundLog:
    round: int
    participants: list[int]
    sample_counts: list[int]
    bytes_up: int
    bytes_down: int
    accuracy: float | None = None
    macro_precision: float | None = None
    macro_recall: float | None = None


def _shard_tensors(shard: MaterializedShard) -> tuple[np.ndarray, np.ndarray]:
    return shard.images.astype(np.float32) / np.float32(255.0), shard.labels


def client_update(
    net: Network,
    global_params: ParamSet,
    images01: np.ndarray,
    labels: np.ndarray,
    local_epochs: int,
    batch_size: int,
    lr: float,
    order_seed: int,
    round_index: int,
) -> tuple[ParamSet, int]:
    """Local SGD from the broadcast parameters; the broadcast stays untouched.

    The minibatch order stream is selected by (order_seed, round, epoch)
    only, so clients holding identical data walk identical batches.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("cannot run a local update on an empty shard")
    net.set_params(global_params.data)
    for epoch in range(local_epochs):
        rng = PCG32(order_seed, stream=(round_index << _EPOCH_STREAM_BITS) | epoch)
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            take = perm[start : start + batch_size]
            _, grads = net.loss_and_grad(images01[take], labels[take], "softmax_ce")
            sgd_step(net.params, grads, lr)
    return net.params.copy(), n


def aggregate(updates: list[tuple[ParamSet, int]], weighting: str = EQUAL) -> ParamSet:
    """Elementwise weighted mean of parameter vectors (weights sum to 1)."""
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    first = updates[0][0]
    for params, _ in updates[1:]:
        if params.bounds != first.bounds or params.data.size != first.data.size:
            raise ValueError("parameter layouts do not match")
    if weighting == EQUAL:
        weights = [1.0 / len(updates)] * len(updates)
    elif weighting == SIZE_PROPORTIONAL:
        total = sum(count for _, count in updates)
        if total <= 0:
            raise ValueError("size-proportional weighting needs positive counts")
        weights = [count / total for _, count in updates]
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    acc = np.zeros(first.data.size, dtype=np.float64)
    for (params, _), w in zip(updates, weights):
        acc += w * params.data.astype(np.float64)
    return ParamSet(acc.astype(first.data.dtype), first.bounds)


def evaluate(net: Network, test_set: Dataset, batch: int = 256
             ) -> tuple[float, float, float]:
    """(accuracy, macro precision, macro recall) on a labelled test set.

    Precision and recall are averaged unweighted over all classes; a class
    with no predicted (resp. actual) positives contributes zero to
    precision (resp. recall).
    """
    if len(test_set) == 0:
        raise ValueError("empty test set")
    preds = predict(net, test_set.images, batch=batch)
    return scores_from_predictions(preds, test_set.labels, test_set.num_classes)


def predict(net: Network, images: np.ndarray, batch: int = 256) -> np.ndarray:
    out = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), batch):
        chunk = images[start : start + batch].astype(np.float32) / np.float32(255.0)
        out[start : start + len(chunk)] = net.forward(chunk).argmax(axis=1)
    return out


def scores_from_predictions(preds: np.ndarray, labels: np.ndarray,
                            num_classes: int) -> tuple[float, float, float]:
    accuracy = float(np.mean(preds == labels))
    precisions, recalls = [], []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        predicted = int(np.sum(preds == c))
        actual = int(np.sum(labels == c))
        precisions.append(tp / predicted if predicted else 0.0)
        recalls.append(tp / actual if actual else 0.0)
    return accuracy, float(np.mean(precisions)), float(np.mean(recalls))


def simulate(
    shards: list[MaterializedShard],
    test_set: Dataset,
    cfg: FedConfig,
    eval_rounds: set[int] | None = None,
) -> tuple[Network, list[RoundLog]]:
    """Simulate FedAvg; returns the final global model and one log per round.

    Round indices are 1-based.  Evaluation happens every ``eval_every``
    rounds and always on the final round, or exactly at ``eval_rounds``
    when given.
    """
    if len(shards) != cfg.node_num:
        raise ValueError(f"expected {cfg.node_num} shards, got {len(shards)}")
    for shard in shards:
        if len(shard) == 0:
            raise ValueError(f"shard {shard.node_id} is empty")
    tensors = [_shard_tensors(s) for s in shards]
    input_shape = test_set.image_shape
    model = build_model(
        cfg.model_arch, input_shape, test_set.num_classes,
        derive_seed(cfg.seed, MODEL_INIT),
    )
    worker = model.clone()
    sample_seed = derive_seed(cfg.seed, FED_SAMPLE)
    order_seed = derive_seed(cfg.seed, FED_ORDER)
    traffic = cfg.sampled * 4 * model.param_count()
    logs: list[RoundLog] = []
    for rnd in range(1, cfg.rounds + 1):
        if cfg.sampled == cfg.node_num:
            participants = list(range(cfg.node_num))
        else:
            rng = PCG32(sample_seed, stream=rnd)
            participants = sorted(rng.sample(cfg.node_num, cfg.sampled).tolist())
        updates = []
        for node in participants:
            images01, labels = tensors[node]
            updates.append(
                client_update(
                    worker, model.params, images01, labels,
                    cfg.local_epochs, cfg.batch_size, cfg.lr, order_seed, rnd,
                )
            )
        model.set_params(aggregate(updates, cfg.weighting).data)
        log = RoundLog(
            round=rnd,
            participants=participants,
            sample_counts=[count for _, count in updates],
            bytes_up=traffic,
            bytes_down=traffic,
        )
        if eval_rounds is not None:
            do_eval = rnd in eval_rounds
        else:
            do_eval = rnd % cfg.eval_every == 0 or rnd == cfg.rounds
        if do_eval:
            log.accuracy, log.macro_precision, log.macro_recall = evaluate(
                model, test_set
            )
        logs.append(log)
    return model, logs


def run_federated(
    shards: list[MaterializedShard],
    test_set: Dataset,
    cfg: FedConfig,
    eval_rounds: set[int] | None = None,
) -> list[RoundLog]:
    return simulate(shards, test_set, cfg, eval_rounds)[1]


class FedAvgSimulator(BaseEstimator):
    """Estimator-style front end over :func:`run_federated`.

    ``fit(shards, test_set)`` runs the simulation and exposes ``model_``,
    ``round_logs_`` and ``final_accuracy_``; ``predict`` classifies raw
    uint8 images with the trained global model.
    """

    def __init__(self, node_num: int = 10, rounds: int = 100,
                 clients_per_round: int | None = None, local_epochs: int = 1,
                 batch_size: int = 32, lr: float = 0.05,
                 weighting: str = SIZE_PROPORTIONAL, model_arch: str = "mnist_mlp",
                 eval_every: int = 10, seed: int = 0):
        self.node_num = node_num
        self.rounds = rounds
        self.clients_per_round = clients_per_round
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weighting = weighting
        self.model_arch = model_arch
        self.eval_every = eval_every
        self.seed = seed

    def config(self) -> FedConfig:
        return FedConfig(
            node_num=self.node_num,
            rounds=self.rounds,
            clients_per_round=self.clients_per_round,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weighting=self.weighting,
            model_arch=self.model_arch,
            eval_every=self.eval_every,
            seed=self.seed,
        )

    def fit(self, shards: list[MaterializedShard], test_set: Dataset,
            eval_rounds: set[int] | None = None):
        self.model_, self.round_logs_ = simulate(
            shards, test_set, self.config(), eval_rounds
        )
        evaluated = [log for log in self.round_logs_ if log.accuracy is not None]
        self.final_accuracy_ = evaluated[-1].accuracy if evaluated else None
        return self

    def predict(self, images: np.ndarray) -> np.ndarray:
        return predict(self.model_, images)

    def score(self, test_set: Dataset) -> float:
        return evaluate(self.model_, test_set)[0]


def round_logs_csv(logs: list[RoundLog]) -> str:
    """CSV stream: round, accuracy, precision, recall, bytes up/down."""
    lines = ["round,accuracy,macro_precision,macro_recall,bytes_up,bytes_down"]
    for log in logs:
        acc = "" if log.accuracy is None else repr(log.accuracy)
        prec = "" if log.macro_precision is None else repr(log.macro_precision)
        rec = "" if log.macro_recall is None else repr(log.macro_recall)
        lines.append(f"{log.round},{acc},{prec},{rec},{log.bytes_up},{log.bytes_down}")
    return "\n".join(lines) + "\n"


def experiment_record(cfg: FedConfig, logs: list[RoundLog],
                      extra: dict | None = None) -> dict:
    """JSON-able experiment record embedding the full configuration."""
    doc = {
        "config": cfg.to_dict(),
        "rounds": [
            {
                "round": log.round,
                "participants": log.participants,
                "sample_counts": log.sample_counts,
                "accuracy": log.accuracy,
                "macro_precision": log.macro_precision,
                "macro_recall": log.macro_recall,
                "bytes_up": log.bytes_up,
                "bytes_down": log.bytes_down,
            }
            for log in logs
        ],
    }
    if extra:
        doc.update(extra)
    return doc
