"""Non-IID Encoder Index: a fixed-encoder distribution-shift metric.

For a frozen feature extractor ``En`` and a label class ``C`` with train
side ``X_train`` and test side ``X_test``, the index is

    NEI(C) = || (mean(En(X_train)) - mean(En(X_test))) / sigma(En(X_union)) ||_2

where the standard deviation is the per-dimension population std over the
union of both sides.  Equal train/test multisets give exactly zero, and the
value is invariant to scaling or translating the feature space.

The encoder is the convolutional prefix of a small autoencoder
(conv stacks downsample once via a stride-2 conv, the decoder upsamples
back); it is trained on reconstruction MSE for a short fixed budget and
then frozen.  Frozen encoders carry a SHA-256 fingerprint of their
parameters and reject mutation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .datasets import Dataset
from .nn import Conv2D, Network, ReLU, Sigmoid, Upsample2x, sgd_step
from .partition import MaterializedShard
from .rng import PCG32, ENCODER_ORDER, ENCODER_SPLIT, derive_seed

EPSILON = 1e-8
ENCODER_CHANNELS = 32
# Conv -> (strided Conv) -> Conv is the encoder; Upsample -> Conv -> Conv decodes.
_ENCODER_PREFIX_LAYERS = 6


@dataclass(frozen=True)
class EncoderHyper:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.01


@dataclass(frozen=True)
class ClassSplit:
    """Per-class evaluation split: feature-source samples for one label."""

    label: int
    train_images: np.ndarray
    test_images: np.ndarray


def build_autoencoder(input_shape: tuple[int, int, int], seed: int) -> Network:
    h, w, c = input_shape
    if h < 4 or w < 4 or c < 1:
        raise ValueError(f"invalid image shape {input_shape}")
    ch = ENCODER_CHANNELS
    return Network(
        input_shape,
        [
            Conv2D(c, ch, 3, stride=1, padding=1),
            ReLU(),
            Conv2D(ch, ch, 3, stride=2, padding=1),
            ReLU(),
            Conv2D(ch, ch, 3, stride=1, padding=1),
            ReLU(),
            Upsample2x(),
            Conv2D(ch, ch, 3, stride=1, padding=1),
            ReLU(),
            Conv2D(ch, c, 3, stride=1, padding=1),
            Sigmoid(),
        ],
        seed=seed,
    )


class Encoder:
    """Feature extractor: the autoencoder prefix up to (excluding) upsampling.

    ``encode`` consumes uint8 images (scaled to [0, 1] internally) and emits
    one flattened float32 feature row per sample.  The forward pass runs in
    float64 so results are independent of batch composition.
    """

    def __init__(self, net: Network, frozen: bool = False):
        self.net = net
        self.frozen = frozen
        if frozen:
            self.net.params.data.setflags(write=False)
        prefix_bound = net.params.bounds[_ENCODER_PREFIX_LAYERS]
        self._prefix64 = Network(
            net.input_shape,
            net.layers[:_ENCODER_PREFIX_LAYERS],
            params=net.params.data[:prefix_bound],
            dtype=np.float64,
        )

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.net.input_shape

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self._prefix64.output_shape))

    @property
    def fingerprint(self) -> str:
        prefix = self._prefix64.params.data.astype("<f4")
        return hashlib.sha256(prefix.tobytes()).hexdigest()

    def encode(self, images: np.ndarray, chunk: int = 128) -> np.ndarray:
        if not self.frozen:
            raise ValueError("encoder must be frozen before encoding")
        images = np.asarray(images)
        if images.shape[1:] != self.input_shape:
            raise ValueError(
                f"image shape {images.shape[1:]} does not match encoder input "
                f"{self.input_shape}"
            )
        n = len(images)
        out = np.empty((n, self.feature_dim), dtype=np.float32)
        for start in range(0, n, chunk):
            batch = images[start : start + chunk].astype(np.float64) / 255.0
            feats = self._prefix64.forward(batch)
            out[start : start + len(batch)] = feats.reshape(len(batch), -1).astype(
                np.float32
            )
        return out


class IdentityEncoder:
    """Flattening pass-through encoder, mainly for tests and calibration."""

    def __init__(self, input_shape: tuple[int, ...]):
        self.input_shape = tuple(input_shape)
        self.frozen = True

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(
            ("identity:" + "x".join(map(str, self.input_shape))).encode()
        ).hexdigest()

    def encode(self, images: np.ndarray, chunk: int = 0) -> np.ndarray:
        images = np.asarray(images)
        if images.shape[1:] != self.input_shape:
            raise ValueError("image shape does not match encoder input")
        return images.reshape(len(images), -1).astype(np.float32)


def build_encoder(input_shape: tuple[int, int, int], seed: int) -> Encoder:
    """Fresh unfrozen encoder over a seeded autoencoder."""
    return Encoder(build_autoencoder(input_shape, seed), frozen=False)


def _reconstruction_mse(net: Network, images01: np.ndarray, chunk: int = 256) -> float:
    total, count = 0.0, 0
    for start in range(0, len(images01), chunk):
        batch = images01[start : start + chunk]
        recon = net.forward(batch)
        total += float(np.sum((recon.astype(np.float64) - batch) ** 2))
        count += batch.size
    return total / count


def train_autoencoder(
    encoder: Encoder,
    ds: Dataset,
    hyper: EncoderHyper = EncoderHyper(),
    seed: int = 0,
) -> Encoder:
    """Train a copy of the autoencoder on reconstruction MSE and freeze it.

    A held-out 10% slice (seeded) is kept out of training; its
    reconstruction error before and after training is stored in
    ``history`` on the returned encoder.
    """
    if encoder.frozen:
        raise ValueError("encoder is already frozen")
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    net = encoder.net.clone()
    images01 = ds.images.astype(np.float32) / np.float32(255.0)
    order = PCG32(derive_seed(seed, ENCODER_SPLIT), stream=0).permutation(len(ds))
    holdout_n = max(1, len(ds) // 10) if len(ds) > 1 else 0
    holdout = images01[order[len(ds) - holdout_n :]] if holdout_n else images01[:0]
    train = images01[order[: len(ds) - holdout_n]]
    eval_images = holdout if len(holdout) else images01
    init_mse = _reconstruction_mse(net, eval_images)
    order_seed = derive_seed(seed, ENCODER_ORDER)
    for epoch in range(hyper.epochs):
        perm = PCG32(order_seed, stream=epoch).permutation(len(train))
        for start in range(0, len(train), hyper.batch_size):
            batch = train[perm[start : start + hyper.batch_size]]
            _, grads = net.loss_and_grad(batch, batch, "mse")
            sgd_step(net.params, grads, hyper.lr)
    final_mse = _reconstruction_mse(net, eval_images)
    frozen = Encoder(net, frozen=True)
    frozen.history = {
        "holdout_mse_init": init_mse,
        "holdout_mse_final": final_mse,
        "epochs": hyper.epochs,
        "holdout_size": int(len(holdout)),
    }
    return frozen


def encode(encoder, images: np.ndarray) -> np.ndarray:
    return encoder.encode(images)


def nei_from_features(train_features: np.ndarray, test_features: np.ndarray) -> float:
    """The index from already-encoded feature rows."""
    train = np.asarray(train_features, dtype=np.float64)
    test = np.asarray(test_features, dtype=np.float64)
    if train.ndim != 2 or test.ndim != 2:
        raise ValueError("features must be 2-D (rows = samples)")
    if len(train) == 0 or len(test) == 0:
        raise ValueError("both split sides must be non-empty")
    diff = train.mean(axis=0) - test.mean(axis=0)
    union = np.concatenate([train, test])
    sigma = union.std(axis=0)
    ratio = np.zeros_like(diff)
    live = sigma > 0
    ratio[live] = diff[live] / sigma[live]
    degenerate = ~live & (diff != 0)
    ratio[degenerate] = diff[degenerate] / EPSILON
    return float(np.linalg.norm(ratio))


def nei(encoder, split: ClassSplit) -> float:
    """NEI for one class under a frozen encoder."""
    if len(split.train_images) == 0 or len(split.test_images) == 0:
        raise ValueError(f"class {split.label}: empty split side")
    return nei_from_features(
        encoder.encode(split.train_images), encoder.encode(split.test_images)
    )


@dataclass
class NodeNEI:
    node_id: int
    per_class: dict[int, float]
    aggregate: float | None
    skipped: list[int]


@dataclass
class NEIReport:
    """Per-node, per-class index values with aggregates and provenance."""

    per_node: list[NodeNEI]
    aggregate: float | None
    encoder_fingerprint: str
    snapshot: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "aggregate": self.aggregate,
            "encoder_fingerprint": self.encoder_fingerprint,
            "snapshot": self.snapshot,
            "per_node": [
                {
                    "node_id": n.node_id,
                    "per_class": {str(k): v for k, v in sorted(n.per_class.items())},
                    "aggregate": n.aggregate,
                    "skipped": n.skipped,
                }
                for n in self.per_node
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NEIReport":
        doc = json.loads(text)
        nodes = [
            NodeNEI(
                d["node_id"],
                {int(k): v for k, v in d["per_class"].items()},
                d["aggregate"],
                list(d["skipped"]),
            )
            for d in doc["per_node"]
        ]
        return cls(nodes, doc["aggregate"], doc["encoder_fingerprint"], doc["snapshot"])


def nei_report_from_features(
    node_features: list[tuple[int, np.ndarray, np.ndarray]],
    test_features: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
    fingerprint: str,
    snapshot: dict | None = None,
) -> NEIReport:
    """Report from pre-encoded shards: (node_id, features, labels) triples."""
    test_by_class = {
        c: test_features[test_labels == c]
        for c in range(num_classes)
    }
    nodes = []
    for node_id, feats, labels in node_features:
        per_class: dict[int, float] = {}
        skipped: list[int] = []
        for c in range(num_classes):
            mine = feats[labels == c]
            other = test_by_class[c]
            if len(mine) == 0 or len(other) == 0:
                skipped.append(c)
                continue
            per_class[c] = nei_from_features(mine, other)
        agg = float(np.mean(list(per_class.values()))) if per_class else None
        nodes.append(NodeNEI(node_id, per_class, agg, skipped))
    node_aggs = [n.aggregate for n in nodes if n.aggregate is not None]
    overall = float(np.mean(node_aggs)) if node_aggs else None
    return NEIReport(nodes, overall, fingerprint, snapshot or {})


def nei_report(encoder, shards: list[MaterializedShard], test_set: Dataset) -> NEIReport:
    """Per-shard, per-class NEI against a global test split.

    Classes absent from either side are skipped and recorded; a node's
    aggregate is the unweighted mean over its evaluated classes and the
    report aggregate the mean over node aggregates.
    """
    if not getattr(encoder, "frozen", False):
        raise ValueError("encoder must be frozen")
    test_features = encoder.encode(test_set.images)
    node_features = [
        (shard.node_id, encoder.encode(shard.images), shard.labels) for shard in shards
    ]
    snapshot = {
        "num_nodes": len(shards),
        "shard_sizes": [len(s) for s in shards],
        "test_size": len(test_set),
        "num_classes": test_set.num_classes,
    }
    return nei_report_from_features(
        node_features,
        test_features,
        test_set.labels,
        test_set.num_classes,
        encoder.fingerprint,
        snapshot,
    )


class NEIScorer(BaseEstimator):
    """Estimator wrapper: fit trains and freezes the encoder, then score away.

    Parameters mirror the training hyper-parameters; after ``fit`` the
    frozen extractor is available as ``encoder_``.
    """

    def __init__(self, epochs: int = 5, batch_size: int = 64, lr: float = 0.01,
                 seed: int = 0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        fresh = build_encoder(ds.image_shape, self.seed)
        self.encoder_ = train_autoencoder(
            fresh, ds, EncoderHyper(self.epochs, self.batch_size, self.lr), self.seed
        )
        return self

    def transform(self, images: np.ndarray) -> np.ndarray:
        return self.encoder_.encode(images)

    def report(self, shards: list[MaterializedShard], test_set: Dataset) -> NEIReport:
        return nei_report(self.encoder_, shards, test_set)
