"""Client shard generation under the three distribution-shift regimes.

Partitioners are scikit-learn style transformers: construct with plain
parameters, call ``transform(dataset)`` (or ``partition(dataset, pool=...)``
to restrict to a subset of sample indices) and get a list of
:class:`ClientShard`.  All of them are pure functions of
(dataset, parameters, seed): byte-identical output across runs.

Shift regimes (``split_mode``):
  0  covariate shift   - equal random split; node i's pixels perturbed with
                         the i-th rung of a noise ladder, labels untouched.
  1  prior shift       - label-sharded split (each node holds at most
                         ``labels_per_node`` distinct labels), optional
                         shared-sample overlap and dirty-label injection.
  2  concept shift     - equal random split; nodes are grouped and each
                         group relabels through its own permutation, pixel
                         data bit-identical to the source.

Unbalancedness is a separate partitioner with exact per-node sizes, and
:func:`inject_quality` adds the N (shared data) / E (error label) knobs on
top of any shard list.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datasets import Dataset
from .rng import (
    PCG32,
    FRACTION_SPLIT,
    LABEL_ERROR,
    NOISE,
    OVERLAP_POOL,
    PARTITION_SHUFFLE,
    QUALITY_POOL,
    derive_seed,
)

GAUSSIAN = "gaussian"
SALT_PEPPER = "salt_pepper"

SPLIT_COVARIATE = 0
SPLIT_PRIOR = 1
SPLIT_CONCEPT = 2


@dataclass(frozen=True)
class NoiseSpec:
    """Noise actually applied to one shard: kind, ladder rung and seed.

    ``positions`` lists the shard positions (not source indices) the noise
    applies to; the per-sample stream is selected by the source index, so
    materialisation never depends on evaluation order.
    """

    kind: str
    level: float
    seed: int
    positions: np.ndarray


@dataclass
class ClientShard:
    """One node's data: source indices plus label/noise transformations."""

    node_id: int
    indices: np.ndarray
    label_map: dict[int, int] | None = None
    sample_overrides: dict[int, int] = field(default_factory=dict)
    noise: NoiseSpec | None = None

    def __len__(self) -> int:
        return len(self.indices)

    def effective_labels(self, ds: Dataset) -> np.ndarray:
        labels = ds.labels[self.indices].copy()
        if self.label_map:
            lut = np.arange(ds.num_classes, dtype=np.int64)
            for src, dst in self.label_map.items():
                lut[src] = dst
            labels = lut[labels]
        for pos, lab in self.sample_overrides.items():
            labels[pos] = lab
        return labels


@dataclass(frozen=True)
class MaterializedShard:
    """A shard with pixels copied and all transformations applied."""

    node_id: int
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class QualitySpec:
    """Quality knobs: N (shared-data proportion) and E (error-label proportion)."""

    n_frac: float = 0.0
    e_frac: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.n_frac <= 1.0 and 0.0 <= self.e_frac <= 1.0):
            raise ValueError("quality fractions must lie in [0, 1]")


def apply_noise_image(img: np.ndarray, noise: NoiseSpec, source_index: int) -> np.ndarray:
    rng = PCG32(noise.seed, stream=source_index)
    flat = img.reshape(-1)
    if noise.kind == GAUSSIAN:
        noisy = flat.astype(np.float64) + noise.level * rng.normals(flat.size)
        return np.clip(np.rint(noisy), 0, 255).astype(np.uint8).reshape(img.shape)
    if noise.kind == SALT_PEPPER:
        k = int(round(noise.level * flat.size))
        positions = rng.sample(flat.size, k)
        out = flat.copy()
        for pos in positions:
            coin = rng.below(2)
            v = out[pos]
            if v == 0:
                out[pos] = 255
            elif v == 255:
                out[pos] = 0
            else:
                out[pos] = 255 if coin else 0
        return out.reshape(img.shape)
    raise ValueError(f"unknown noise kind {noise.kind!r}")


def materialize(ds: Dataset, shard: ClientShard) -> MaterializedShard:
    """Resolve a shard into copied pixel data and effective labels."""
    images = ds.images[shard.indices].copy()
    if shard.noise is not None and shard.noise.level > 0:
        for pos in shard.noise.positions:
            images[pos] = apply_noise_image(
                images[pos], shard.noise, int(shard.indices[pos])
            )
    return MaterializedShard(shard.node_id, images, shard.effective_labels(ds))


def _equal_slices(order: np.ndarray, k: int) -> list[np.ndarray]:
    """Split an index array into k contiguous slices with sizes differing <= 1."""
    n = len(order)
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(order[start : start + size].copy())
        start += size
    return out


def _noise_ladder(kind: str | None, level: float, node_num: int) -> list[float]:
    if kind is None or level == 0:
        return [0.0] * node_num
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if node_num == 1:
        return [0.0]
    return [level * i / (node_num - 1) for i in range(node_num)]


def _pool_indices(ds: Dataset, pool: np.ndarray | None) -> np.ndarray:
    if pool is None:
        return np.arange(len(ds), dtype=np.int64)
    return np.asarray(pool, dtype=np.int64).copy()


class CovariateShiftPartitioner(BaseEstimator, TransformerMixin):
    """Equal random split with a per-node noise ladder (feature skew).

    Node i of K receives noise parameter ``level * i / (K - 1)``; node 0 is
    always clean.  Gaussian noise is added in float space, rounded and
    clamped to [0, 255]; salt-and-pepper forces exactly
    ``round(rate * pixel_count)`` pixel values per image to 0 or 255.
    """

    def __init__(self, node_num: int = 10, noise_kind: str = GAUSSIAN,
                 noise_level: float = 25.0, seed: int = 0):
        self.node_num = node_num
        self.noise_kind = noise_kind
        self.noise_level = noise_level
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        return self

    def transform(self, ds: Dataset) -> list[ClientShard]:
        return self.partition(ds)

    def partition(self, ds: Dataset, pool: np.ndarray | None = None) -> list[ClientShard]:
        indices = _pool_indices(ds, pool)
        if self.node_num < 1:
            raise ValueError("node_num must be >= 1")
        if self.node_num > len(indices):
            raise ValueError(f"node_num {self.node_num} exceeds dataset size {len(indices)}")
        ladder = _noise_ladder(self.noise_kind, self.noise_level, self.node_num)
        rng = PCG32(derive_seed(self.seed, PARTITION_SHUFFLE), stream=0)
        rng.shuffle(indices)
        noise_seed = derive_seed(self.seed, NOISE)
        shards = []
        for i, part in enumerate(_equal_slices(indices, self.node_num)):
            noise = None
            if ladder[i] > 0:
                noise = NoiseSpec(self.noise_kind, ladder[i], noise_seed,
                                  np.arange(len(part), dtype=np.int64))
            shards.append(ClientShard(i, part, noise=noise))
        return shards


def _label_slices(labels: np.ndarray, order: np.ndarray, num_slices: int,
                  num_classes: int) -> list[np.ndarray]:
    """Cut ``order`` into ``num_slices`` single-label slices of near-equal size.

    Slices are allocated to labels proportionally to label counts (largest
    remainder, at least one slice per present label) so the per-node label
    cardinality bound holds even for unbalanced classes.
    """
    present = [c for c in range(num_classes) if np.any(labels[order] == c)]
    if len(present) > num_slices:
        raise ValueError(
            f"impossible coverage: {len(present)} labels present but only "
            f"{num_slices} label slices available"
        )
    counts = {c: int(np.sum(labels[order] == c)) for c in present}
    total = len(order)
    alloc = {c: 1 for c in present}
    spare = num_slices - len(present)
    for c in present:
        alloc[c] += int(spare * counts[c] / total)
    remaining = num_slices - sum(alloc.values())
    remainders = sorted(((spare * counts[c] / total) % 1.0, -c) for c in present)
    for _, neg_c in reversed(remainders):
        if remaining == 0:
            break
        alloc[-neg_c] += 1
        remaining -= 1
    slices = []
    for c in present:
        members = order[labels[order] == c]
        slices.extend(_equal_slices(members, alloc[c]))
    return slices


class PriorShiftPartitioner(BaseEstimator, TransformerMixin):
    """Label-sharded split (label distribution skew).

    The shuffled pool is stably sorted by label, cut into
    ``node_num * labels_per_node`` single-label slices and dealt round-robin:
    node i takes slices i, i + node_num, ...  With ``overlap_frac > 0`` a
    common pool of ``floor(overlap_frac * N)`` samples is added to every
    shard; ``error_frac`` flips that fraction of each shard's labels to a
    uniformly drawn wrong label.  ``noise_kind`` optionally reuses the
    covariate noise ladder on top.
    """

    def __init__(self, node_num: int = 10, labels_per_node: int = 2,
                 overlap_frac: float = 0.0, error_frac: float = 0.0,
                 noise_kind: str | None = None, noise_level: float = 0.0,
                 seed: int = 0):
        self.node_num = node_num
        self.labels_per_node = labels_per_node
        self.overlap_frac = overlap_frac
        self.error_frac = error_frac
        self.noise_kind = noise_kind
        self.noise_level = noise_level
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        return self

    def transform(self, ds: Dataset) -> list[ClientShard]:
        return self.partition(ds)

    def partition(self, ds: Dataset, pool: np.ndarray | None = None) -> list[ClientShard]:
        if self.node_num < 1:
            raise ValueError("node_num must be >= 1")
        if self.labels_per_node < 1:
            raise ValueError("labels_per_node must be >= 1")
        if self.labels_per_node > ds.num_classes:
            raise ValueError(
                f"labels_per_node {self.labels_per_node} exceeds "
                f"num_classes {ds.num_classes}"
            )
        if not (0.0 <= self.overlap_frac <= 1.0 and 0.0 <= self.error_frac <= 1.0):
            raise ValueError("overlap_frac and error_frac must lie in [0, 1]")
        indices = _pool_indices(ds, pool)
        rng = PCG32(derive_seed(self.seed, PARTITION_SHUFFLE), stream=0)
        rng.shuffle(indices)
        sort_order = np.argsort(ds.labels[indices], kind="stable")
        ordered = indices[sort_order]
        num_slices = self.node_num * self.labels_per_node
        slices = _label_slices(ds.labels, ordered, num_slices, ds.num_classes)
        ladder = _noise_ladder(self.noise_kind, self.noise_level, self.node_num)
        noise_seed = derive_seed(self.seed, NOISE)
        shards = []
        for i in range(self.node_num):
            mine = [slices[j] for j in range(i, num_slices, self.node_num)]
            part = np.concatenate(mine) if mine else np.empty(0, dtype=np.int64)
            noise = None
            if ladder[i] > 0:
                noise = NoiseSpec(self.noise_kind, ladder[i], noise_seed,
                                  np.arange(len(part), dtype=np.int64))
            shards.append(ClientShard(i, part, noise=noise))
        if self.overlap_frac > 0:
            pool_rng = PCG32(derive_seed(self.seed, OVERLAP_POOL), stream=0)
            k = int(self.overlap_frac * len(indices))
            common = indices[pool_rng.sample(len(indices), k)]
            for shard in shards:
                _append_missing(shard, common)
        if self.error_frac > 0:
            _flip_labels(shards, ds, self.error_frac, derive_seed(self.seed, LABEL_ERROR))
        return shards


def _identity_permutation(num_classes: int) -> dict[int, int]:
    return {c: c for c in range(num_classes)}


def cyclic_permutation(shift: int, num_classes: int) -> dict[int, int]:
    return {c: (c + shift) % num_classes for c in range(num_classes)}


class ConceptShiftPartitioner(BaseEstimator, TransformerMixin):
    """Grouped relabelling split (same features, different labels).

    Nodes are assigned round-robin to ``group_count`` groups; group g
    relabels through its permutation (default: cyclic shift by g, so group
    0 keeps the source labels).  Pixel data is bit-identical to the source.
    """

    def __init__(self, node_num: int = 10, group_count: int = 2,
                 permutations: Sequence[dict[int, int]] | None = None,
                 seed: int = 0):
        self.node_num = node_num
        self.group_count = group_count
        self.permutations = permutations
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        return self

    def transform(self, ds: Dataset) -> list[ClientShard]:
        return self.partition(ds)

    def _group_maps(self, num_classes: int) -> list[dict[int, int]]:
        if self.permutations is None:
            return [cyclic_permutation(g, num_classes) for g in range(self.group_count)]
        maps = [dict(p) for p in self.permutations]
        if len(maps) != self.group_count:
            raise ValueError("need one permutation per group")
        for p in maps:
            if sorted(p.keys()) != list(range(num_classes)) or sorted(
                p.values()
            ) != list(range(num_classes)):
                raise ValueError("permutation is not a bijection on label ids")
        return maps

    def partition(self, ds: Dataset, pool: np.ndarray | None = None) -> list[ClientShard]:
        if self.node_num < 1:
            raise ValueError("node_num must be >= 1")
        if self.group_count < 1:
            raise ValueError("group_count must be >= 1")
        indices = _pool_indices(ds, pool)
        if self.node_num > len(indices):
            raise ValueError(f"node_num {self.node_num} exceeds dataset size {len(indices)}")
        maps = self._group_maps(ds.num_classes)
        rng = PCG32(derive_seed(self.seed, PARTITION_SHUFFLE), stream=0)
        rng.shuffle(indices)
        shards = []
        for i, part in enumerate(_equal_slices(indices, self.node_num)):
            label_map = maps[i % self.group_count]
            if all(k == v for k, v in label_map.items()):
                label_map = None
            shards.append(ClientShard(i, part, label_map=label_map))
        return shards


class UnbalancedPartitioner(BaseEstimator, TransformerMixin):
    """Random split with exact per-node sizes (quantity skew).

    Either pass explicit ``sizes`` or a ``power_alpha`` exponent, in which
    case node k of ``node_num`` receives a share proportional to
    ``(k + 1) ** -power_alpha`` of the whole dataset.
    """

    def __init__(self, sizes: Sequence[int] | None = None, node_num: int | None = None,
                 power_alpha: float | None = None, seed: int = 0):
        self.sizes = sizes
        self.node_num = node_num
        self.power_alpha = power_alpha
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        return self

    def transform(self, ds: Dataset) -> list[ClientShard]:
        return self.partition(ds)

    def _resolve_sizes(self, total: int) -> list[int]:
        if self.sizes is not None:
            return [int(s) for s in self.sizes]
        if self.node_num is None or self.power_alpha is None:
            raise ValueError("need explicit sizes or (node_num, power_alpha)")
        return power_law_sizes(total, self.node_num, self.power_alpha)

    def partition(self, ds: Dataset, pool: np.ndarray | None = None) -> list[ClientShard]:
        indices = _pool_indices(ds, pool)
        sizes = self._resolve_sizes(len(indices))
        if any(s <= 0 for s in sizes):
            raise ValueError("shard sizes must be positive")
        if sum(sizes) > len(indices):
            raise ValueError(f"requested {sum(sizes)} samples but only {len(indices)} available")
        rng = PCG32(derive_seed(self.seed, PARTITION_SHUFFLE), stream=0)
        rng.shuffle(indices)
        shards, start = [], 0
        for i, size in enumerate(sizes):
            shards.append(ClientShard(i, indices[start : start + size].copy()))
            start += size
        return shards


def power_law_sizes(total: int, node_num: int, alpha: float) -> list[int]:
    """Integer sizes proportional to (k+1)**-alpha summing exactly to total.

    Rounds by largest remainder with index tie-break, then guarantees every
    node at least one sample.
    """
    if node_num < 1:
        raise ValueError("node_num must be >= 1")
    if total < node_num:
        raise ValueError("total smaller than node count")
    weights = np.array([(k + 1) ** (-alpha) for k in range(node_num)], dtype=np.float64)
    quotas = total * weights / weights.sum()
    sizes = np.floor(quotas).astype(int)
    remainders = quotas - sizes
    for k in np.argsort(-remainders, kind="stable")[: total - sizes.sum()]:
        sizes[k] += 1
    while sizes.min() == 0:
        sizes[int(np.argmin(sizes))] += 1
        sizes[int(np.argmax(sizes))] -= 1
    return [int(s) for s in sizes]


class QualityInjector(BaseEstimator):
    """N/E data-quality injection over an existing shard list.

    N: a seeded common pool of ``floor(n_frac * len(ds))`` source samples is
    appended to every shard (duplicates across shards intended).  E: in each
    shard exactly ``floor(e_frac * |shard|)`` samples (counted after the N
    pool is added) get a label override drawn uniformly from the wrong
    labels, never the current effective label.
    """

    def __init__(self, n_frac: float = 0.0, e_frac: float = 0.0, seed: int = 0):
        self.n_frac = n_frac
        self.e_frac = e_frac
        self.seed = seed

    def fit(self, ds: Dataset, y=None):
        self.dataset_ = ds
        return self

    def transform(self, shards: list[ClientShard]) -> list[ClientShard]:
        return self.inject(shards, self.dataset_)

    def inject(self, shards: list[ClientShard], ds: Dataset) -> list[ClientShard]:
        spec = QualitySpec(self.n_frac, self.e_frac)
        out = [
            replace(s, indices=s.indices.copy(),
                    sample_overrides=dict(s.sample_overrides))
            for s in shards
        ]
        if spec.n_frac > 0:
            rng = PCG32(derive_seed(self.seed, QUALITY_POOL), stream=0)
            k = int(spec.n_frac * len(ds))
            common = rng.sample(len(ds), k)
            for shard in out:
                _append_missing(shard, common)
        if spec.e_frac > 0:
            _flip_labels(out, ds, spec.e_frac, derive_seed(self.seed, LABEL_ERROR))
        return out


def _append_missing(shard: ClientShard, common: np.ndarray) -> None:
    have = set(shard.indices.tolist())
    extra = np.array([i for i in common.tolist() if i not in have], dtype=np.int64)
    shard.indices = np.concatenate([shard.indices, extra])


def _flip_labels(shards: list[ClientShard], ds: Dataset, e_frac: float,
                 flip_seed: int) -> None:
    if ds.num_classes < 2:
        raise ValueError("label error injection needs at least 2 classes")
    for shard in shards:
        n = len(shard.indices)
        k = int(e_frac * n)
        if k == 0:
            continue
        rng = PCG32(flip_seed, stream=shard.node_id)
        positions = rng.sample(n, k)
        current = shard.effective_labels(ds)
        for pos in positions:
            wrong = (int(current[pos]) + 1 + rng.below(ds.num_classes - 1)) % ds.num_classes
            shard.sample_overrides[int(pos)] = wrong


# ---------------------------------------------------------------------------
# Declarative spec and operation-style wrappers
# ---------------------------------------------------------------------------


@dataclass
class PartitionSpec:
    """Validated bundle of partition parameters, as read from a config file."""

    split_mode: int = SPLIT_COVARIATE
    node_num: int = 10
    seed: int = 0
    noise_kind: str = GAUSSIAN
    noise_level: float = 25.0
    labels_per_node: int = 2
    overlap_frac: float = 0.0
    error_frac: float = 0.0
    prior_noise: bool = False
    group_count: int = 2
    permutations: list[dict[int, int]] | None = None
    size_profile: str = "equal"
    sizes: list[int] | None = None
    power_alpha: float = 1.2

    def __post_init__(self):
        if self.split_mode not in (SPLIT_COVARIATE, SPLIT_PRIOR, SPLIT_CONCEPT):
            raise ValueError("split_mode must be one of {0, 1, 2}")
        if self.node_num < 1:
            raise ValueError("node_num must be >= 1")
        if self.sizes is not None and any(s <= 0 for s in self.sizes):
            raise ValueError("explicit sizes must be positive")

    def build(self) -> BaseEstimator:
        if self.size_profile == "explicit" and self.sizes is not None:
            return UnbalancedPartitioner(sizes=self.sizes, seed=self.seed)
        if self.size_profile == "power_law":
            return UnbalancedPartitioner(
                node_num=self.node_num, power_alpha=self.power_alpha, seed=self.seed
            )
        if self.split_mode == SPLIT_COVARIATE:
            return CovariateShiftPartitioner(
                self.node_num, self.noise_kind, self.noise_level, self.seed
            )
        if self.split_mode == SPLIT_PRIOR:
            return PriorShiftPartitioner(
                self.node_num,
                self.labels_per_node,
                self.overlap_frac,
                self.error_frac,
                self.noise_kind if self.prior_noise else None,
                self.noise_level if self.prior_noise else 0.0,
                self.seed,
            )
        return ConceptShiftPartitioner(
            self.node_num, self.group_count, self.permutations, self.seed
        )

    def to_dict(self) -> dict:
        out = {
            "split_mode": self.split_mode,
            "node_num": self.node_num,
            "seed": self.seed,
            "size_profile": self.size_profile,
        }
        if self.split_mode == SPLIT_COVARIATE or self.prior_noise:
            out["noise_kind"] = self.noise_kind
            out["noise_level"] = self.noise_level
        if self.split_mode == SPLIT_PRIOR:
            out.update(
                labels_per_node=self.labels_per_node,
                overlap_frac=self.overlap_frac,
                error_frac=self.error_frac,
                prior_noise=self.prior_noise,
            )
        if self.split_mode == SPLIT_CONCEPT:
            out["group_count"] = self.group_count
            if self.permutations is not None:
                out["permutations"] = [
                    {str(k): v for k, v in p.items()} for p in self.permutations
                ]
        if self.size_profile == "explicit":
            out["sizes"] = self.sizes
        if self.size_profile == "power_law":
            out["power_alpha"] = self.power_alpha
        return out


def partition_covariate(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.split_mode != SPLIT_COVARIATE:
        raise ValueError("spec.split_mode must be 0 for covariate partitioning")
    return CovariateShiftPartitioner(
        spec.node_num, spec.noise_kind, spec.noise_level, spec.seed
    ).partition(ds)


def partition_prior(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.split_mode != SPLIT_PRIOR:
        raise ValueError("spec.split_mode must be 1 for prior-shift partitioning")
    return PriorShiftPartitioner(
        spec.node_num,
        spec.labels_per_node,
        spec.overlap_frac,
        spec.error_frac,
        spec.noise_kind if spec.prior_noise else None,
        spec.noise_level if spec.prior_noise else 0.0,
        spec.seed,
    ).partition(ds)


def partition_concept(ds: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.split_mode != SPLIT_CONCEPT:
        raise ValueError("spec.split_mode must be 2 for concept-shift partitioning")
    return ConceptShiftPartitioner(
        spec.node_num, spec.group_count, spec.permutations, spec.seed
    ).partition(ds)


def partition_unbalanced(ds: Dataset, sizes: Sequence[int], seed: int) -> list[ClientShard]:
    return UnbalancedPartitioner(sizes=list(sizes), seed=seed).partition(ds)


def inject_quality(shards: list[ClientShard], ds: Dataset, q: QualitySpec,
                   seed: int) -> list[ClientShard]:
    return QualityInjector(q.n_frac, q.e_frac, seed).inject(shards, ds)


def shift_fraction_shards(ds: Dataset, spec: PartitionSpec,
                          fraction: float) -> list[ClientShard]:
    """Shards where ``fraction`` of the data is shift-partitioned, rest IID.

    A seeded split cuts the dataset into a shifted pool (``floor(fraction *
    N)`` samples, partitioned by the spec's shift mode with its noise /
    label transformations) and a plain pool dealt equally and untouched.
    Every node therefore keeps roughly the same total size while the
    proportion of shifted data grows with ``fraction``; at 1.0 this is the
    pure shift partition, at 0.0 a plain random split.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = PCG32(derive_seed(spec.seed, FRACTION_SPLIT), stream=0)
    order = rng.permutation(len(ds))
    m = int(fraction * len(ds))
    shifted_pool, plain_pool = order[:m], order[m:]
    plain_parts = _equal_slices(plain_pool, spec.node_num)
    if m == 0:
        return [ClientShard(i, part) for i, part in enumerate(plain_parts)]
    shifted = spec.build().partition(ds, pool=shifted_pool)
    merged = []
    for shard, plain in zip(shifted, plain_parts):
        overrides = dict(shard.sample_overrides)
        if shard.label_map:
            src_labels = ds.labels[shard.indices]
            for pos in range(len(shard.indices)):
                if pos not in overrides:
                    mapped = shard.label_map[int(src_labels[pos])]
                    if mapped != int(src_labels[pos]):
                        overrides[pos] = mapped
        merged.append(
            ClientShard(
                shard.node_id,
                np.concatenate([shard.indices, plain]),
                label_map=None,
                sample_overrides=overrides,
                noise=shard.noise,
            )
        )
    return merged
