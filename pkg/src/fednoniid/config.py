"""Run configuration: YAML (or JSON) parsing with strict validation.

The three core keys use exactly the names from the tutorial config:
``dataset_mode``, ``node_num`` and ``split_mode``.  Unknown keys are
rejected with a listing of the valid ones, duplicate keys are an error,
and messages carry the line they came from.  ``resolved()`` returns the
post-defaults dictionary that output artifacts embed, so every run is
self-describing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import yaml

DATA_DIR_ENV = "FEDNONIID_DATA_DIR"


class ConfigError(Exception):
    """Invalid run configuration (missing/unknown keys, bad types)."""


def _compose(text: str, origin: str):
    """Parse into plain python plus a {key-path: line} map; rejects duplicates."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: not valid YAML/JSON: {exc}") from exc
    lines: dict[str, int] = {}
    scalar_loader = yaml.SafeLoader("")

    def build(node, path):
        if node is None:
            return None
        if isinstance(node, yaml.MappingNode):
            out = {}
            for key_node, value_node in node.value:
                key = scalar_loader.construct_object(key_node, deep=True)
                key_path = f"{path}.{key}" if path else str(key)
                line = key_node.start_mark.line + 1
                if key in out:
                    raise ConfigError(
                        f"{origin}: duplicate key {key_path!r} (line {line})"
                    )
                lines[key_path] = line
                out[key] = build(value_node, key_path)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [build(child, f"{path}[{i}]") for i, child in enumerate(node.value)]
        return scalar_loader.construct_object(node, deep=True)

    return build(root, ""), lines


class _Field:
    def __init__(self, default, types, check=None):
        self.default = default
        self.types = types if isinstance(types, tuple) else (types,)
        self.check = check


def _in(values):
    return (lambda v: v in values), f"one of {sorted(values)}"


_SCHEMA = {
    "dataset_mode": _Field(None, str, (_in({"MNIST", "CIFAR10"}))),
    "node_num": _Field(None, int, (lambda v: v >= 1, ">= 1")),
    "split_mode": _Field(None, int, (_in({0, 1, 2}))),
    "seed": _Field(0, int, None),
    "noise": {
        "kind": _Field("gaussian", str, (_in({"gaussian", "salt_pepper"}))),
        "level": _Field(25.0, (int, float), (lambda v: v >= 0, ">= 0")),
    },
    "prior": {
        "labels_per_node": _Field(2, int, (lambda v: v >= 1, ">= 1")),
        "overlap": _Field(0.0, (int, float), (lambda v: 0 <= v <= 1, "in [0, 1]")),
        "error": _Field(0.0, (int, float), (lambda v: 0 <= v <= 1, "in [0, 1]")),
        "noise": _Field(False, bool, None),
    },
    "concept": {
        "groups": _Field(2, int, (lambda v: v >= 1, ">= 1")),
    },
    "sizes": _Field(None, list, None),
    "power_law": {
        "alpha": _Field(1.2, (int, float), (lambda v: v > 0, "> 0")),
    },
    "quality": {
        "n": _Field(0.0, (int, float), (lambda v: 0 <= v <= 1, "in [0, 1]")),
        "e": _Field(0.0, (int, float), (lambda v: 0 <= v <= 1, "in [0, 1]")),
    },
    "fed": {
        "rounds": _Field(100, int, (lambda v: v >= 1, ">= 1")),
        "lr": _Field(0.05, (int, float), (lambda v: v >= 0, ">= 0")),
        "batch": _Field(32, int, (lambda v: v >= 1, ">= 1")),
        "local_epochs": _Field(1, int, (lambda v: v >= 0, ">= 0")),
        "weighting": _Field(
            "size_proportional", str, (_in({"equal", "size_proportional"}))
        ),
        "clients_per_round": _Field(None, int, (lambda v: v >= 1, ">= 1")),
        "eval_every": _Field(10, int, (lambda v: v >= 1, ">= 1")),
        "model": _Field(None, str, (_in({"mnist_mlp", "cifar_cnn"}))),
    },
    "nei": {
        "fractions": _Field([0.3, 0.5, 0.7, 0.9], list, None),
        "encoder": {
            "epochs": _Field(5, int, (lambda v: v >= 0, ">= 0")),
            "batch": _Field(64, int, (lambda v: v >= 1, ">= 1")),
            "lr": _Field(0.01, (int, float), (lambda v: v > 0, "> 0")),
        },
    },
    "grid": {
        "axis": _Field("nodes", str, (_in({"nodes", "rounds", "quality", "nei"}))),
        "values": _Field([5, 10, 20, 30], list, None),
        "skews": _Field(["quantity_skew", "label_skew"], list, None),
        "n_levels": _Field([0.0], list, None),
        "repetitions": _Field(3, int, (lambda v: v >= 1, ">= 1")),
        "workers": _Field(1, int, (lambda v: v >= 1, ">= 1")),
    },
    "paths": {
        "data_dir": _Field(None, str, None),
        "out_dir": _Field("out", str, None),
        "shards_dir": _Field(None, str, None),
        "results": _Field(None, str, None),
        "mnist": {
            "train_images": _Field("train-images-idx3-ubyte", str, None),
            "train_labels": _Field("train-labels-idx1-ubyte", str, None),
            "test_images": _Field("t10k-images-idx3-ubyte", str, None),
            "test_labels": _Field("t10k-labels-idx1-ubyte", str, None),
        },
        "cifar": {
            "train_batches": _Field(
                [f"data_batch_{i}.bin" for i in range(1, 6)], list, None
            ),
            "test_batch": _Field("test_batch.bin", str, None),
        },
        "urls": _Field(None, dict, None),
        "digests": _Field(None, dict, None),
    },
}

_REQUIRED = ("dataset_mode", "node_num", "split_mode")


def _validate(data, schema, lines, origin, path=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        line = lines.get(path)
        at = f" (line {line})" if line else ""
        raise ConfigError(f"{origin}: {path or 'document'} must be a mapping{at}")
    known = set(schema)
    unknown = set(data) - known
    if unknown:
        first = sorted(unknown)[0]
        key_path = f"{path}.{first}" if path else first
        line = lines.get(key_path)
        at = f" (line {line})" if line else ""
        raise ConfigError(
            f"{origin}: unknown key {key_path!r}{at}; valid keys here: "
            + ", ".join(sorted(known))
        )
    out = {}
    for key, rule in schema.items():
        key_path = f"{path}.{key}" if path else key
        if isinstance(rule, dict):
            out[key] = _validate(data.get(key), rule, lines, origin, key_path)
            continue
        if key in data and data[key] is not None:
            value = data[key]
            ok_types = rule.types
            if bool not in ok_types and isinstance(value, bool):
                ok = False
            else:
                ok = isinstance(value, ok_types)
            if not ok:
                line = lines.get(key_path)
                at = f" (line {line})" if line else ""
                names = "/".join(t.__name__ for t in ok_types)
                raise ConfigError(
                    f"{origin}: {key_path} must be {names}, got "
                    f"{type(value).__name__}{at}"
                )
            if rule.check is not None:
                fn, desc = rule.check
                if not fn(value):
                    line = lines.get(key_path)
                    at = f" (line {line})" if line else ""
                    raise ConfigError(
                        f"{origin}: {key_path} must be {desc}, got {value!r}{at}"
                    )
            out[key] = value
        else:
            default = rule.default
            # defaults are shared schema objects; hand out copies of containers
            out[key] = list(default) if isinstance(default, list) else default
    return out


@dataclass
class RunConfig:
    """Fully validated configuration with defaults filled in."""

    data: dict
    origin: str = "<config>"

    def __getitem__(self, key):
        return self.data[key]

    @property
    def dataset_mode(self) -> str:
        return self.data["dataset_mode"]

    @property
    def node_num(self) -> int:
        return self.data["node_num"]

    @property
    def split_mode(self) -> int:
        return self.data["split_mode"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def data_dir(self) -> Path:
        configured = self.data["paths"]["data_dir"]
        if configured:
            return Path(configured)
        return Path(os.environ.get(DATA_DIR_ENV, "data"))

    def model_arch(self) -> str:
        configured = self.data["fed"]["model"]
        if configured:
            return configured
        return "cifar_cnn" if self.dataset_mode == "CIFAR10" else "mnist_mlp"

    def resolved(self) -> dict:
        return self.data

    def partition_spec(self):
        from .partition import PartitionSpec

        size_profile = "equal"
        if self.data["sizes"] is not None:
            size_profile = "explicit"
        return PartitionSpec(
            split_mode=self.split_mode,
            node_num=self.node_num,
            seed=self.seed,
            noise_kind=self.data["noise"]["kind"],
            noise_level=float(self.data["noise"]["level"]),
            labels_per_node=self.data["prior"]["labels_per_node"],
            overlap_frac=float(self.data["prior"]["overlap"]),
            error_frac=float(self.data["prior"]["error"]),
            prior_noise=self.data["prior"]["noise"],
            group_count=self.data["concept"]["groups"],
            size_profile=size_profile,
            sizes=self.data["sizes"],
            power_alpha=float(self.data["power_law"]["alpha"]),
        )

    def fed_config(self, node_num: int | None = None):
        from .federated import FedConfig

        fed = self.data["fed"]
        return FedConfig(
            node_num=node_num if node_num is not None else self.node_num,
            rounds=fed["rounds"],
            clients_per_round=fed["clients_per_round"],
            local_epochs=fed["local_epochs"],
            batch_size=fed["batch"],
            lr=float(fed["lr"]),
            weighting=fed["weighting"],
            model_arch=self.model_arch(),
            eval_every=fed["eval_every"],
            seed=self.seed,
        )


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    data, lines = _compose(text, origin)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise ConfigError(
            f"{origin}: missing required key(s): " + ", ".join(missing)
        )
    validated = _validate(data, _SCHEMA, lines, origin)
    return RunConfig(validated, origin)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))
