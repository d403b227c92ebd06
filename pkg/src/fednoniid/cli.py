"""Command-line workflow: fetch -> partition -> nei -> train -> grid -> report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(malformed files, digest mismatches, inconsistent archives), 3 runtime
failure (network, unexpected errors).  All subcommands take ``--config``;
``--seed`` and ``--out`` override the config file, and the data root
defaults to ``$FEDNONIID_DATA_DIR``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .datasets import DataError, Dataset, fetch_dataset, load_cifar10, load_mnist
from .federated import experiment_record, round_logs_csv, simulate
from .nei import EncoderHyper, build_encoder, nei_report, train_autoencoder
from .partition import QualityInjector
from .shardio import load_shards, write_shards


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fednoniid", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("fetch", "download source dataset files listed under paths.urls"),
        ("partition", "generate client shards and write FNID archives"),
        ("nei", "train the encoder and report shift indices for the shards"),
        ("train", "simulate FedAvg over the shards and log rounds"),
        ("grid", "run the configured experiment grid and render tables"),
        ("report", "re-render a saved result table"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="YAML/JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument(
            "--format", choices=("csv", "text"), default="csv",
            help="table output format (grid/report)",
        )
        if name == "report":
            p.add_argument("input", help="result table JSON produced by grid")
    return parser


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg["paths"]["out_dir"])


def _shards_dir(args, cfg: RunConfig) -> Path:
    configured = cfg["paths"]["shards_dir"]
    if configured:
        return Path(configured)
    return Path(cfg["paths"]["out_dir"]) / "shards"


def _load_train_test(cfg: RunConfig, need_test: bool = True
                     ) -> tuple[Dataset, Dataset | None]:
    base = cfg.data_dir()
    try:
        if cfg.dataset_mode == "MNIST":
            m = cfg["paths"]["mnist"]
            train = load_mnist(base / m["train_images"], base / m["train_labels"])
            test = (
                load_mnist(base / m["test_images"], base / m["test_labels"])
                if need_test else None
            )
        else:
            c = cfg["paths"]["cifar"]
            train = load_cifar10([base / name for name in c["train_batches"]])
            test = load_cifar10([base / c["test_batch"]]) if need_test else None
    except FileNotFoundError as exc:
        raise DataError(f"dataset file missing: {exc.filename}") from exc
    return train, test


def _cmd_fetch(args, cfg: RunConfig) -> int:
    urls = cfg["paths"]["urls"] or {}
    if not urls:
        raise ConfigError("fetch: no paths.urls configured")
    digests = cfg["paths"]["digests"] or {}
    base = cfg.data_dir()
    for name, url in sorted(urls.items()):
        dest = fetch_dataset(url, base / name, digests.get(name))
        print(f"fetched {name} -> {dest}")
    return 0


def _cmd_partition(args, cfg: RunConfig) -> int:
    train, _ = _load_train_test(cfg, need_test=False)
    spec = cfg.partition_spec()
    shards = spec.build().partition(train)
    quality = cfg["quality"]
    if quality["n"] > 0 or quality["e"] > 0:
        shards = QualityInjector(
            float(quality["n"]), float(quality["e"]), cfg.seed
        ).inject(shards, train)
    out = _shards_dir(args, cfg) if args.out is None else Path(args.out)
    print("begin")
    write_shards(
        shards, train, out, spec,
        extra={"run_config": cfg.resolved()},
        progress=lambda node_id: print(f"index {node_id} saved"),
    )
    print("saved file succeed !")
    return 0


def _trained_encoder(cfg: RunConfig, train: Dataset):
    hyper = cfg["nei"]["encoder"]
    encoder = build_encoder(train.image_shape, cfg.seed)
    return train_autoencoder(
        encoder, train,
        EncoderHyper(hyper["epochs"], hyper["batch"], float(hyper["lr"])),
        cfg.seed,
    )


def _cmd_nei(args, cfg: RunConfig) -> int:
    train, test = _load_train_test(cfg)
    shards, _manifest = load_shards(_shards_dir(args, cfg))
    encoder = _trained_encoder(cfg, train)
    report = nei_report(encoder, shards, test)
    report.snapshot["run_config"] = cfg.resolved()
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "nei_report.json"
    path.write_text(report.to_json() + "\n")
    print(f"aggregate NEI: {report.aggregate}")
    print(f"report written to {path}")
    return 0


def _cmd_train(args, cfg: RunConfig) -> int:
    _train, test = _load_train_test(cfg)
    shards, manifest = load_shards(_shards_dir(args, cfg))
    fed = cfg.fed_config(node_num=len(shards))
    _model, logs = simulate(shards, test, fed)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rounds.csv").write_text(round_logs_csv(logs))
    record = experiment_record(
        fed, logs, extra={"run_config": cfg.resolved(), "shards_manifest_seed": manifest.get("seed")}
    )
    (out / "experiment.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    final = [log for log in logs if log.accuracy is not None][-1]
    print(f"final accuracy: {final.accuracy}")
    print(f"round log written to {out / 'rounds.csv'}")
    return 0


def _cmd_grid(args, cfg: RunConfig) -> int:
    from .bench import GridSpec, render, run_nei_table, run_nodes_table, \
        run_quality_table, run_rounds_table, write_outputs

    train, test = _load_train_test(cfg)
    g = cfg["grid"]
    fed = cfg["fed"]
    # the shift-level grid takes its fractions from the nei block
    values = (
        [float(v) for v in cfg["nei"]["fractions"]]
        if g["axis"] == "nei"
        else list(g["values"])
    )
    spec = GridSpec(
        axis=g["axis"],
        values=values,
        skews=tuple(g["skews"]),
        n_levels=tuple(g["n_levels"]),
        node_num=cfg.node_num,
        repetitions=g["repetitions"],
        seed_base=cfg.seed,
        fed={
            "rounds": fed["rounds"],
            "lr": float(fed["lr"]),
            "batch_size": fed["batch"],
            "local_epochs": fed["local_epochs"],
            "weighting": fed["weighting"],
            "clients_per_round": fed["clients_per_round"],
            "eval_every": fed["eval_every"],
            "model_arch": cfg.model_arch(),
        },
        partition={
            "labels_per_node": cfg["prior"]["labels_per_node"],
            "error_frac": float(cfg["prior"]["error"]),
            "power_alpha": float(cfg["power_law"]["alpha"]),
            "noise_kind": cfg["noise"]["kind"],
            "noise_level": float(cfg["noise"]["level"]),
            "group_count": cfg["concept"]["groups"],
        },
    )
    workers = g["workers"]
    if spec.axis == "nodes":
        table = run_nodes_table(train, test, spec, workers)
    elif spec.axis == "rounds":
        table = run_rounds_table(train, test, spec, workers)
    elif spec.axis == "quality":
        table = run_quality_table(train, test, spec, workers)
    else:
        encoder = _trained_encoder(cfg, train)
        table = run_nei_table(train, test, spec, encoder, workers)
    table.metadata["run_config"] = cfg.resolved()
    out = _out_dir(args, cfg)
    paths = write_outputs(table, out, spec.axis, train.name)
    print(render(table, "csv" if args.format == "csv" else "aligned_text"), end="")
    print(f"table written to {paths['json']}")
    return 0


def _cmd_report(args, cfg: RunConfig) -> int:
    from .bench import ResultTable, render

    source = Path(args.input)
    if not source.exists():
        raise DataError(f"result table not found: {source}")
    table = ResultTable.from_json(source.read_text())
    text = render(table, "csv" if args.format == "csv" else "aligned_text")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"rendered to {out}")
    else:
        print(text, end="")
    return 0


_COMMANDS = {
    "fetch": _cmd_fetch,
    "partition": _cmd_partition,
    "nei": _cmd_nei,
    "train": _cmd_train,
    "grid": _cmd_grid,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"fednoniid: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.data["seed"] = args.seed
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, _UsageError) as exc:
        print(f"fednoniid: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"fednoniid: data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"fednoniid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
