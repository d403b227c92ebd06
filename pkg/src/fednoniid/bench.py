"""Experiment grids over node count, rounds, data quality and shift level.

Each grid cell is recomputable in isolation: it is keyed by its row/column
coordinates and a seed ``seed_base + repetition``, and tables store the raw
per-repetition values next to the means.  Cells run sequentially by
default; pass ``workers > 1`` to fan independent cells out to a thread
pool (cell output is keyed, so completion order never matters).

The shift-level ("nei") grid reports the encoder index of shard sets in
which a growing fraction of the data is subjected to the configured shift
while the remainder stays IID, so the index rises with the fraction for
every shift mode.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .federated import FedConfig, simulate
from .nei import nei_report_from_features
from .partition import (
    SPLIT_CONCEPT,
    SPLIT_COVARIATE,
    SPLIT_PRIOR,
    ClientShard,
    PartitionSpec,
    PriorShiftPartitioner,
    QualityInjector,
    UnbalancedPartitioner,
    apply_noise_image,
    materialize,
    shift_fraction_shards,
)

QUANTITY_SKEW = "quantity_skew"
LABEL_SKEW = "label_skew"
NEI_MODES = ("covariate_shift", "prior_shift", "concept_shift")
_MODE_IDS = {"covariate_shift": SPLIT_COVARIATE, "prior_shift": SPLIT_PRIOR,
             "concept_shift": SPLIT_CONCEPT}


@dataclass
class GridSpec:
    """One experiment grid: an axis, its values and the shared base configs.

    ``fed`` holds FedConfig overrides (rounds, lr, local_epochs, ...);
    ``partition`` holds partition parameters (labels_per_node, power_alpha,
    noise_level, error_frac, group_count, ...).
    """

    axis: str
    values: list
    skews: tuple[str, ...] = (QUANTITY_SKEW, LABEL_SKEW)
    n_levels: tuple[float, ...] = (0.0,)
    node_num: int = 10
    repetitions: int = 3
    seed_base: int = 0
    fed: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in ("nodes", "rounds", "quality", "nei"):
            raise ValueError(f"unknown grid axis {self.axis!r}")
        if not self.values:
            raise ValueError("axis values must be non-empty")
        if self.axis in ("rounds",) and sorted(self.values) != list(self.values):
            raise ValueError("round checkpoints must be increasing")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class ResultTable:
    row_labels: list[str]
    col_labels: list[str]
    values: list[list[float]]
    raw: list[list[list[float]]]
    metadata: dict = field(default_factory=dict)

    def cell(self, row: str, col) -> float:
        return self.values[self.row_labels.index(row)][self.col_labels.index(col)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "row_labels": self.row_labels,
                "col_labels": [str(c) for c in self.col_labels],
                "values": self.values,
                "raw": self.raw,
                "metadata": self.metadata,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        return cls(
            doc["row_labels"],
            doc["col_labels"],
            doc["values"],
            doc["raw"],
            doc.get("metadata", {}),
        )


def _cell_map(spec: GridSpec, rows, cols, one_cell, workers: int = 1):
    """Evaluate every (row, col) cell; errors carry the cell coordinates."""

    def guarded(r, c):
        try:
            reps = [one_cell(r, c, spec.seed_base + rep) for rep in range(spec.repetitions)]
        except Exception as exc:
            raise RuntimeError(f"grid cell (row={r!r}, col={c!r}) failed: {exc}") from exc
        return [float(v) for v in reps]

    raw = [[None] * len(cols) for _ in rows]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (i, j): pool.submit(guarded, r, c)
                for i, r in enumerate(rows)
                for j, c in enumerate(cols)
            }
            for (i, j), fut in futures.items():
                raw[i][j] = fut.result()
    else:
        for i, r in enumerate(rows):
            for j, c in enumerate(cols):
                raw[i][j] = guarded(r, c)
    values = [[float(np.mean(cell)) for cell in row] for row in raw]
    return values, raw


def make_skew_shards(train: Dataset, skew: str, node_num: int, seed: int,
                     params: dict) -> list[ClientShard]:
    if skew == QUANTITY_SKEW:
        return UnbalancedPartitioner(
            node_num=node_num,
            power_alpha=params.get("power_alpha", 1.2),
            seed=seed,
        ).partition(train)
    if skew == LABEL_SKEW:
        return PriorShiftPartitioner(
            node_num=node_num,
            labels_per_node=params.get("labels_per_node", 2),
            seed=seed,
        ).partition(train)
    raise ValueError(f"unknown skew kind {skew!r}")


def _fed_config(spec: GridSpec, node_num: int, seed: int, rounds: int | None = None
                ) -> FedConfig:
    opts = dict(spec.fed)
    opts.setdefault("rounds", 100)
    if rounds is not None:
        opts["rounds"] = rounds
    return FedConfig(node_num=node_num, seed=seed, **opts)


def _final_accuracy(train, test, shards, cfg: FedConfig) -> float:
    mats = [materialize(train, s) for s in shards]
    _, logs = simulate(mats, test, cfg, eval_rounds={cfg.rounds})
    return logs[-1].accuracy


def run_nodes_table(train: Dataset, test: Dataset, spec: GridSpec,
                    workers: int = 1) -> ResultTable:
    """Final-round accuracy per (skew kind, node count)."""
    start = time.perf_counter()

    def one_cell(skew, node_num, seed):
        shards = make_skew_shards(train, skew, node_num, seed, spec.partition)
        return _final_accuracy(train, test, shards, _fed_config(spec, node_num, seed))

    values, raw = _cell_map(spec, list(spec.skews), list(spec.values), one_cell, workers)
    return ResultTable(
        list(spec.skews),
        list(spec.values),
        values,
        raw,
        _metadata(spec, "accuracy", start, train),
    )


def run_rounds_table(train: Dataset, test: Dataset, spec: GridSpec,
                     workers: int = 1) -> ResultTable:
    """Accuracy at each checkpoint round, read from a single run per row.

    One simulation per (skew, repetition) runs to the last checkpoint and
    is evaluated exactly at the checkpoints, so later columns continue the
    earlier ones instead of restarting.
    """
    start = time.perf_counter()
    checkpoints = [int(v) for v in spec.values]
    horizon = checkpoints[-1]

    def one_row(skew, seed):
        opts_rounds = spec.fed.get("rounds")
        if opts_rounds is not None and horizon > opts_rounds:
            raise ValueError(f"checkpoint {horizon} beyond rounds budget {opts_rounds}")
        cfg = _fed_config(spec, spec.node_num, seed, rounds=horizon)
        shards = make_skew_shards(train, skew, spec.node_num, seed, spec.partition)
        mats = [materialize(train, s) for s in shards]
        _, logs = simulate(mats, test, cfg, eval_rounds=set(checkpoints))
        by_round = {log.round: log.accuracy for log in logs if log.accuracy is not None}
        return [by_round[c] for c in checkpoints]

    raw = [[[] for _ in checkpoints] for _ in spec.skews]
    for i, skew in enumerate(spec.skews):
        for rep in range(spec.repetitions):
            try:
                row = one_row(skew, spec.seed_base + rep)
            except Exception as exc:
                raise RuntimeError(f"grid row {skew!r} failed: {exc}") from exc
            for j, v in enumerate(row):
                raw[i][j].append(float(v))
    values = [[float(np.mean(cell)) for cell in row] for row in raw]
    return ResultTable(
        list(spec.skews),
        checkpoints,
        values,
        raw,
        _metadata(spec, "accuracy", start, train),
    )


def run_quality_table(train: Dataset, test: Dataset, spec: GridSpec,
                      workers: int = 1) -> ResultTable:
    """Final accuracy over the (N, E) quality grid, rows grouped by skew."""
    start = time.perf_counter()
    rows = [
        (skew, n)
        for skew in spec.skews
        for n in spec.n_levels
    ]
    row_labels = [f"{skew} N={n:.0%}" for skew, n in rows]
    e_levels = [float(v) for v in spec.values]

    def one_cell(row, e_frac, seed):
        skew, n_frac = row
        if not (0.0 <= e_frac <= 1.0 and 0.0 <= n_frac <= 1.0):
            raise ValueError("quality fractions must lie in [0, 1]")
        shards = make_skew_shards(train, skew, spec.node_num, seed, spec.partition)
        if n_frac > 0 or e_frac > 0:
            shards = QualityInjector(n_frac, e_frac, seed).inject(shards, train)
        return _final_accuracy(train, test, shards, _fed_config(spec, spec.node_num, seed))

    values, raw = _cell_map(spec, rows, e_levels, one_cell, workers)
    return ResultTable(
        row_labels,
        e_levels,
        values,
        raw,
        _metadata(spec, "accuracy", start, train),
    )


def run_nei_table(train: Dataset, test: Dataset, spec: GridSpec, encoder,
                  workers: int = 1) -> ResultTable:
    """Aggregate shift index per (shift mode, shifted fraction).

    Clean-image features are encoded once and shared across cells; only
    noise-perturbed samples are re-encoded.
    """
    start = time.perf_counter()
    fractions = [float(v) for v in spec.values]
    clean_feats = encoder.encode(train.images)
    test_feats = encoder.encode(test.images)
    part = dict(spec.partition)

    def shard_features(shard: ClientShard):
        feats = clean_feats[shard.indices]
        if shard.noise is not None and shard.noise.level > 0:
            noisy = np.stack(
                [
                    apply_noise_image(
                        train.images[shard.indices[pos]],
                        shard.noise,
                        int(shard.indices[pos]),
                    )
                    for pos in shard.noise.positions
                ]
            )
            feats = feats.copy()
            feats[shard.noise.positions] = encoder.encode(noisy)
        return feats

    def one_cell(mode, fraction, seed):
        pspec = PartitionSpec(
            split_mode=_MODE_IDS[mode],
            node_num=spec.node_num,
            seed=seed,
            noise_kind=part.get("noise_kind", "gaussian"),
            noise_level=part.get("noise_level", 25.0),
            labels_per_node=part.get("labels_per_node", 2),
            error_frac=part.get("error_frac", 0.2),
            group_count=part.get("group_count", 2),
        )
        shards = shift_fraction_shards(train, pspec, fraction)
        node_features = [
            (s.node_id, shard_features(s), s.effective_labels(train)) for s in shards
        ]
        report = nei_report_from_features(
            node_features, test_feats, test.labels, test.num_classes,
            encoder.fingerprint,
        )
        if report.aggregate is None:
            raise ValueError("no class present in both shards and test set")
        return report.aggregate

    values, raw = _cell_map(spec, list(NEI_MODES), fractions, one_cell, workers)
    meta = _metadata(spec, "index", start, train)
    meta["encoder_fingerprint"] = encoder.fingerprint
    return ResultTable(list(NEI_MODES), fractions, values, raw, meta)


def _metadata(spec: GridSpec, kind: str, start: float, train: Dataset) -> dict:
    return {
        "axis": spec.axis,
        "kind": kind,
        "dataset": train.name,
        "train_size": len(train),
        "node_num": spec.node_num,
        "repetitions": spec.repetitions,
        "seeds": [spec.seed_base + r for r in range(spec.repetitions)],
        "fed": dict(spec.fed),
        "partition": dict(spec.partition),
        "wall_time_s": round(time.perf_counter() - start, 3),
    }


def render(table: ResultTable, fmt: str = "csv") -> str:
    """Render a table as CSV (decimal fractions) or aligned text."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row"] + [str(c) for c in table.col_labels])
        for label, row in zip(table.row_labels, table.values):
            writer.writerow([label] + [repr(v) for v in row])
        return buf.getvalue()
    if fmt == "aligned_text":
        percent = table.metadata.get("kind", "accuracy") == "accuracy"

        def show(v):
            return f"{100 * v:.2f}%" if percent else f"{v:.4f}"

        headers = [""] + [str(c) for c in table.col_labels]
        body = [
            [label] + [show(v) for v in row]
            for label, row in zip(table.row_labels, table.values)
        ]
        widths = [
            max(len(line[i]) for line in [headers] + body)
            for i in range(len(headers))
        ]
        lines = []
        for line in [headers] + body:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown render format {fmt!r}")


def parse_csv(text: str) -> ResultTable:
    """Inverse of ``render(..., 'csv')`` (means only, no raw values)."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    col_labels = header[1:]
    row_labels = [r[0] for r in body]
    values = [[float(v) for v in r[1:]] for r in body]
    return ResultTable(row_labels, col_labels, values,
                       [[[] for _ in col_labels] for _ in row_labels], {})


def write_outputs(table: ResultTable, out_dir, axis: str, dataset: str) -> dict:
    """Write <axis>_<dataset>_<timestamp>.{csv,txt} plus a JSON sidecar."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{axis}_{dataset}_{stamp}"
    paths = {
        "csv": out_dir / f"{base}.csv",
        "txt": out_dir / f"{base}.txt",
        "json": out_dir / f"{base}.json",
    }
    paths["csv"].write_text(render(table, "csv"))
    paths["txt"].write_text(render(table, "aligned_text"))
    paths["json"].write_text(table.to_json() + "\n")
    return {k: str(v) for k, v in paths.items()}
