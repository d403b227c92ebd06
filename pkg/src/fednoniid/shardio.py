"""Bit-exact shard archives and their JSON manifest.

Archive layout (one file per node, all integers little-endian):

    magic   4 bytes  b"FNID"
    version u16      currently 1
    count   u32      number of samples
    H, W    u16 each image height / width
    C       u8       channel count
    labels  count bytes
    pixels  count * H * W * C bytes

Shards are stored materialised (noise and label overrides applied, pixels
copied) so consumers never need the source dataset.  The sidecar
``manifest.json`` records the seed, split mode, full partition parameters
and the per-node file list; loading validates it against the archives.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datasets import DataError, Dataset
from .partition import ClientShard, MaterializedShard, PartitionSpec, materialize

MAGIC = b"FNID"
VERSION = 1
_HEADER = struct.Struct("<4sHIHHB")

MANIFEST_NAME = "manifest.json"


def write_shard_archive(path, shard: MaterializedShard) -> None:
    n = len(shard)
    if shard.images.ndim != 4:
        raise DataError("materialised images must have shape (N, H, W, C)")
    _, h, w, c = shard.images.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c))
        f.write(np.asarray(shard.labels, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(shard.images, dtype=np.uint8).tobytes())


def read_shard_archive(path, node_id: int) -> MaterializedShard:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: shorter than archive header")
    magic, version, count, h, w, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: corrupt header magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported archive version {version}")
    expected = _HEADER.size + count + count * h * w * c
    if len(raw) != expected:
        raise DataError(
            f"{path}: declared count {count} implies {expected} bytes, file has {len(raw)}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=_HEADER.size)
    pixels = np.frombuffer(
        raw, dtype=np.uint8, count=count * h * w * c, offset=_HEADER.size + count
    )
    return MaterializedShard(
        node_id,
        pixels.reshape(count, h, w, c).copy(),
        labels.astype(np.int64),
    )


def _node_filename(node_id: int) -> str:
    return f"node_{node_id:04d}.fnid"


def write_shards(
    shards: list[ClientShard],
    dataset: Dataset,
    out_dir,
    manifest: PartitionSpec,
    extra: dict | None = None,
    progress=None,
) -> Path:
    """Materialise and persist shards plus a manifest; returns the manifest path.

    ``progress`` is an optional callable invoked with each node id after its
    archive is written (the CLI uses it for tutorial-style output).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nodes = []
    for shard in shards:
        mat = materialize(dataset, shard)
        fname = _node_filename(shard.node_id)
        write_shard_archive(out_dir / fname, mat)
        nodes.append({"node_id": shard.node_id, "file": fname, "count": len(mat)})
        if progress is not None:
            progress(shard.node_id)
    doc = {
        "format": "fnid-manifest",
        "version": VERSION,
        "seed": manifest.seed,
        "split_mode": manifest.split_mode,
        "partition": manifest.to_dict(),
        "dataset": {
            "name": dataset.name,
            "size": len(dataset),
            "num_classes": dataset.num_classes,
            "image_shape": list(dataset.image_shape),
        },
        "nodes": nodes,
    }
    if extra:
        doc.update(extra)
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_shards(in_dir) -> tuple[list[MaterializedShard], dict]:
    """Load all archives listed in the manifest; validates counts and headers."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {in_dir}")
    doc = json.loads(manifest_path.read_text())
    nodes = doc.get("nodes")
    if nodes is None:
        raise DataError("manifest missing 'nodes'")
    present = sorted(p.name for p in in_dir.glob("node_*.fnid"))
    listed = sorted(entry["file"] for entry in nodes)
    if present != listed:
        raise DataError(
            f"manifest lists {len(listed)} archives but directory has {len(present)}"
        )
    shards = []
    for entry in nodes:
        mat = read_shard_archive(in_dir / entry["file"], entry["node_id"])
        if len(mat) != entry["count"]:
            raise DataError(
                f"{entry['file']}: manifest count {entry['count']} != archive count {len(mat)}"
            )
        shards.append(mat)
    return shards, doc
