import json

import numpy as np
import pytest

from fednoniid.datasets import DataError
from fednoniid.partition import PartitionSpec, materialize
from fednoniid.shardio import (
    load_shards,
    read_shard_archive,
    write_shard_archive,
    write_shards,
)


@pytest.fixture
def spec():
    return PartitionSpec(split_mode=0, node_num=3, seed=5, noise_level=10.0)


@pytest.fixture
def shards(small_train, spec):
    return spec.build().partition(small_train)


class TestRoundTrip:
    def test_three_shards_identical_content(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path, spec)
        loaded, manifest = load_shards(tmp_path)
        assert len(loaded) == 3
        for shard, back in zip(shards, loaded):
            mat = materialize(small_train, shard)
            assert back.node_id == mat.node_id
            assert np.array_equal(back.labels, mat.labels)
            assert np.array_equal(back.images, mat.images)
        assert manifest["split_mode"] == 0
        assert manifest["partition"]["noise_level"] == 10.0

    def test_write_twice_byte_identical(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path / "a", spec)
        write_shards(shards, small_train, tmp_path / "b", spec)
        for name in ["manifest.json"] + [f"node_{i:04d}.fnid" for i in range(3)]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_shard_list(self, tmp_path, small_train, spec):
        write_shards([], small_train, tmp_path, spec)
        loaded, manifest = load_shards(tmp_path)
        assert loaded == []
        assert manifest["nodes"] == []

    def test_single_archive_roundtrip(self, tmp_path, small_train, shards):
        mat = materialize(small_train, shards[1])
        write_shard_archive(tmp_path / "one.fnid", mat)
        back = read_shard_archive(tmp_path / "one.fnid", 1)
        assert np.array_equal(back.images, mat.images)
        assert np.array_equal(back.labels, mat.labels)


class TestValidation:
    def test_manifest_count_mismatch(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path, spec)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["nodes"].append({"node_id": 9, "file": "node_0009.fnid", "count": 1})
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="manifest lists"):
            load_shards(tmp_path)

    def test_corrupt_magic(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path, spec)
        victim = tmp_path / "node_0000.fnid"
        victim.write_bytes(b"WAT!" + victim.read_bytes()[4:])
        with pytest.raises(DataError, match="magic"):
            load_shards(tmp_path)

    def test_truncated_archive(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path, spec)
        victim = tmp_path / "node_0000.fnid"
        victim.write_bytes(victim.read_bytes()[:-10])
        with pytest.raises(DataError, match="bytes"):
            load_shards(tmp_path)

    def test_count_mismatch_against_manifest(self, tmp_path, small_train, spec, shards):
        write_shards(shards, small_train, tmp_path, spec)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["nodes"][0]["count"] += 1
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="count"):
            load_shards(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_shards(tmp_path)

    def test_unsupported_version(self, tmp_path, small_train, shards):
        mat = materialize(small_train, shards[0])
        write_shard_archive(tmp_path / "v.fnid", mat)
        raw = bytearray((tmp_path / "v.fnid").read_bytes())
        raw[4] = 99
        (tmp_path / "v.fnid").write_bytes(bytes(raw))
        with pytest.raises(DataError, match="version"):
            read_shard_archive(tmp_path / "v.fnid", 0)
