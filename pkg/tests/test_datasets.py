import gzip
import hashlib
import struct

import numpy as np
import pytest

from fednoniid.datasets import (
    DataError,
    Dataset,
    fetch_dataset,
    load_cifar10,
    load_mnist,
    make_synthetic,
    sha256_file,
    write_cifar_batch,
    write_idx_images,
    write_idx_labels,
)


def idx_image_bytes(images):
    n, h, w = images.shape
    return struct.pack(">IIII", 2051, n, h, w) + images.tobytes()


def idx_label_bytes(labels):
    return struct.pack(">II", 2049, len(labels)) + bytes(labels)


@pytest.fixture
def idx_pair(tmp_path):
    # hand-built 2-sample fixture with distinct pixel bytes
    images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    labels = [7, 2]
    ip = tmp_path / "imgs"
    lp = tmp_path / "labs"
    ip.write_bytes(idx_image_bytes(images))
    lp.write_bytes(idx_label_bytes(labels))
    return ip, lp, images, labels


class TestMnistIdx:
    def test_roundtrip_exact_pixels(self, idx_pair):
        ip, lp, images, labels = idx_pair
        ds = load_mnist(ip, lp)
        assert len(ds) == 2
        assert ds.images.shape == (2, 3, 4, 1)
        assert np.array_equal(ds.images[..., 0], images)
        assert ds.labels.tolist() == labels

    def test_wrong_image_magic(self, idx_pair, tmp_path):
        ip, lp, images, _ = idx_pair
        bad = tmp_path / "bad"
        bad.write_bytes(struct.pack(">IIII", 2049, 2, 3, 4) + images.tobytes())
        with pytest.raises(DataError, match="wrong magic"):
            load_mnist(bad, lp)

    def test_label_file_with_image_magic(self, idx_pair, tmp_path):
        ip, _, _, labels = idx_pair
        bad = tmp_path / "badlab"
        bad.write_bytes(struct.pack(">II", 2051, len(labels)) + bytes(labels))
        with pytest.raises(DataError, match="wrong magic"):
            load_mnist(ip, bad)

    def test_truncated_payload(self, idx_pair, tmp_path):
        ip, lp, images, _ = idx_pair
        cut = tmp_path / "cut"
        cut.write_bytes(idx_image_bytes(images)[:-5])
        with pytest.raises(DataError, match="truncated"):
            load_mnist(cut, lp)

    def test_trailing_bytes_rejected(self, idx_pair, tmp_path):
        ip, lp, images, _ = idx_pair
        fat = tmp_path / "fat"
        fat.write_bytes(idx_image_bytes(images) + b"x")
        with pytest.raises(DataError, match="trailing"):
            load_mnist(fat, lp)

    def test_count_mismatch(self, idx_pair, tmp_path):
        ip, _, _, _ = idx_pair
        lab3 = tmp_path / "lab3"
        lab3.write_bytes(idx_label_bytes([1, 2, 3]))
        with pytest.raises(DataError, match="count"):
            load_mnist(ip, lab3)

    def test_writer_reader_roundtrip(self, tmp_path):
        ds = make_synthetic(20, seed=3)
        write_idx_images(tmp_path / "i", ds.images)
        write_idx_labels(tmp_path / "l", ds.labels)
        back = load_mnist(tmp_path / "i", tmp_path / "l")
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)

    def test_loading_twice_is_equal(self, idx_pair):
        ip, lp, _, _ = idx_pair
        a, b = load_mnist(ip, lp), load_mnist(ip, lp)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)


class TestCifarBatches:
    def test_single_record_fixture(self, tmp_path):
        pixels = np.arange(3072, dtype=np.uint8)
        record = bytes([3]) + pixels.tobytes()
        p = tmp_path / "batch.bin"
        p.write_bytes(record)
        ds = load_cifar10([p])
        assert len(ds) == 1
        assert ds.labels.tolist() == [3]
        assert ds.num_classes == 10
        # colour planes are stored R, G, B
        assert np.array_equal(ds.images[0, :, :, 0].ravel(), pixels[:1024].reshape(32, 32).ravel())
        assert np.array_equal(ds.images[0, :, :, 2].ravel(), pixels[2048:].reshape(32, 32).ravel())

    def test_bad_length(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(bytes(3074))
        with pytest.raises(DataError, match="3073"):
            load_cifar10([p])

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "lab.bin"
        p.write_bytes(bytes([10]) + bytes(3072))
        with pytest.raises(DataError, match=">= 10"):
            load_cifar10([p])

    def test_batches_concatenate_in_order(self, tmp_path):
        rng = np.random.default_rng(5)
        paths = []
        counts = [4, 3, 5, 2, 6]
        all_labels = []
        for i, n in enumerate(counts):
            images = rng.integers(0, 256, (n, 32, 32, 3), dtype=np.uint8)
            labels = rng.integers(0, 10, n)
            write_cifar_batch(tmp_path / f"b{i}.bin", images, labels)
            paths.append(tmp_path / f"b{i}.bin")
            all_labels.extend(labels.tolist())
        ds = load_cifar10(paths)
        assert len(ds) == sum(counts)
        assert ds.labels.tolist() == all_labels

    def test_writer_reader_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        images = rng.integers(0, 256, (7, 32, 32, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, 7)
        write_cifar_batch(tmp_path / "rt.bin", images, labels)
        ds = load_cifar10([tmp_path / "rt.bin"])
        assert np.array_equal(ds.images, images)
        assert np.array_equal(ds.labels, labels)


class TestFetch:
    def test_official_train_image_size(self, tmp_path):
        # layout oracle: 16-byte header + 60000 * 28 * 28 pixel bytes
        expected_size = 16 + 60000 * 28 * 28
        assert expected_size == 47_040_016
        src = tmp_path / "src-images"
        images = np.zeros((60000, 28, 28), dtype=np.uint8)
        src.write_bytes(idx_image_bytes(images))
        dest = fetch_dataset(src.as_uri(), tmp_path / "fetched")
        assert dest.stat().st_size == expected_size

    def test_gz_decompression_and_digest(self, tmp_path):
        payload = idx_label_bytes([1, 2, 3])
        gz = tmp_path / "labels.gz"
        gz.write_bytes(gzip.compress(payload))
        digest = hashlib.sha256(payload).hexdigest()
        dest = fetch_dataset(gz.as_uri(), tmp_path / "labels", digest)
        assert dest.read_bytes() == payload

    def test_refetch_is_noop(self, tmp_path):
        payload = b"hello dataset"
        src = tmp_path / "src"
        src.write_bytes(payload)
        digest = hashlib.sha256(payload).hexdigest()
        dest = fetch_dataset(src.as_uri(), tmp_path / "d", digest)
        src.unlink()  # second call must not touch the source
        again = fetch_dataset(src.as_uri(), tmp_path / "d", digest)
        assert again == dest and dest.read_bytes() == payload

    def test_digest_mismatch_leaves_nothing(self, tmp_path):
        src = tmp_path / "src"
        src.write_bytes(b"payload")
        with pytest.raises(DataError, match="digest mismatch"):
            fetch_dataset(src.as_uri(), tmp_path / "out", "0" * 64)
        assert not (tmp_path / "out").exists()
        assert not (tmp_path / "out.part").exists()

    def test_sha256_file(self, tmp_path):
        p = tmp_path / "f"
        p.write_bytes(b"abc")
        assert sha256_file(p) == hashlib.sha256(b"abc").hexdigest()


class TestSyntheticCorpus:
    def test_deterministic(self):
        a = make_synthetic(50, seed=4)
        b = make_synthetic(50, seed=4)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_seed_changes_samples(self):
        a = make_synthetic(50, seed=4)
        c = make_synthetic(50, seed=5)
        assert not np.array_equal(a.images, c.images)

    def test_shape_and_balance(self):
        ds = make_synthetic(40, seed=1, num_classes=4)
        assert ds.image_shape == (28, 28, 1)
        assert np.bincount(ds.labels, minlength=4).tolist() == [10, 10, 10, 10]


class TestDatasetInvariants:
    def test_count_mismatch(self):
        with pytest.raises(DataError, match="count"):
            Dataset("SYNTHETIC", np.zeros((3, 2, 2, 1), np.uint8), np.zeros(2, np.int64), 10)

    def test_label_out_of_range(self):
        with pytest.raises(DataError, match="range"):
            Dataset("SYNTHETIC", np.zeros((2, 2, 2, 1), np.uint8), np.array([0, 10]), 10)

    def test_named_shape_enforced(self):
        with pytest.raises(DataError, match="shape"):
            Dataset("MNIST", np.zeros((2, 2, 2, 1), np.uint8), np.zeros(2, np.int64), 10)
