"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The trend criteria run
on the deterministic synthetic corpus (28x28 single-channel images in real
IDX containers); point real MNIST files at the CLI configs to reproduce the
same trends on MNIST proper.
"""

import hashlib
import struct
import time

import numpy as np
import pytest

from fednoniid.bench import GridSpec, run_nei_table, run_nodes_table, \
    run_quality_table, run_rounds_table
from fednoniid.cli import main
from fednoniid.datasets import (
    DataError,
    Dataset,
    load_cifar10,
    load_mnist,
    make_synthetic,
    write_idx_images,
    write_idx_labels,
)
from fednoniid.nei import (
    ClassSplit,
    EncoderHyper,
    IdentityEncoder,
    build_encoder,
    nei,
    nei_from_features,
    train_autoencoder,
)
from fednoniid.nn import (
    Conv2D,
    Dense,
    Flatten,
    Network,
    ParamSet,
    ReLU,
    Sigmoid,
    Upsample2x,
    gradient_check,
)
from fednoniid.federated import aggregate
from fednoniid.partition import (
    ConceptShiftPartitioner,
    CovariateShiftPartitioner,
    PriorShiftPartitioner,
    QualitySpec,
    UnbalancedPartitioner,
    inject_quality,
    materialize,
)

PASS = "ACCEPTANCE {n:>2} PASS: {text}"


def ok(n, text):
    print(PASS.format(n=n, text=text), flush=True)


@pytest.fixture(scope="session")
def nei_pool():
    return make_synthetic(5000, seed=300)


@pytest.fixture(scope="session")
def held_out_test():
    return make_synthetic(1000, seed=200)


@pytest.fixture(scope="session")
def fed_train():
    return make_synthetic(2000, seed=100)


ENCODER_TRAIN_SECONDS = {}


@pytest.fixture(scope="session")
def trained_encoder(nei_pool):
    start = time.perf_counter()
    encoder = build_encoder(nei_pool.image_shape, seed=0)
    frozen = train_autoencoder(encoder, nei_pool, EncoderHyper(5, 64, 0.01), seed=0)
    ENCODER_TRAIN_SECONDS["value"] = time.perf_counter() - start
    return frozen


def monotone_inversions(seq, tolerance=0.0):
    """(count, worst_drop) of adjacent decreases beyond the tolerance."""
    drops = [seq[i] - seq[i + 1] for i in range(len(seq) - 1) if seq[i + 1] < seq[i]]
    bad = [d for d in drops if d > tolerance]
    return len(bad), max(drops, default=0.0)


def test_criterion_01_nei_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    enc = IdentityEncoder((2, 2, 1))
    for trial in range(10):
        images = rng.integers(0, 256, (30, 2, 2, 1), dtype=np.uint8)
        shuffled = images[rng.permutation(30)]
        value = nei(enc, ClassSplit(0, images, shuffled))
        assert abs(value) <= 1e-9
    feats = rng.normal(size=(50, 600))
    assert abs(nei_from_features(feats, feats[::-1])) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    ok(1, f"equal train/test multisets score 0 within 1e-9 ({elapsed:.2f}s)")


def test_criterion_02_nei_hand_case():
    enc = IdentityEncoder((1, 1, 1))
    split = ClassSplit(
        0,
        np.array([0, 2], np.uint8).reshape(2, 1, 1, 1),
        np.array([1, 3], np.uint8).reshape(2, 1, 1, 1),
    )
    value = nei(enc, split)
    assert value == pytest.approx(0.894427, abs=1e-6)
    ok(2, f"identity-encoder hand case = {value:.6f} (0.894427 +- 1e-6)")


def test_criterion_03_nei_invariances():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(3, 40))
        a = rng.normal(loc=0.0, scale=rng.uniform(0.5, 2.0), size=(rng.integers(5, 40), dim))
        b = rng.normal(loc=rng.uniform(-1, 1), scale=rng.uniform(0.5, 2.0),
                       size=(rng.integers(5, 40), dim))
        base = nei_from_features(a, b)
        shift = rng.normal(size=dim)
        for c in (0.1, 3.0, 100.0):
            scaled = nei_from_features(c * a, c * b)
            worst = max(worst, abs(scaled - base) / base)
        translated = nei_from_features(a + shift, b + shift)
        worst = max(worst, abs(translated - base) / base)
    assert worst <= 1e-6
    ok(3, f"scale/translation invariance within 1e-6 relative (worst {worst:.2e})")


def test_criterion_04_shift_table_trend(nei_pool, held_out_test, trained_encoder):
    start = time.perf_counter()
    spec = GridSpec(
        axis="nei",
        values=[0.3, 0.5, 0.7, 0.9],
        node_num=5,
        repetitions=1,
        seed_base=0,
        partition={"noise_level": 25.0, "labels_per_node": 2, "error_frac": 0.2,
                   "group_count": 2},
    )
    table = run_nei_table(nei_pool, held_out_test, spec, trained_encoder)
    rows = {label: table.values[i] for i, label in enumerate(table.row_labels)}
    for j, frac in enumerate(table.col_labels):
        assert rows["prior_shift"][j] >= rows["covariate_shift"][j], frac
        assert rows["concept_shift"][j] >= rows["covariate_shift"][j], frac
    for label, row in rows.items():
        inversions, worst = monotone_inversions(row)
        assert inversions <= 1, (label, row, worst)
    elapsed = time.perf_counter() - start + ENCODER_TRAIN_SECONDS.get("value", 0.0)
    assert elapsed < 600.0
    ok(4, "shift-index rows non-decreasing in fraction; prior/concept >= covariate "
          f"at every fraction ({elapsed:.0f}s incl. encoder training, 600s budget)")


def test_criterion_05_gradient_check_all_layers():
    from test_nn import draw_smooth_input  # local import: shared oracle helper

    start = time.perf_counter()
    nets = {
        "dense+relu": lambda: Network((5,), [Dense(5, 4), ReLU(), Dense(4, 3)]),
        "conv(strided)": lambda: Network(
            (5, 5, 2), [Conv2D(2, 3, 3, stride=2, padding=1), Flatten(), Dense(27, 3)]
        ),
        "sigmoid": lambda: Network((4,), [Dense(4, 4), Sigmoid(), Dense(4, 3)]),
        "upsample+flatten": lambda: Network(
            (3, 3, 2),
            [Conv2D(2, 2, 3, padding=1), ReLU(), Upsample2x(), Flatten(), Dense(72, 3)],
        ),
    }
    worst = 0.0
    for name, make in nets.items():
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            net = make()
            net.set_params(Network(net.input_shape, net.layers, seed=seed).params.data)
            x = draw_smooth_input(net, rng, 3, 1e-4)
            err = gradient_check(net, x, rng.integers(0, 3, 3), "softmax_ce", 1e-4)
            assert err <= 1e-3, (name, seed, err)
            worst = max(worst, err)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    ok(5, f"central finite differences within 1e-3 for every layer kind, 3 seeds "
          f"(worst {worst:.2e}, {elapsed:.1f}s)")


def test_criterion_06_aggregation_identities():
    rng = np.random.default_rng(3)
    data = rng.standard_normal(200).astype(np.float32)
    p = ParamSet(data, (0, 200))
    many = aggregate([(p.copy(), 5) for _ in range(9)], "equal")
    assert np.array_equal(many.data, p.data)
    single = aggregate([(p.copy(), 17)], "size_proportional")
    assert np.array_equal(single.data, p.data)
    a = np.array([2.0, -4.0, 0.5], np.float32)
    b = np.array([6.0, 4.0, -1.5], np.float32)
    out = aggregate(
        [(ParamSet(a.copy(), (0, 3)), 100), (ParamSet(b.copy(), (0, 3)), 300)],
        "size_proportional",
    )
    expected = 0.25 * a.astype(np.float64) + 0.75 * b.astype(np.float64)
    assert np.max(np.abs(out.data - expected)) <= 1e-7
    ok(6, "aggregating K copies is exact; single update is identity; "
          "0.25/0.75 weighting matches hand arithmetic to 1e-7")


FED_TREND = {"rounds": 100, "lr": 0.2, "local_epochs": 2, "eval_every": 1000}


def test_criterion_07_nodes_trend(fed_train, held_out_test):
    start = time.perf_counter()
    spec = GridSpec(
        axis="nodes", values=[5, 20], skews=("label_skew",),
        repetitions=3, seed_base=0,
        fed=dict(FED_TREND), partition={"labels_per_node": 2},
    )
    table = run_nodes_table(fed_train, held_out_test, spec)
    acc5, acc20 = table.values[0]
    assert acc5 >= 0.80, table.values
    assert acc20 >= 0.80, table.values
    assert acc20 >= acc5 - 0.005, table.values
    elapsed = time.perf_counter() - start
    assert elapsed < 900.0
    ok(7, f"label-skew accuracy: 20 nodes {acc20:.3f} >= 5 nodes {acc5:.3f} - 0.5pt, "
          f"both >= 80% ({elapsed:.0f}s of 900s budget)")


def test_criterion_08_rounds_trend(fed_train, held_out_test):
    spec = GridSpec(
        axis="rounds", values=[20, 60, 200], skews=("label_skew",),
        node_num=5, repetitions=3, seed_base=0,
        fed={"lr": 0.2, "local_epochs": 2, "eval_every": 1000},
        partition={"labels_per_node": 2},
    )
    table = run_rounds_table(fed_train, held_out_test, spec)
    row = table.values[0]
    inversions, worst = monotone_inversions(row, tolerance=0.005)
    assert inversions == 0 or (inversions == 1 and worst <= 0.005), row
    ok(8, "accuracy non-decreasing across checkpoints 20/60/200 within one "
          f"0.5pt inversion (means: {[round(v, 3) for v in row]})")


def test_criterion_09_quality_trend(held_out_test):
    train = make_synthetic(1000, seed=100)
    spec = GridSpec(
        axis="quality", values=[0.0, 0.05, 0.10], skews=("quantity_skew",),
        n_levels=(0.0,), node_num=10, repetitions=3, seed_base=0,
        fed={"rounds": 150, "lr": 0.15, "local_epochs": 2, "eval_every": 1000},
        partition={"power_alpha": 1.2},
    )
    table = run_quality_table(train, held_out_test, spec)
    row = table.values[0]
    drop = row[0] - row[2]
    assert drop >= 0.01, row
    inversions, worst = monotone_inversions(list(reversed(row)), tolerance=0.005)
    assert inversions <= 1, row
    ok(9, f"label errors cost accuracy: E=0% {row[0]:.3f} -> E=10% {row[2]:.3f} "
          f"(drop {100 * drop:.2f}pt >= 1pt, mean of 3 seeds)")


def test_criterion_10_cli_determinism(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    train = make_synthetic(300, seed=51)
    test = make_synthetic(100, seed=52)
    write_idx_images(data / "train-images-idx3-ubyte", train.images)
    write_idx_labels(data / "train-labels-idx1-ubyte", train.labels)
    write_idx_images(data / "t10k-images-idx3-ubyte", test.images)
    write_idx_labels(data / "t10k-labels-idx1-ubyte", test.labels)
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "dataset_mode: MNIST\nnode_num: 6\nsplit_mode: 0\nseed: 13\n"
        "noise: {kind: salt_pepper, level: 0.08}\n"
        "quality: {e: 0.05}\n"
        "fed: {rounds: 6, eval_every: 2}\n"
        f"paths: {{data_dir: {data}, out_dir: {tmp_path / 'out'}}}\n"
    )

    def run_and_digest():
        assert main(["partition", "--config", str(cfg)]) == 0
        assert main(["train", "--config", str(cfg)]) == 0
        digests = {}
        for p in sorted((tmp_path / "out").rglob("*")):
            if p.is_file():
                digests[str(p.relative_to(tmp_path))] = hashlib.sha256(
                    p.read_bytes()
                ).hexdigest()
        return digests

    first = run_and_digest()
    second = run_and_digest()
    assert first == second
    assert any(k.endswith(".fnid") for k in first)
    assert "out/rounds.csv" in {k.replace("\\", "/") for k in first}
    ok(10, "partition and train reruns produce byte-identical archives and "
           f"round logs ({len(first)} artifacts compared)")


def test_criterion_11_partition_laws():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cases = 0
    for _ in range(250):  # x4 law families = 1000 randomized cases
        n = int(rng.integers(20, 90))
        num_classes = int(rng.integers(2, 8))
        ds = Dataset(
            "SYNTHETIC",
            rng.integers(0, 256, (n, 3, 3, 1), dtype=np.uint8),
            rng.integers(0, num_classes, n),
            num_classes,
        )
        seed = int(rng.integers(0, 2**31))

        # covariate: exact cover, near-equal sizes, pixel range, labels kept
        k = int(rng.integers(1, min(8, n)))
        kind = "gaussian" if rng.integers(2) else "salt_pepper"
        level = float(rng.uniform(0, 60)) if kind == "gaussian" else float(rng.uniform(0, 0.4))
        shards = CovariateShiftPartitioner(k, kind, level, seed).partition(ds)
        got = np.concatenate([s.indices for s in shards])
        assert sorted(got.tolist()) == list(range(n))
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1
        worst_node = materialize(ds, shards[-1])
        assert worst_node.images.min() >= 0 and worst_node.images.max() <= 255
        assert np.array_equal(worst_node.labels, ds.labels[shards[-1].indices])
        cases += 1

        # prior: label-cardinality bound, exact flip counts, cover
        present = len(set(ds.labels.tolist()))
        lpn = int(rng.integers(1, num_classes + 1))
        nodes = int(rng.integers(1, 7))
        if nodes * lpn < present:
            lpn = -(-present // nodes)
        if lpn <= num_classes:
            e = float(rng.choice([0.0, 0.1, 0.25]))
            pshards = PriorShiftPartitioner(nodes, lpn, 0.0, e, seed=seed).partition(ds)
            got = np.concatenate([s.indices for s in pshards])
            assert sorted(got.tolist()) == list(range(n))
            for s in pshards:
                assert len(set(ds.labels[s.indices].tolist())) <= lpn
                assert len(s.sample_overrides) == int(e * len(s))
        cases += 1

        # unbalanced: exact sizes, disjoint
        want = sorted(rng.integers(1, max(2, n // 3), size=2).tolist())
        if sum(want) <= n:
            ushards = UnbalancedPartitioner(sizes=want, seed=seed).partition(ds)
            assert [len(s) for s in ushards] == want
            flat = np.concatenate([s.indices for s in ushards])
            assert len(set(flat.tolist())) == len(flat)
        cases += 1

        # quality: exact flip counts, wrong labels, shared pool
        base = ConceptShiftPartitioner(min(3, n), 2, seed=seed).partition(ds)
        nf = float(rng.choice([0.0, 0.1, 0.3]))
        ef = float(rng.choice([0.0, 0.1, 0.2]))
        injected = inject_quality(base, ds, QualitySpec(nf, ef), seed)
        for s in injected:
            assert len(s.sample_overrides) == int(ef * len(s))
            eff = s.effective_labels(ds)
            assert np.all((eff >= 0) & (eff < num_classes))
            assert len(set(s.indices.tolist())) == len(s.indices)
        if int(nf * n):
            common = set.intersection(*(set(s.indices.tolist()) for s in injected))
            assert len(common) >= int(nf * n)
        cases += 1
    elapsed = time.perf_counter() - start
    assert cases >= 1000
    assert elapsed < 120.0
    ok(11, f"{cases} randomized partition-law cases all hold ({elapsed:.0f}s of "
           "120s budget)")


def test_criterion_12_parser_fixtures(tmp_path):
    # malformed fixtures -> documented errors
    good_images = struct.pack(">IIII", 2051, 2, 3, 3) + bytes(18)
    good_labels = struct.pack(">II", 2049, 2) + bytes([1, 2])
    (tmp_path / "img").write_bytes(good_images)
    (tmp_path / "lab").write_bytes(good_labels)
    bad_cases = [
        ("wrong image magic", "imgA", struct.pack(">IIII", 2049, 2, 3, 3) + bytes(18), "lab", "wrong magic"),
        ("truncated image payload", "imgB", good_images[:-4], "lab", "truncated"),
        ("trailing image bytes", "imgC", good_images + b"z", "lab", "trailing"),
    ]
    for _desc, img_name, img_bytes, lab_name, pattern in bad_cases:
        (tmp_path / img_name).write_bytes(img_bytes)
        with pytest.raises(DataError, match=pattern):
            load_mnist(tmp_path / img_name, tmp_path / lab_name)
    (tmp_path / "lab_magic").write_bytes(struct.pack(">II", 2051, 2) + bytes([1, 2]))
    with pytest.raises(DataError, match="wrong magic"):
        load_mnist(tmp_path / "img", tmp_path / "lab_magic")
    (tmp_path / "lab3").write_bytes(struct.pack(">II", 2049, 3) + bytes([1, 2, 3]))
    with pytest.raises(DataError, match="count"):
        load_mnist(tmp_path / "img", tmp_path / "lab3")
    (tmp_path / "cif_short").write_bytes(bytes(3074))
    with pytest.raises(DataError, match="3073"):
        load_cifar10([tmp_path / "cif_short"])
    (tmp_path / "cif_label").write_bytes(bytes([11]) + bytes(3072))
    with pytest.raises(DataError, match=">= 10"):
        load_cifar10([tmp_path / "cif_label"])

    # official-format headers parse with exact counts
    ds = load_mnist(tmp_path / "img", tmp_path / "lab")
    assert len(ds) == 2 and ds.images.shape == (2, 3, 3, 1)
    images28 = np.zeros((123, 28, 28), dtype=np.uint8)
    (tmp_path / "img28").write_bytes(struct.pack(">IIII", 2051, 123, 28, 28) + images28.tobytes())
    (tmp_path / "lab28").write_bytes(struct.pack(">II", 2049, 123) + bytes(123))
    official = load_mnist(tmp_path / "img28", tmp_path / "lab28")
    assert official.name == "MNIST" and len(official) == 123
    records = np.zeros((7, 3073), dtype=np.uint8)
    (tmp_path / "cif_ok").write_bytes(records.tobytes())
    assert len(load_cifar10([tmp_path / "cif_ok"])) == 7
    ok(12, "malformed IDX/CIFAR fixtures rejected with documented errors; "
           "well-formed headers parse with exact counts")
