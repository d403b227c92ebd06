import pytest

from fednoniid.config import ConfigError, parse_config, parse_config_text

TUTORIAL = """
# dataset
dataset_mode: CIFAR10

# node num Number of node(default n=20) one node corresponding to one dataset
node_num: 10

# partition methods, dataset partition, 0-covariate shift, 1-prior propability shift, 2-concept shift
split_mode: 0
"""


class TestParsing:
    def test_tutorial_three_key_listing(self):
        cfg = parse_config_text(TUTORIAL)
        assert cfg.dataset_mode == "CIFAR10"
        assert cfg.node_num == 10
        assert cfg.split_mode == 0
        # defaults filled everywhere else
        assert cfg["fed"]["rounds"] == 100
        assert cfg["nei"]["encoder"]["epochs"] == 5
        assert cfg.model_arch() == "cifar_cnn"

    def test_json_equivalent_accepted(self):
        cfg = parse_config_text(
            '{"dataset_mode": "MNIST", "node_num": 3, "split_mode": 2}'
        )
        assert cfg.split_mode == 2
        assert cfg.model_arch() == "mnist_mlp"

    def test_file_parsing(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text(TUTORIAL)
        assert parse_config(p).node_num == 10

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config("/nonexistent/cfg.yaml")


class TestValidation:
    def test_invalid_split_mode_names_valid_set(self):
        with pytest.raises(ConfigError, match=r"one of \[0, 1, 2\]"):
            parse_config_text("dataset_mode: MNIST\nnode_num: 5\nsplit_mode: 7")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text(
                "dataset_mode: MNIST\nnode_num: 5\nsplit_mode: 0\nsplit_mode: 1"
            )

    def test_unknown_key_lists_valid(self):
        with pytest.raises(ConfigError, match="unknown key 'bogus'.*valid keys"):
            parse_config_text(
                "dataset_mode: MNIST\nnode_num: 5\nsplit_mode: 0\nbogus: 1"
            )

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="fed.bogus"):
            parse_config_text(
                "dataset_mode: MNIST\nnode_num: 5\nsplit_mode: 0\nfed: {bogus: 1}"
            )

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="missing required.*split_mode"):
            parse_config_text("dataset_mode: MNIST\nnode_num: 5")

    def test_type_error_carries_line(self):
        with pytest.raises(ConfigError, match=r"node_num must be int.*line 2"):
            parse_config_text("dataset_mode: MNIST\nnode_num: five\nsplit_mode: 0")

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError, match="node_num must be int"):
            parse_config_text("dataset_mode: MNIST\nnode_num: true\nsplit_mode: 0")

    def test_dataset_mode_restricted(self):
        with pytest.raises(ConfigError, match="dataset_mode"):
            parse_config_text("dataset_mode: IMAGENET\nnode_num: 5\nsplit_mode: 0")


class TestResolution:
    def test_resolved_is_self_describing(self):
        cfg = parse_config_text(TUTORIAL)
        resolved = cfg.resolved()
        assert resolved["seed"] == 0
        assert resolved["quality"] == {"n": 0.0, "e": 0.0}
        assert resolved["paths"]["out_dir"] == "out"

    def test_partition_spec_mapping(self):
        cfg = parse_config_text(
            "dataset_mode: MNIST\nnode_num: 4\nsplit_mode: 1\n"
            "prior: {labels_per_node: 3, overlap: 0.1, error: 0.05}\nseed: 9"
        )
        spec = cfg.partition_spec()
        assert spec.split_mode == 1
        assert spec.labels_per_node == 3
        assert spec.overlap_frac == 0.1
        assert spec.error_frac == 0.05
        assert spec.seed == 9

    def test_fed_config_mapping(self):
        cfg = parse_config_text(
            "dataset_mode: MNIST\nnode_num: 4\nsplit_mode: 0\n"
            "fed: {rounds: 7, lr: 0.2, batch: 16, weighting: equal}"
        )
        fed = cfg.fed_config()
        assert fed.rounds == 7
        assert fed.lr == 0.2
        assert fed.batch_size == 16
        assert fed.weighting == "equal"
        assert fed.node_num == 4

    def test_explicit_sizes_selects_unbalanced(self):
        cfg = parse_config_text(
            "dataset_mode: MNIST\nnode_num: 2\nsplit_mode: 0\nsizes: [30, 70]"
        )
        spec = cfg.partition_spec()
        assert spec.size_profile == "explicit"
        assert spec.sizes == [30, 70]

    def test_data_dir_env_default(self, monkeypatch, tmp_path):
        cfg = parse_config_text(TUTORIAL)
        monkeypatch.setenv("FEDNONIID_DATA_DIR", str(tmp_path))
        assert cfg.data_dir() == tmp_path
        monkeypatch.delenv("FEDNONIID_DATA_DIR")
        assert str(cfg.data_dir()) == "data"
