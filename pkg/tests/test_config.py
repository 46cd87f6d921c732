from pathlib import Path

import pytest

from dualproto.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    normalize_method,
)


FULL_CONFIG = """
[experiment]
method = adapter-ca
k = 7
seed = 42
out = /tmp/somewhere

[train]
epochs = 12
batch_size = 16
lr_max = 0.02
center_weight = 0.001

[backbone]
hidden_dims = 48, 48
feature_dim = 24
bottleneck_dim = 4
pretrain_epochs = 3

[synthetic]
num_tasks = 4
classes_per_task = 2
train_per_class = 20
test_per_class = 5
pretrain_classes = 3
"""


class TestNormalizeMethod:
    @pytest.mark.parametrize(
        "alias, canonical",
        [
            ("DPTA", "dpta"),
            ("SimpleCIL-raw-NCM", "simplecil"),
            ("simplecil", "simplecil"),
            ("Adapter-CA", "adapter-ca"),
            ("Adapter-EA", "adapter-ea"),
            ("Finetune-sequential", "finetune"),
            ("TopK-oracle", "topk-oracle"),
        ],
    )
    def test_aliases(self, alias, canonical):
        assert normalize_method(alias) == canonical

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            normalize_method("magic")


class TestLoadConfig:
    def test_full_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(FULL_CONFIG)
        cfg = load_config(path)
        assert cfg.method == "adapter-ca"
        assert cfg.top_k == 7
        assert cfg.seed == 42
        assert cfg.out_dir == Path("/tmp/somewhere")
        assert cfg.train.epochs == 12
        assert cfg.train.center_weight == 0.001
        assert cfg.train.seed == 42  # inherits the experiment seed
        assert cfg.backbone.hidden_dims == (48, 48)
        assert cfg.synthetic.num_tasks == 4

    def test_defaults_when_sections_missing(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[experiment]\nmethod = dpta\n")
        cfg = load_config(path)
        assert cfg.top_k == 5
        assert cfg.seed == 1993
        assert cfg.train.epochs == 30
        assert cfg.synthetic is not None and cfg.synthetic.num_tasks == 8

    def test_shipped_default_config_parses(self):
        cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "default.cfg")
        assert cfg.method == "dpta"
        assert cfg.top_k == 5
        assert cfg.seed == 1993
        assert cfg.train.center_weight == pytest.approx(1e-4)
        assert cfg.synthetic.num_tasks == 8
        assert cfg.synthetic.classes_per_task == 5

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[train]\nlearning_rate = 3\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[optimizer]\nname = adam\n")
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(path)

    def test_unparseable_value(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[train]\nepochs = many\n")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_dataset_section(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "[dataset]\npath = data/features.csv\ninc_n = 10\nbase_m = 0\n"
            "pretrain_fraction = 0.2\n"
        )
        cfg = load_config(path)
        assert cfg.synthetic is None
        assert cfg.dataset.path == Path("data/features.csv")
        assert cfg.dataset.inc_n == 10

    def test_dataset_requires_path_and_inc(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("[dataset]\nbase_m = 4\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestExperimentConfig:
    def test_requires_exactly_one_data_source(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(synthetic=None, dataset=None)

    def test_k_must_be_positive(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(top_k=0)

    def test_replaced_overrides_and_copies(self):
        cfg = ExperimentConfig()
        other = cfg.replaced(method="simplecil", top_k=9, seed=7, out_dir="/tmp/x")
        assert other.method == "simplecil"
        assert other.top_k == 9
        assert other.seed == 7
        assert other.train.seed == 7
        assert cfg.method == "dpta" and cfg.top_k == 5  # original untouched
        other.train.epochs = 1
        assert cfg.train.epochs == 30

    def test_echo_contains_every_section_and_defaults(self):
        cfg = ExperimentConfig()
        echo = cfg.echo()
        assert echo["experiment"]["method"] == "dpta"
        assert echo["experiment"]["seed"] == 1993
        assert echo["train"]["center_weight"] == pytest.approx(1e-4)
        assert echo["train"]["epochs"] == 30
        assert echo["backbone"]["hidden_dims"] == [64, 64]
        assert echo["synthetic"]["num_tasks"] == 8
