import numpy as np
import pytest

from dualproto.config import ExperimentConfig
from dualproto.data import LabeledDataset, SyntheticSpec, generate_synthetic
from dualproto.harness import build_stream, prepare_backbone
from dualproto.model import Backbone, init_backbone
from dualproto.numerics import Rng


SMALL_SPEC = dict(
    num_tasks=2,
    classes_per_task=3,
    train_per_class=30,
    test_per_class=10,
    pretrain_classes=4,
)


def small_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        out_dir=overrides.pop("out_dir", "/tmp/dualproto-tests"),
        synthetic=SyntheticSpec(**SMALL_SPEC),
    )
    cfg.train.epochs = overrides.pop("epochs", 5)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def small_stream():
    return generate_synthetic(SyntheticSpec(**SMALL_SPEC), Rng(1993).substream("data"))


@pytest.fixture(scope="session")
def small_backbone(small_stream):
    cfg = small_config()
    return prepare_backbone(cfg, small_stream)


@pytest.fixture()
def tiny_backbone() -> Backbone:
    # random biases keep ReLU units alive, so random queries cannot collapse
    # to a zero representation in this deliberately tiny net
    rng = Rng(7)
    backbone = init_backbone([4, 6, 5], rng.substream("tiny"))
    for i, bias in enumerate(backbone.biases):
        backbone.biases[i] = bias + 0.1 + 0.05 * rng.substream("bias", i).normal_array(
            bias.shape
        )
    return backbone.freeze()


def two_blob_dataset(seed: int, n_per_class: int = 40, dim: int = 6) -> LabeledDataset:
    """Two well-separated Gaussian blobs; linearly separable by construction."""
    rng = Rng(seed)
    a = 0.5 + 0.05 * rng.normal_array((n_per_class, dim))
    b = -0.5 + 0.05 * rng.normal_array((n_per_class, dim))
    return LabeledDataset(
        np.vstack([a, b]),
        np.array([0] * n_per_class + [1] * n_per_class),
    )
