import numpy as np
import pytest

from dualproto.model import (
    Adapter,
    AdapterRegistry,
    Backbone,
    FrozenStateError,
    adapter_forward,
    backbone_param_count,
    count_trainable_params,
    extract,
    forward_blocks,
    init_adapter,
    init_backbone,
    pretrain_backbone,
)
from dualproto.numerics import Rng, ShapeMismatchError, relu
from dualproto.training import TrainConfig, TemporaryHead, run_training

from conftest import two_blob_dataset


class TestAdapterForward:
    def test_zero_up_projection_is_identity(self):
        rng = Rng(1)
        z = rng.normal_array(6)
        w_down = rng.normal_array((6, 2))
        out = adapter_forward(z, w_down, np.zeros((2, 6)))
        np.testing.assert_array_equal(out, z)

    def test_zero_down_projection_is_identity(self):
        rng = Rng(2)
        z = rng.normal_array(5)
        out = adapter_forward(z, np.zeros((5, 3)), rng.normal_array((3, 5)))
        np.testing.assert_array_equal(out, z)

    def test_relu_kills_negative_preactivation(self):
        out = adapter_forward(
            np.array([1.0, 2.0]), np.array([[1.0], [-1.0]]), np.array([[3.0, 0.0]])
        )
        np.testing.assert_array_equal(out, [1.0, 2.0])

    def test_batch_matches_per_row(self):
        rng = Rng(3)
        z = rng.normal_array((4, 6))
        w_down = rng.normal_array((6, 2))
        w_up = rng.normal_array((2, 6))
        batched = adapter_forward(z, w_down, w_up)
        for i in range(4):
            np.testing.assert_array_equal(batched[i], adapter_forward(z[i], w_down, w_up))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adapter_forward(np.ones(4), np.ones((5, 2)), np.ones((2, 5)))


class TestBackbone:
    def test_block_chain_validated(self):
        with pytest.raises(ShapeMismatchError):
            Backbone(
                weights=[np.ones((4, 6)), np.ones((5, 3))],
                biases=[np.zeros(6), np.zeros(3)],
            )

    def test_frozen_weights_are_immutable(self, tiny_backbone):
        with pytest.raises(ValueError):
            tiny_backbone.weights[0][0, 0] = 99.0

    def test_copy_is_independent(self, tiny_backbone):
        clone = tiny_backbone.copy(frozen=False)
        clone.weights[0][0, 0] += 1.0
        assert clone.weights[0][0, 0] != tiny_backbone.weights[0][0, 0]


class TestExtract:
    def test_fresh_adapter_is_identity(self, tiny_backbone):
        rng = Rng(5)
        adapter = init_adapter(1, tiny_backbone, 2, rng)
        x = rng.normal_array((7, 4))
        np.testing.assert_array_equal(
            extract(tiny_backbone, x, adapter), extract(tiny_backbone, x)
        )

    def test_single_identity_block_returns_input(self):
        backbone = Backbone([np.eye(4)], [np.zeros(4)]).freeze()
        x = Rng(6).normal_array(4)
        np.testing.assert_array_equal(extract(backbone, x), x)

    def test_matches_straight_line_reference(self):
        rng = Rng(7)
        w0, b0 = rng.normal_array((4, 6)), rng.normal_array(6)
        w1, b1 = rng.normal_array((6, 3)), rng.normal_array(3)
        backbone = Backbone([w0.copy(), w1.copy()], [b0.copy(), b1.copy()]).freeze()
        x = rng.normal_array(4)
        expected = relu(x @ w0 + b0) @ w1 + b1  # independent re-computation
        np.testing.assert_array_equal(extract(backbone, x), expected)

    def test_requires_frozen_backbone(self):
        backbone = init_backbone([4, 5, 3], Rng(8))
        with pytest.raises(FrozenStateError):
            extract(backbone, np.zeros(4))

    def test_input_dim_mismatch(self, tiny_backbone):
        with pytest.raises(ShapeMismatchError):
            extract(tiny_backbone, np.zeros(5))

    def test_adapter_width_mismatch(self, tiny_backbone):
        bad = Adapter(
            task_id=1,
            down={0: np.zeros((7, 2))},
            up={0: np.zeros((2, 7))},
            bottleneck_dim=2,
        )
        with pytest.raises(ShapeMismatchError):
            extract(tiny_backbone, np.zeros(4), bad)

    def test_output_length_is_feature_dim(self, tiny_backbone):
        rng = Rng(9)
        adapter = init_adapter(1, tiny_backbone, 2, rng)
        for x in rng.normal_array((5, 4)):
            assert extract(tiny_backbone, x).shape == (5,)
            assert extract(tiny_backbone, x, adapter).shape == (5,)

    def test_forward_cache_contents(self, tiny_backbone):
        rng = Rng(10)
        x = rng.normal_array((3, 4))
        features, cache = forward_blocks(tiny_backbone, x, keep_cache=True)
        np.testing.assert_array_equal(cache.block_inputs[0], x)
        np.testing.assert_array_equal(
            cache.preacts[0], x @ tiny_backbone.weights[0] + tiny_backbone.biases[0]
        )
        np.testing.assert_array_equal(cache.features, features)


class TestInitAdapter:
    def test_shapes_for_unit_bottleneck(self):
        backbone = init_backbone([4, 8, 8, 6], Rng(11)).freeze()
        adapter = init_adapter(1, backbone, 1, Rng(12))
        assert adapter.down[0].shape == (8, 1)
        assert adapter.up[0].shape == (1, 8)
        assert adapter.block_indices == (0, 1)

    def test_up_projection_starts_at_zero(self, tiny_backbone):
        adapter = init_adapter(1, tiny_backbone, 2, Rng(13))
        for blk in adapter.block_indices:
            np.testing.assert_array_equal(adapter.up[blk], 0.0)

    def test_equal_seeds_equal_down_projections(self, tiny_backbone):
        a = init_adapter(1, tiny_backbone, 2, Rng(14))
        b = init_adapter(1, tiny_backbone, 2, Rng(14))
        for blk in a.block_indices:
            np.testing.assert_array_equal(a.down[blk], b.down[blk])

    def test_bottleneck_bounds(self, tiny_backbone):
        with pytest.raises(ShapeMismatchError):
            init_adapter(1, tiny_backbone, 0, Rng(15))
        with pytest.raises(ShapeMismatchError):
            init_adapter(1, tiny_backbone, 6, Rng(15))

    def test_frozen_adapter_rejects_mutation(self, tiny_backbone):
        adapter = init_adapter(1, tiny_backbone, 2, Rng(16)).freeze()
        with pytest.raises(ValueError):
            adapter.down[0][0, 0] = 1.0
        with pytest.raises(FrozenStateError):
            adapter.require_unfrozen()


class TestAdapterRegistry:
    def test_ids_must_be_contiguous_from_one(self, tiny_backbone):
        registry = AdapterRegistry()
        a2 = init_adapter(2, tiny_backbone, 2, Rng(17)).freeze()
        with pytest.raises(ValueError):
            registry.add(a2)

    def test_no_overwrites(self, tiny_backbone):
        registry = AdapterRegistry()
        registry.add(init_adapter(1, tiny_backbone, 2, Rng(18)).freeze())
        with pytest.raises(ValueError):
            registry.add(init_adapter(1, tiny_backbone, 2, Rng(19)).freeze())

    def test_only_frozen_adapters(self, tiny_backbone):
        registry = AdapterRegistry()
        with pytest.raises(FrozenStateError):
            registry.add(init_adapter(1, tiny_backbone, 2, Rng(20)))

    def test_missing_task(self):
        with pytest.raises(KeyError):
            AdapterRegistry().get(3)


class TestParamCounts:
    def test_single_block_adapter(self, tiny_backbone):
        adapter = Adapter(
            task_id=1, down={0: np.zeros((8, 2))}, up={0: np.zeros((2, 8))},
            bottleneck_dim=2,
        )
        assert count_trainable_params(adapter) == 32

    def test_with_head(self):
        adapter = Adapter(
            task_id=1, down={0: np.zeros((8, 2))}, up={0: np.zeros((2, 8))},
            bottleneck_dim=2,
        )
        assert count_trainable_params(adapter, head_dims=(8, 10)) == 122

    def test_nothing(self):
        assert count_trainable_params(None) == 0

    def test_backbone_param_count(self):
        backbone = init_backbone([4, 5, 3], Rng(21))
        assert backbone_param_count(backbone) == 4 * 5 + 5 + 5 * 3 + 3


class TestPretrainBackbone:
    def test_zero_epochs_equals_initialization(self):
        data = two_blob_dataset(31)
        cfg = TrainConfig(epochs=0, center_weight=0.0)
        rng_seed = 77
        trained = pretrain_backbone(data, cfg, Rng(rng_seed), dims=[6, 8, 5])
        reference = init_backbone([6, 8, 5], Rng(rng_seed).substream("backbone-init"))
        assert trained.frozen
        for w_t, w_r in zip(trained.weights, reference.weights):
            np.testing.assert_array_equal(w_t, w_r)

    def test_separable_classes_reach_full_training_accuracy(self):
        data = two_blob_dataset(32)
        backbone = init_backbone([6, 8, 5], Rng(5).substream("backbone-init"))
        result = run_training(
            backbone, data, TrainConfig(epochs=25, center_weight=0.0),
            Rng(5).substream("backbone-train"), update_backbone=True,
        )
        features = forward_blocks(backbone, data.features)[0]
        predictions = np.argmax(result.head.logits(features), axis=1)
        labels = result.head.columns_for(data.labels)
        assert np.mean(predictions == labels) == 1.0
        assert result.epoch_losses[-1] < result.epoch_losses[0]

    def test_bitwise_deterministic(self):
        data = two_blob_dataset(33)
        cfg = TrainConfig(epochs=4, center_weight=0.0)
        a = pretrain_backbone(data, cfg, Rng(123), dims=[6, 8, 5])
        b = pretrain_backbone(data, cfg, Rng(123), dims=[6, 8, 5])
        for w_a, w_b in zip(a.weights, b.weights):
            np.testing.assert_array_equal(w_a, w_b)
        for b_a, b_b in zip(a.biases, b.biases):
            np.testing.assert_array_equal(b_a, b_b)

    def test_rejects_dim_mismatch(self):
        data = two_blob_dataset(34)
        with pytest.raises(ShapeMismatchError):
            pretrain_backbone(data, TrainConfig(epochs=1), Rng(1), dims=[7, 8, 5])

    def test_head_is_not_part_of_result(self):
        data = two_blob_dataset(35)
        backbone = pretrain_backbone(
            data, TrainConfig(epochs=2, center_weight=0.0), Rng(9), dims=[6, 8, 5]
        )
        assert not hasattr(backbone, "head")
        assert backbone.feature_dim == 5


class TestHeadGrowth:
    def test_extend_appends_columns(self):
        head = TemporaryHead.create(6, [0, 1], Rng(40))
        grown = head.extend([5, 7], Rng(41))
        assert grown.class_ids == (0, 1, 5, 7)
        np.testing.assert_array_equal(grown.weight[:, :2], head.weight)
        np.testing.assert_array_equal(grown.bias[:2], head.bias)

    def test_extend_rejects_known_classes(self):
        head = TemporaryHead.create(6, [0, 1], Rng(42))
        with pytest.raises(ValueError):
            head.extend([1, 2], Rng(43))

    def test_columns_for_unknown_class(self):
        head = TemporaryHead.create(6, [0, 1], Rng(44))
        with pytest.raises(KeyError):
            head.columns_for([2])
