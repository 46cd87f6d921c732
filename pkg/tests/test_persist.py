import numpy as np
import pytest

from dualproto.model import AdapterRegistry, init_adapter, init_backbone
from dualproto.numerics import Rng
from dualproto.persist import (
    PersistError,
    atomic_write_text,
    load_adapters,
    load_backbone,
    load_store,
    load_tensors,
    save_adapters,
    save_backbone,
    save_store,
    save_tensors,
)
from dualproto.prototypes import DualPrototypeStore, ingest_task


class TestTensorContainer:
    def test_round_trip_exact(self, tmp_path):
        rng = Rng(1)
        tensors = {
            "alpha": rng.normal_array((3, 4)) * 1e-17,
            "beta": rng.normal_array((1, 2)) * 1e300,
            "gamma.sub": rng.normal_array((2, 2)),
        }
        path = tmp_path / "weights.txt"
        save_tensors(path, {"kind": "test", "note": "anything"}, tensors)
        meta, loaded = load_tensors(path)
        assert meta == {"kind": "test", "note": "anything"}
        assert set(loaded) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("NOTHEADER 1\nend\n")
        with pytest.raises(PersistError, match="header"):
            load_tensors(path)

    def test_truncated_tensor(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("DPWEIGHTS 1\ntensor t 2 2\n1.0 2.0\nend\n")
        with pytest.raises(PersistError):
            load_tensors(path)

    def test_missing_end(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("DPWEIGHTS 1\nmeta kind x\n")
        with pytest.raises(PersistError, match="end"):
            load_tensors(path)

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("DPWEIGHTS 1\ntensor t 1 2\n1.0 oops\nend\n")
        with pytest.raises(PersistError, match="non-numeric"):
            load_tensors(path)

    def test_atomic_write_replaces_existing(self, tmp_path):
        path = tmp_path / "file.txt"
        atomic_write_text(path, "first")
        atomic_write_text(path, "second")
        assert path.read_text() == "second"
        assert list(tmp_path.iterdir()) == [path]  # no temp residue


class TestBackbonePersistence:
    def test_round_trip_bitwise(self, tmp_path):
        backbone = init_backbone([4, 6, 3], Rng(2))
        backbone.biases[0] += 0.25
        backbone.freeze()
        path = tmp_path / "backbone.txt"
        save_backbone(path, backbone)
        loaded = load_backbone(path)
        assert loaded.frozen
        assert loaded.num_blocks == backbone.num_blocks
        for w_a, w_b in zip(loaded.weights, backbone.weights):
            np.testing.assert_array_equal(w_a, w_b)
        for b_a, b_b in zip(loaded.biases, backbone.biases):
            np.testing.assert_array_equal(b_a, b_b)

    def test_unfrozen_flag_preserved(self, tmp_path):
        backbone = init_backbone([3, 4, 2], Rng(3))
        path = tmp_path / "backbone.txt"
        save_backbone(path, backbone)
        assert not load_backbone(path).frozen

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "w.txt"
        save_tensors(path, {"kind": "store", "classes": "0"}, {})
        with pytest.raises(PersistError, match="kind"):
            load_backbone(path)


class TestAdapterPersistence:
    def test_round_trip_bitwise(self, tmp_path, tiny_backbone):
        rng = Rng(4)
        registry = AdapterRegistry()
        for task_id in (1, 2):
            adapter = init_adapter(task_id, tiny_backbone, 2, rng.substream(task_id))
            for blk in adapter.block_indices:
                adapter.up[blk] += rng.substream("up", task_id, blk).normal_array(
                    adapter.up[blk].shape
                )
            registry.add(adapter.freeze())
        path = tmp_path / "adapters.txt"
        save_adapters(path, registry)
        loaded = load_adapters(path)
        assert loaded.task_ids() == [1, 2]
        for task_id in (1, 2):
            original = registry.get(task_id)
            restored = loaded.get(task_id)
            assert restored.frozen
            assert restored.bottleneck_dim == original.bottleneck_dim
            for blk in original.block_indices:
                np.testing.assert_array_equal(restored.down[blk], original.down[blk])
                np.testing.assert_array_equal(restored.up[blk], original.up[blk])

    def test_no_head_parameters_anywhere(self, tmp_path, tiny_backbone):
        registry = AdapterRegistry()
        registry.add(init_adapter(1, tiny_backbone, 2, Rng(5)).freeze())
        path = tmp_path / "adapters.txt"
        save_adapters(path, registry)
        assert "head" not in path.read_text()


class TestStorePersistence:
    def test_round_trip_bitwise(self, tmp_path):
        rng = Rng(6)
        store = DualPrototypeStore()
        ingest_task(store, 1, {0: rng.normal_array(5), 1: rng.normal_array(5)},
                    {0: rng.normal_array(5), 1: rng.normal_array(5)})
        ingest_task(store, 2, {4: rng.normal_array(5)}, {4: rng.normal_array(5)})
        path = tmp_path / "store.txt"
        save_store(path, store)
        loaded = load_store(path)
        assert loaded.task_of == {0: 1, 1: 1, 4: 2}
        for class_id in store.raw:
            np.testing.assert_array_equal(loaded.raw[class_id], store.raw[class_id])
            np.testing.assert_array_equal(loaded.aug[class_id], store.aug[class_id])

    def test_loaded_prototypes_immutable(self, tmp_path):
        rng = Rng(7)
        store = DualPrototypeStore()
        ingest_task(store, 1, {0: rng.normal_array(4)}, {0: rng.normal_array(4)})
        path = tmp_path / "store.txt"
        save_store(path, store)
        loaded = load_store(path)
        with pytest.raises(ValueError):
            loaded.raw[0][0] = 1.0
