import numpy as np
import pytest

from dualproto.data import LabeledDataset
from dualproto.model import extract, init_adapter
from dualproto.numerics import Rng
from dualproto.prototypes import (
    DualPrototypeStore,
    DuplicateClassError,
    compute_aug_prototypes,
    compute_raw_prototypes,
    ingest_task,
)


class TestRawPrototypes:
    def test_singleton_class_is_its_representation(self, tiny_backbone):
        x = Rng(1).normal_array(4)
        data = LabeledDataset(x[None, :], np.array([7]))
        protos = compute_raw_prototypes(tiny_backbone, data)
        np.testing.assert_array_equal(protos[7], extract(tiny_backbone, x))

    def test_two_samples_give_midpoint(self, tiny_backbone):
        rng = Rng(2)
        xs = rng.normal_array((2, 4))
        data = LabeledDataset(xs, np.array([3, 3]))
        reps = extract(tiny_backbone, xs)
        protos = compute_raw_prototypes(tiny_backbone, data)
        np.testing.assert_allclose(protos[3], (reps[0] + reps[1]) / 2, rtol=0, atol=0)

    def test_matches_accumulate_and_divide_oracle(self, tiny_backbone):
        rng = Rng(3)
        xs = rng.normal_array((30, 4))
        labels = np.array([0, 1, 2] * 10)
        data = LabeledDataset(xs, labels)
        protos = compute_raw_prototypes(tiny_backbone, data)
        for class_id in (0, 1, 2):
            acc = np.zeros(5)
            count = 0
            for x, y in zip(xs, labels):  # independent accumulation
                if y == class_id:
                    acc += extract(tiny_backbone, x)
                    count += 1
            np.testing.assert_allclose(protos[class_id], acc / count, atol=1e-12)


class TestAugPrototypes:
    def test_identity_adapter_equals_raw(self, tiny_backbone):
        rng = Rng(4)
        data = LabeledDataset(rng.normal_array((12, 4)), np.array([0, 1] * 6))
        adapter = init_adapter(1, tiny_backbone, 2, rng).freeze()
        raw = compute_raw_prototypes(tiny_backbone, data)
        aug = compute_aug_prototypes(tiny_backbone, adapter, data)
        for class_id in raw:
            np.testing.assert_array_equal(aug[class_id], raw[class_id])

    def test_requires_frozen_adapter(self, tiny_backbone):
        rng = Rng(5)
        data = LabeledDataset(rng.normal_array((4, 4)), np.array([0, 0, 1, 1]))
        adapter = init_adapter(1, tiny_backbone, 2, rng)
        with pytest.raises(ValueError):
            compute_aug_prototypes(tiny_backbone, adapter, data)

    def test_singleton_class(self, tiny_backbone):
        rng = Rng(6)
        x = rng.normal_array(4)
        adapter = init_adapter(1, tiny_backbone, 2, rng)
        adapter.up[0] += rng.normal_array(adapter.up[0].shape)  # make it non-trivial
        adapter.freeze()
        data = LabeledDataset(x[None, :], np.array([0]))
        aug = compute_aug_prototypes(tiny_backbone, adapter, data)
        np.testing.assert_array_equal(aug[0], extract(tiny_backbone, x, adapter))


class TestIngest:
    def _protos(self, class_ids, h=5, seed=0):
        rng = Rng(seed)
        return {c: rng.normal_array(h) for c in class_ids}

    def test_first_task(self):
        store = DualPrototypeStore()
        ingest_task(store, 1, self._protos([0, 1, 2]), self._protos([0, 1, 2], seed=1))
        assert store.class_count == 3
        assert store.task_of == {0: 1, 1: 1, 2: 1}

    def test_two_tasks_consistent_keys(self):
        store = DualPrototypeStore()
        ingest_task(store, 1, self._protos([0, 1]), self._protos([0, 1], seed=1))
        ingest_task(store, 2, self._protos([2, 3]), self._protos([2, 3], seed=2))
        assert store.class_count == 4
        assert set(store.raw) == set(store.aug) == set(store.task_of) == {0, 1, 2, 3}
        assert store.task_ids() == [1, 2]

    def test_duplicate_class_rejected(self):
        store = DualPrototypeStore()
        ingest_task(store, 1, self._protos([0, 1]), self._protos([0, 1], seed=1))
        with pytest.raises(DuplicateClassError):
            ingest_task(store, 2, self._protos([1, 2]), self._protos([1, 2], seed=2))

    def test_mismatched_key_sets_rejected(self):
        store = DualPrototypeStore()
        with pytest.raises(ValueError):
            ingest_task(store, 1, self._protos([0, 1]), self._protos([0, 2]))

    def test_append_only_no_drift(self):
        store = DualPrototypeStore()
        raw1 = self._protos([0, 1])
        aug1 = self._protos([0, 1], seed=1)
        ingest_task(store, 1, raw1, aug1)
        snapshot = {c: store.raw[c].copy() for c in store.raw}
        ingest_task(store, 2, self._protos([2, 3], seed=2), self._protos([2, 3], seed=3))
        for class_id, frozen in snapshot.items():
            np.testing.assert_array_equal(store.raw[class_id], frozen)

    def test_stored_prototypes_are_immutable(self):
        store = DualPrototypeStore()
        ingest_task(store, 1, self._protos([0]), self._protos([0], seed=1))
        with pytest.raises(ValueError):
            store.raw[0][0] = 99.0

    def test_count_law(self):
        store = DualPrototypeStore()
        sizes = [3, 2, 4]
        next_id = 0
        for task_id, size in enumerate(sizes, start=1):
            ids = list(range(next_id, next_id + size))
            next_id += size
            ingest_task(store, task_id, self._protos(ids, seed=task_id),
                        self._protos(ids, seed=task_id + 10))
            assert store.class_count == sum(sizes[:task_id])
