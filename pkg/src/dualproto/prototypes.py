"""Dual prototype store: per-class mean representations under the frozen
extractor (raw) and under each task's adapter (augmented), plus the
class-to-task map that drives test-time adapter selection.

The store is append-only: once a task's prototypes are ingested they are
never touched again, which is precisely how it avoids forgetting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .model import Adapter, Backbone, extract


class DuplicateClassError(ValueError):
    """A class id was ingested twice; incremental class sets must be disjoint."""


@dataclass
class DualPrototypeStore:
    raw: dict[int, np.ndarray] = field(default_factory=dict)
    aug: dict[int, np.ndarray] = field(default_factory=dict)
    task_of: dict[int, int] = field(default_factory=dict)

    @property
    def class_count(self) -> int:
        return len(self.raw)

    def class_ids(self) -> list[int]:
        return sorted(self.raw)

    def task_ids(self) -> list[int]:
        return sorted(set(self.task_of.values()))

    def check_consistent(self) -> None:
        if not (set(self.raw) == set(self.aug) == set(self.task_of)):
            raise ValueError("raw, aug and task_of must share one key set")


def _class_means(
    backbone: Backbone, dataset: LabeledDataset, adapter: Adapter | None
) -> dict[int, np.ndarray]:
    reps = extract(backbone, dataset.features, adapter)
    means: dict[int, np.ndarray] = {}
    for class_id in dataset.classes:
        rows = reps[dataset.labels == class_id]
        assert rows.shape[0] > 0, f"class {class_id} has no samples"
        means[class_id] = rows.mean(axis=0)
    return means


def compute_raw_prototypes(
    backbone: Backbone, dataset: LabeledDataset
) -> dict[int, np.ndarray]:
    """Per-class mean of representations under the frozen extractor alone."""
    return _class_means(backbone, dataset, None)


def compute_aug_prototypes(
    backbone: Backbone, adapter: Adapter, dataset: LabeledDataset
) -> dict[int, np.ndarray]:
    """Per-class mean of representations under the task-adapted extractor."""
    if not adapter.frozen:
        raise ValueError("augmented prototypes require the task's frozen adapter")
    return _class_means(backbone, dataset, adapter)


def ingest_task(
    store: DualPrototypeStore,
    task_id: int,
    raw_protos: dict[int, np.ndarray],
    aug_protos: dict[int, np.ndarray],
) -> DualPrototypeStore:
    """Append one task's prototypes; class ids must be new to the store."""
    if set(raw_protos) != set(aug_protos):
        raise ValueError("raw and augmented prototype maps must cover the same classes")
    clash = set(raw_protos) & set(store.raw)
    if clash:
        raise DuplicateClassError(
            f"classes {sorted(clash)} already ingested; task class sets are disjoint"
        )
    for class_id in sorted(raw_protos):
        raw = np.array(raw_protos[class_id], dtype=np.float64)
        aug = np.array(aug_protos[class_id], dtype=np.float64)
        raw.flags.writeable = False
        aug.flags.writeable = False
        store.raw[class_id] = raw
        store.aug[class_id] = aug
        store.task_of[class_id] = task_id
    store.check_consistent()
    return store
