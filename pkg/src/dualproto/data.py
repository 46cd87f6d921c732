"""Benchmark data: synthetic multi-domain task streams, class-split protocols,
and feature-CSV ingestion.

The synthetic generator builds one Gaussian cloud per class and gives every
class a "twin" in another task whose mean sits within two noise units of its
own, so raw mean-of-representation prototypes of twin classes are nearly
parallel while per-task noise subspaces keep the classes statistically
separable. That is the failure mode the two-step predictor exists to fix,
manufactured at desk scale.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng, ShapeMismatchError, ensure_finite


class GeometryError(ValueError):
    """The requested class geometry cannot be placed in the given dimension."""


class SplitError(ValueError):
    """A class-split protocol does not tile the available classes."""


class DataFormatError(ValueError):
    """A feature CSV file violates the documented format."""


@dataclass
class LabeledDataset:
    """Feature rows with integer class labels."""

    features: np.ndarray  # n x d
    labels: np.ndarray  # n

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeMismatchError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeMismatchError("need exactly one label per feature row")
        if self.features.shape[0] == 0:
            raise ValueError("dataset has no samples")
        ensure_finite("dataset features", self.features)

    @property
    def class_set(self) -> set[int]:
        return {int(c) for c in np.unique(self.labels)}

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_set)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def rows_of_class(self, class_id: int) -> np.ndarray:
        return self.features[self.labels == class_id]

    def subset(self, row_indices) -> "LabeledDataset":
        idx = np.asarray(row_indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx])


@dataclass
class TaskData:
    train: LabeledDataset
    test: LabeledDataset

    def __post_init__(self):
        if not self.test.class_set <= self.train.class_set:
            raise ValueError("task test set contains classes absent from training")

    @property
    def class_set(self) -> set[int]:
        return self.train.class_set


@dataclass
class TaskStream:
    """Ordered incremental tasks plus a disjoint pretraining partition.

    Tasks are 1-indexed everywhere: ``tasks[0]`` is task 1.
    """

    tasks: list[TaskData]
    pretrain: LabeledDataset | None = None
    base_m: int = 0
    inc_n: int = 0
    twin_pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        seen: set[int] = set()
        for i, task in enumerate(self.tasks):
            overlap = seen & task.class_set
            if overlap:
                raise ValueError(
                    f"task {i + 1} reuses classes {sorted(overlap)} from earlier tasks"
                )
            seen |= task.class_set
        if self.pretrain is not None:
            overlap = seen & self.pretrain.class_set
            if overlap:
                raise ValueError(
                    f"pretraining partition reuses incremental classes {sorted(overlap)}"
                )

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task(self, task_id: int) -> TaskData:
        return self.tasks[task_id - 1]

    def task_of_class(self) -> dict[int, int]:
        mapping: dict[int, int] = {}
        for t, task in enumerate(self.tasks, start=1):
            for c in task.class_set:
                mapping[c] = t
        return mapping

    def cumulative_test(self, through_stage: int) -> LabeledDataset:
        """Union of test splits of tasks 1..through_stage."""
        parts = [self.task(t).test for t in range(1, through_stage + 1)]
        return LabeledDataset(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass
class SyntheticSpec:
    """Geometry knobs for the synthetic benchmark; scales are in noise units."""

    num_tasks: int = 8
    classes_per_task: int = 5
    train_per_class: int = 100
    test_per_class: int = 50
    input_dim: int = 16
    noise_scale: float = 0.1
    task_noise_scale: float = 8.0
    task_subspace_dim: int = 4
    twin_offset_scale: float = 0.5
    translation_scale: float = 0.5
    min_separation: float = 10.0
    anchor_radius: float = 24.0
    pretrain_classes: int = 10
    twins: bool = True

    def __post_init__(self):
        if self.num_tasks < 2:
            raise ValueError("synthetic stream needs at least 2 tasks")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if not 1 <= self.task_subspace_dim <= self.input_dim:
            raise ValueError("task_subspace_dim must fit inside input_dim")
        if self.twins and 2 * self.twin_offset_scale + 2 * self.translation_scale > 2.0:
            raise GeometryError(
                "twin offsets plus translations exceed the 2-sigma twin budget"
            )

    @property
    def total_classes(self) -> int:
        return self.num_tasks * self.classes_per_task


def _sample_anchors(spec: SyntheticSpec, count: int, rng: Rng) -> np.ndarray:
    """Anchor points on a sphere with pairwise chord >= min_separation.

    Cosine classification cares about angles, so anchors live on a sphere of
    radius ``anchor_radius``. Up to 2*d anchors come from a randomly rotated
    signed orthonormal frame (pairwise chords sqrt(2)*radius or 2*radius);
    beyond that we fall back to rejection sampling, which fails loudly when
    the requested separation cannot fit in the dimension.
    """
    d = spec.input_dim
    radius = spec.anchor_radius * spec.noise_scale
    min_dist = spec.min_separation * spec.noise_scale
    if count <= 2 * d:
        if math.sqrt(2.0) * radius < min_dist and count > 1:
            raise GeometryError(
                f"anchor radius {spec.anchor_radius:g} too small for separation "
                f"{spec.min_separation:g} (needs radius >= separation/sqrt(2))"
            )
        frame = _random_rotation(d, rng)
        signed = np.vstack([frame.T, -frame.T])  # rows: +e_1..+e_d, -e_1..-e_d
        anchors = radius * signed[:count]
    else:
        anchors = np.zeros((count, d))
        placed = 0
        attempts = 0
        max_attempts = 2000 * count
        while placed < count:
            attempts += 1
            if attempts > max_attempts:
                raise GeometryError(
                    f"could not place {count} anchors at separation {min_dist:g} "
                    f"on a sphere of radius {radius:g} in {d} dims"
                )
            candidate = radius * _unit_vector(d, rng)
            if placed == 0 or np.min(
                np.linalg.norm(anchors[:placed] - candidate, axis=1)
            ) >= min_dist:
                anchors[placed] = candidate
                placed += 1
    dists = np.linalg.norm(anchors[:, None, :] - anchors[None, :, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    if count > 1 and float(dists.min()) < min_dist:
        raise GeometryError("anchor placement violates the requested separation")
    return anchors


def _random_rotation(dim: int, rng: Rng) -> np.ndarray:
    """Deterministic random orthogonal matrix (QR with sign-fixed diagonal)."""
    gauss = rng.normal_array((dim, dim))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


def _unit_vector(dim: int, rng: Rng) -> np.ndarray:
    while True:
        v = rng.normal_array(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def _twin_group(spec: SyntheticSpec, task_id: int) -> int:
    """Tasks pair up (1,2), (3,4), ...; an odd trailing task joins group 0."""
    if not spec.twins:
        return task_id - 1
    if spec.num_tasks % 2 == 1 and task_id == spec.num_tasks:
        return 0
    return (task_id - 1) // 2


def _sample_class_cloud(
    mean: np.ndarray,
    subspace: np.ndarray,
    spec: SyntheticSpec,
    count: int,
    rng: Rng,
) -> np.ndarray:
    tau = spec.task_noise_scale * spec.noise_scale
    q = subspace.shape[1]
    along = rng.normal_array((count, q), sigma=tau) @ subspace.T
    iso = rng.normal_array((count, spec.input_dim), sigma=spec.noise_scale)
    return mean + along + iso


def generate_synthetic(spec: SyntheticSpec, rng: Rng) -> TaskStream:
    """Build the full task stream plus the disjoint pretraining partition.

    Determinism: every draw comes from substreams keyed by purpose and class,
    so two calls with equal (spec, seed) produce bit-identical streams.
    """
    sigma = spec.noise_scale
    n_groups = len({_twin_group(spec, t) for t in range(1, spec.num_tasks + 1)})
    anchor_count = n_groups * spec.classes_per_task
    anchors = _sample_anchors(spec, anchor_count, rng.substream("anchors"))

    rotations = {
        t: _random_rotation(spec.input_dim, rng.substream("rotation", t))
        for t in range(0, spec.num_tasks + 1)  # 0 is the pretraining domain
    }
    translations = {
        t: spec.translation_scale
        * sigma
        * _unit_vector(spec.input_dim, rng.substream("translation", t))
        for t in range(1, spec.num_tasks + 1)
    }

    # class means: group anchor + small per-class offset + per-task translation
    means: dict[int, np.ndarray] = {}
    class_task: dict[int, int] = {}
    for t in range(1, spec.num_tasks + 1):
        g = _twin_group(spec, t)
        for j in range(spec.classes_per_task):
            class_id = (t - 1) * spec.classes_per_task + j
            offset = spec.twin_offset_scale * sigma * _unit_vector(
                spec.input_dim, rng.substream("offset", t, j)
            )
            means[class_id] = (
                anchors[g * spec.classes_per_task + j] + offset + translations[t]
            )
            class_task[class_id] = t

    _check_geometry(spec, means, class_task)

    tasks: list[TaskData] = []
    per_class = spec.train_per_class + spec.test_per_class
    for t in range(1, spec.num_tasks + 1):
        subspace = rotations[t][:, : spec.task_subspace_dim]
        feats = []
        labels = []
        for j in range(spec.classes_per_task):
            class_id = (t - 1) * spec.classes_per_task + j
            cloud = _sample_class_cloud(
                means[class_id], subspace, spec, per_class,
                rng.substream("samples", t, j),
            )
            feats.append(cloud)
            labels.append(np.full(per_class, class_id, dtype=np.int64))
        feats_arr = np.vstack(feats)
        labels_arr = np.concatenate(labels)
        train_mask = np.zeros(len(labels_arr), dtype=bool)
        for j in range(spec.classes_per_task):
            start = j * per_class
            train_mask[start : start + spec.train_per_class] = True
        tasks.append(
            TaskData(
                train=LabeledDataset(feats_arr[train_mask], labels_arr[train_mask]),
                test=LabeledDataset(feats_arr[~train_mask], labels_arr[~train_mask]),
            )
        )

    # Pretraining classes sit in random directions with broad multi-direction
    # noise: the extractor must keep many input directions alive to separate
    # them, which preserves the stream geometry it has never seen.
    pretrain = None
    if spec.pretrain_classes > 0:
        q_pre = min(2 * spec.task_subspace_dim, spec.input_dim // 2)
        subspace = rotations[0][:, :q_pre]
        radius = spec.anchor_radius * sigma
        feats = []
        labels = []
        base_id = spec.total_classes
        for j in range(spec.pretrain_classes):
            sub_rng = rng.substream("samples", 0, j)
            anchor = radius * _unit_vector(spec.input_dim, sub_rng)
            tau = spec.task_noise_scale * sigma
            along = sub_rng.normal_array((spec.train_per_class, q_pre), sigma=tau) @ subspace.T
            iso = sub_rng.normal_array((spec.train_per_class, spec.input_dim), sigma=sigma)
            feats.append(anchor + along + iso)
            labels.append(np.full(spec.train_per_class, base_id + j, dtype=np.int64))
        pretrain = LabeledDataset(np.vstack(feats), np.concatenate(labels))

    twin_pairs: list[tuple[int, int]] = []
    if spec.twins:
        by_slot: dict[tuple[int, int], list[int]] = {}
        for class_id, t in class_task.items():
            slot = (_twin_group(spec, t), class_id % spec.classes_per_task)
            by_slot.setdefault(slot, []).append(class_id)
        for group in by_slot.values():
            group.sort()
            twin_pairs.extend(
                (a, b) for i, a in enumerate(group) for b in group[i + 1 :]
            )

    return TaskStream(
        tasks=tasks,
        pretrain=pretrain,
        base_m=spec.classes_per_task,
        inc_n=spec.classes_per_task,
        twin_pairs=sorted(twin_pairs),
    )


def _check_geometry(
    spec: SyntheticSpec, means: dict[int, np.ndarray], class_task: dict[int, int]
) -> None:
    """Within-task means must stay >= 8 sigma apart; twins <= 2 sigma."""
    sigma = spec.noise_scale
    ids = sorted(means)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            dist = float(np.linalg.norm(means[a] - means[b]))
            same_task = class_task[a] == class_task[b]
            twin_slot = spec.twins and (
                a % spec.classes_per_task == b % spec.classes_per_task
                and _twin_group(spec, class_task[a]) == _twin_group(spec, class_task[b])
                and not same_task
            )
            if same_task and dist < 8.0 * sigma:
                raise GeometryError(
                    f"classes {a} and {b} share a task but sit {dist / sigma:.2f} "
                    "sigma apart (< 8)"
                )
            if twin_slot and dist > 2.0 * sigma:
                raise GeometryError(
                    f"twin classes {a} and {b} sit {dist / sigma:.2f} sigma apart (> 2)"
                )


def split_base_inc(
    dataset: LabeledDataset,
    base_m: int,
    inc_n: int,
    rng: Rng,
    pretrain_fraction: float = 0.0,
    test_fraction: float = 0.25,
    test_set: LabeledDataset | None = None,
) -> TaskStream:
    """Slice a dataset into a task stream: ``base_m`` classes first, then
    ``inc_n`` per stage; ``base_m = 0`` means equal division into ``inc_n``-sized
    tasks. A leading fraction of classes may be carved out for pretraining.

    When ``test_set`` is given its per-class rows become the test split;
    otherwise each class is split by ``test_fraction`` using the stream RNG.
    """
    classes = dataset.classes
    order = [classes[i] for i in rng.substream("class-order").permutation(len(classes))]

    n_pre = int(len(order) * pretrain_fraction)
    pre_classes = order[:n_pre]
    rest = order[n_pre:]

    if inc_n <= 0:
        raise SplitError("inc_n must be positive")
    if base_m == 0:
        if len(rest) % inc_n != 0:
            raise SplitError(
                f"{len(rest)} classes cannot be equally divided into tasks of {inc_n}"
            )
        sizes = [inc_n] * (len(rest) // inc_n)
    else:
        remainder = len(rest) - base_m
        if remainder < 0 or remainder % inc_n != 0:
            raise SplitError(
                f"{len(rest)} classes do not fit base {base_m} plus stages of {inc_n}"
            )
        sizes = [base_m] + [inc_n] * (remainder // inc_n)
    if len(sizes) < 1:
        raise SplitError("split produced no tasks")

    if test_set is not None and not set(test_set.class_set) <= set(dataset.class_set):
        raise SplitError("test set contains classes missing from the training data")

    def class_split(class_id: int) -> tuple[np.ndarray, np.ndarray]:
        rows = np.flatnonzero(dataset.labels == class_id)
        if test_set is not None:
            test_rows = test_set.rows_of_class(class_id)
            return dataset.features[rows], test_rows
        perm = rng.substream("row-order", class_id).permutation(len(rows))
        n_test = int(round(len(rows) * test_fraction))
        # every class keeps at least one training row and, when it has two
        # or more rows, at least one test row
        n_test = min(max(n_test, 1 if len(rows) >= 2 else 0), len(rows) - 1)
        shuffled = rows[perm]
        return (
            dataset.features[shuffled[: len(rows) - n_test]],
            dataset.features[shuffled[len(rows) - n_test :]],
        )

    tasks = []
    cursor = 0
    for size in sizes:
        chunk = rest[cursor : cursor + size]
        cursor += size
        train_f, train_l, test_f, test_l = [], [], [], []
        for class_id in chunk:
            tr, te = class_split(class_id)
            train_f.append(tr)
            train_l.append(np.full(len(tr), class_id, dtype=np.int64))
            test_f.append(te)
            test_l.append(np.full(len(te), class_id, dtype=np.int64))
        tasks.append(
            TaskData(
                train=LabeledDataset(np.vstack(train_f), np.concatenate(train_l)),
                test=LabeledDataset(np.vstack(test_f), np.concatenate(test_l)),
            )
        )

    pretrain = None
    if pre_classes:
        mask = np.isin(dataset.labels, pre_classes)
        pretrain = LabeledDataset(dataset.features[mask], dataset.labels[mask])

    return TaskStream(
        tasks=tasks, pretrain=pretrain, base_m=sizes[0],
        inc_n=inc_n if len(sizes) > 1 else sizes[0],
    )


# ---------------------------------------------------------------------------
# Feature CSV: header "label,f0,...,f{d-1}", one sample per line
# ---------------------------------------------------------------------------


def load_feature_csv(path: str | Path) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "label":
            raise DataFormatError(f"{path}: header must start with 'label,f0,...'")
        for i, name in enumerate(header[1:]):
            if name != f"f{i}":
                raise DataFormatError(
                    f"{path}: unexpected header column {name!r} at position {i + 1}"
                )
        dim = len(header) - 1
        features: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataFormatError(
                    f"{path}: line {line_no}: expected {dim + 1} columns, got {len(row)}"
                )
            try:
                label = int(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {line_no}: {exc}") from None
            if label < 0:
                raise DataFormatError(
                    f"{path}: line {line_no}: labels must be non-negative"
                )
            labels.append(label)
            features.append(values)
    if not features:
        raise DataFormatError(f"{path}: no data rows")
    return LabeledDataset(np.array(features), np.array(labels))


def save_feature_csv(path: str | Path, dataset: LabeledDataset) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
