"""Prediction paths over the dual prototype store.

Three predictors share one scoring core: plain nearest-class-mean over raw
prototypes, its top-K shortlist, and the two-step predictor that reranks
the shortlist with task-selected adapters against augmented prototypes.
Every stage evaluation also keeps raw integer counters so the accuracy
factorisation (overall = shortlist hit rate x accuracy within hits) can be
checked in exact rational arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .data import LabeledDataset
from .model import Adapter, AdapterRegistry, Backbone, extract
from .numerics import ZeroNormError
from .prototypes import DualPrototypeStore


@dataclass
class Prediction:
    sample_id: int
    topk_labels: list[int]
    predicted: int
    true_label: int | None = None

    @property
    def topk_hit(self) -> bool:
        return self.true_label is not None and self.true_label in self.topk_labels


@dataclass
class StageEval:
    stage: int
    n_test: int
    n_topk_hit: int
    n_correct: int
    per_task_accuracy: dict[int, float]

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_test

    @property
    def topk_accuracy(self) -> float:
        return self.n_topk_hit / self.n_test

    @property
    def conditional_accuracy(self) -> float:
        """Accuracy among shortlist hits; 1 by convention when there are none,
        which keeps the factorisation total."""
        if self.n_topk_hit == 0:
            return 1.0
        return self.n_correct / self.n_topk_hit

    def check_decomposition(self) -> None:
        lhs = Fraction(self.n_correct, self.n_test)
        hit = Fraction(self.n_topk_hit, self.n_test)
        cond = Fraction(1) if self.n_topk_hit == 0 else Fraction(self.n_correct, self.n_topk_hit)
        if lhs != hit * cond:
            raise AssertionError("accuracy decomposition identity violated")
        if self.n_correct > self.n_topk_hit:
            raise AssertionError("containment bound violated: correct > shortlist hits")


class _StoreIndex:
    """Matrices over the store's classes in ascending-id order."""

    def __init__(self, store: DualPrototypeStore):
        store.check_consistent()
        if store.class_count == 0:
            raise ValueError("prototype store is empty")
        self.class_ids = store.class_ids()
        self.position = {c: i for i, c in enumerate(self.class_ids)}
        self.raw = np.stack([store.raw[c] for c in self.class_ids])
        self.aug = np.stack([store.aug[c] for c in self.class_ids])
        self.tasks = np.array([store.task_of[c] for c in self.class_ids])
        self.raw_norms = np.linalg.norm(self.raw, axis=1)
        if np.any(self.raw_norms == 0.0):
            raise ZeroNormError("store contains a zero-norm raw prototype")
        self.aug_norms = np.linalg.norm(self.aug, axis=1)
        if np.any(self.aug_norms == 0.0):
            raise ZeroNormError("store contains a zero-norm augmented prototype")


def _cosine_scores(rep: np.ndarray, rows: np.ndarray, row_norms: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(rep))
    if norm == 0.0:
        raise ZeroNormError("zero-norm representation")
    return np.clip((rows @ rep) / (row_norms * norm), -1.0, 1.0)


def _ranked(scores: np.ndarray) -> np.ndarray:
    # stable sort on negated scores: descending score, ties by ascending index
    return np.argsort(-scores, kind="stable")


def ncm_predict(store: DualPrototypeStore, backbone: Backbone, x) -> int:
    """Class whose raw prototype has the highest cosine similarity."""
    index = _StoreIndex(store)
    scores = _cosine_scores(extract(backbone, x), index.raw, index.raw_norms)
    return index.class_ids[int(_ranked(scores)[0])]


def topk_predict(store: DualPrototypeStore, backbone: Backbone, x, k: int) -> list[int]:
    """The min(k, store size) most raw-similar classes, best first."""
    index = _StoreIndex(store)
    return _topk_with_index(index, extract(backbone, x), k)


def _topk_with_index(index: _StoreIndex, rep: np.ndarray, k: int) -> list[int]:
    if k < 1:
        raise ValueError("top-K needs K >= 1")
    k_eff = min(k, len(index.class_ids))  # fallback while few classes are known
    scores = _cosine_scores(rep, index.raw, index.raw_norms)
    return [index.class_ids[int(i)] for i in _ranked(scores)[:k_eff]]


def dual_prototype_predict(
    store: DualPrototypeStore,
    backbone: Backbone,
    registry: AdapterRegistry,
    x,
    k: int,
    sample_id: int = 0,
    true_label: int | None = None,
    extract_fn: Callable[..., np.ndarray] = extract,
) -> Prediction:
    """Two-step prediction: raw prototypes shortlist the K best classes, then
    each shortlisted class is rescored with its own task's adapter against
    the augmented prototypes, reusing one extraction per distinct task."""
    index = _StoreIndex(store)
    return _dual_predict_with_index(
        index, store, backbone, registry, x, k, sample_id, true_label, extract_fn
    )


def _dual_predict_with_index(
    index: _StoreIndex,
    store: DualPrototypeStore,
    backbone: Backbone,
    registry: AdapterRegistry,
    x,
    k: int,
    sample_id: int,
    true_label: int | None,
    extract_fn: Callable[..., np.ndarray] = extract,
) -> Prediction:
    raw_rep = extract_fn(backbone, x)
    shortlist = _topk_with_index(index, raw_rep, k)

    # one adapted extraction (and one scoring pass) per distinct task id
    aug_scores: dict[int, np.ndarray] = {}
    for class_id in shortlist:
        task_id = store.task_of[class_id]
        if task_id not in aug_scores:
            if task_id not in registry:
                raise KeyError(f"no adapter for task {task_id} referenced by class {class_id}")
            adapted = extract_fn(backbone, x, registry.get(task_id))
            aug_scores[task_id] = _cosine_scores(adapted, index.aug, index.aug_norms)

    best_class = shortlist[0]
    best_score = -np.inf
    for class_id in sorted(shortlist):  # ascending id makes ties deterministic
        score = float(aug_scores[store.task_of[class_id]][index.position[class_id]])
        if score > best_score:
            best_score = score
            best_class = class_id

    return Prediction(
        sample_id=sample_id,
        topk_labels=shortlist,
        predicted=best_class,
        true_label=true_label,
    )


def evaluate_stage(
    store: DualPrototypeStore,
    backbone: Backbone,
    registry: AdapterRegistry,
    test_set: LabeledDataset,
    k: int,
    stage: int,
) -> StageEval:
    """Run the two-step predictor over a cumulative test set and aggregate
    exact counts plus per-task accuracies."""
    unseen = test_set.class_set - set(store.raw)
    if unseen:
        raise ValueError(f"test set contains unseen classes {sorted(unseen)}")
    index = _StoreIndex(store)
    predictions = [
        _dual_predict_with_index(
            index, store, backbone, registry, test_set.features[i], k,
            sample_id=i, true_label=int(test_set.labels[i]),
        )
        for i in range(len(test_set))
    ]
    return summarize_predictions(predictions, store.task_of, stage)


def summarize_predictions(
    predictions: list[Prediction], task_of: dict[int, int], stage: int
) -> StageEval:
    n = len(predictions)
    hits = sum(1 for p in predictions if p.topk_hit)
    correct = sum(1 for p in predictions if p.predicted == p.true_label)
    per_task_counts: dict[int, list[int]] = {}
    for p in predictions:
        assert p.true_label is not None
        t = task_of[p.true_label]
        got = per_task_counts.setdefault(t, [0, 0])
        got[0] += 1 if p.predicted == p.true_label else 0
        got[1] += 1
    per_task = {t: c / total for t, (c, total) in sorted(per_task_counts.items())}
    result = StageEval(
        stage=stage, n_test=n, n_topk_hit=hits, n_correct=correct,
        per_task_accuracy=per_task,
    )
    result.check_decomposition()
    return result


@dataclass
class TaskSeparation:
    """Mean cosine similarities diagnosing how well a task's adapter isolates
    its own samples: on-task vs off-task inputs, and right vs wrong adapter."""

    task_id: int
    on_task_mean: float
    off_task_mean: float | None
    wrong_adapter_mean: float | None


def separation_report(
    backbone: Backbone,
    registry: AdapterRegistry,
    store: DualPrototypeStore,
    test_sets_by_task: dict[int, LabeledDataset],
) -> dict[int, TaskSeparation]:
    """Per task t: mean sim of t's samples (via adapter t) to their own
    augmented prototypes; mean sim of other tasks' samples (via adapter t)
    to task t's prototypes; and mean sim of t's samples extracted with every
    other adapter to their own prototypes. Off-task statistics are ``None``
    when only one task exists."""
    store.check_consistent()
    task_ids = sorted(test_sets_by_task)
    report: dict[int, TaskSeparation] = {}
    for t in task_ids:
        own = test_sets_by_task[t]
        adapter_t = registry.get(t)
        own_classes = sorted(c for c, task in store.task_of.items() if task == t)
        protos = {c: store.aug[c] for c in own_classes}

        def mean_sim(reps: np.ndarray, labels_or_classes, paired: bool) -> float:
            sims = []
            if paired:
                for rep, class_id in zip(reps, labels_or_classes):
                    sims.append(_unit_sim(rep, protos[int(class_id)]))
            else:
                for rep in reps:
                    for class_id in labels_or_classes:
                        sims.append(_unit_sim(rep, protos[class_id]))
            return float(np.mean(sims))

        on_reps = extract(backbone, own.features, adapter_t)
        on_task = mean_sim(on_reps, own.labels, paired=True)

        off_task = None
        others = [s for s in task_ids if s != t]
        if others:
            off_feats = np.vstack([test_sets_by_task[s].features for s in others])
            off_reps = extract(backbone, off_feats, adapter_t)
            off_task = mean_sim(off_reps, own_classes, paired=False)

        wrong_adapter = None
        if others:
            sims = []
            for s in others:
                reps = extract(backbone, own.features, registry.get(s))
                for rep, class_id in zip(reps, own.labels):
                    sims.append(_unit_sim(rep, protos[int(class_id)]))
            wrong_adapter = float(np.mean(sims))

        report[t] = TaskSeparation(
            task_id=t,
            on_task_mean=on_task,
            off_task_mean=off_task,
            wrong_adapter_mean=wrong_adapter,
        )
    return report


def _unit_sim(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("zero-norm vector in similarity statistics")
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))
