"""Center loss, the combined center-adapt objective with hand-derived
gradients, dynamic class centers, and the per-task adaption loop.

The objective is mean cross-entropy plus a weighted center term
``0.5 * sum_i |rep_i - c_{y_i}|^2`` that pulls each representation toward a
dynamically updated center of its class. All gradients are analytic; the
finite-difference oracle in :mod:`dualproto.numerics` is the independent
check (see :func:`gradient_check`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .model import (
    Adapter,
    Backbone,
    ForwardCache,
    forward_blocks,
    init_adapter,
)
from .numerics import Rng, ShapeMismatchError, log_softmax, softmax


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_max: float = 0.01
    lr_min: float = 1e-5
    center_weight: float = 1e-4
    center_update_rate: float = 0.5
    momentum: float = 0.9
    seed: int = 1993

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.center_weight < 0:
            raise ValueError("center_weight must be non-negative")
        if not 0 < self.center_update_rate <= 1:
            raise ValueError("center_update_rate must lie in (0, 1]")


class ClassCenters:
    """Per-class center vectors, updated with the mini-batch rule
    ``c_j <- c_j - rate * sum_{y_i=j}(c_j - rep_i) / (1 + count_j)``."""

    def __init__(self, centers: dict[int, np.ndarray]):
        self.centers = {int(k): np.asarray(v, dtype=np.float64) for k, v in centers.items()}

    @classmethod
    def from_representations(cls, reps: np.ndarray, labels) -> "ClassCenters":
        labels = np.asarray(labels)
        return cls(
            {int(c): reps[labels == c].mean(axis=0) for c in np.unique(labels)}
        )

    def get(self, class_id: int) -> np.ndarray:
        try:
            return self.centers[int(class_id)]
        except KeyError:
            raise KeyError(f"no center for class {class_id}") from None

    def class_ids(self) -> list[int]:
        return sorted(self.centers)

    def stack(self, labels) -> np.ndarray:
        return np.stack([self.get(c) for c in np.asarray(labels)])


def center_loss(reps: np.ndarray, labels, centers: ClassCenters) -> float:
    """0.5 * sum of squared distances from each row to its class center."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.shape[0] != len(labels):
        raise ShapeMismatchError("center_loss: one label per representation row")
    diff = reps - centers.stack(labels)
    return 0.5 * float(np.sum(diff * diff))


def update_centers(centers: ClassCenters, reps: np.ndarray, labels, rate: float) -> None:
    """In-place center update; classes absent from the batch are untouched."""
    if not 0 < rate <= 1:
        raise ValueError("center update rate must lie in (0, 1]")
    labels = np.asarray(labels)
    for class_id in np.unique(labels):
        mask = labels == class_id
        count = int(mask.sum())
        c = centers.get(int(class_id))
        delta = ((c - reps[mask]).sum(axis=0)) / (1.0 + count)
        centers.centers[int(class_id)] = c - rate * delta


def cross_entropy(logits: np.ndarray, label_cols) -> float:
    """Mean negative log-likelihood of the true columns under softmax."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    rows = np.arange(logp.shape[0])
    return -float(logp[rows, np.asarray(label_cols)].mean())


def center_adapt_loss(
    logits: np.ndarray,
    reps: np.ndarray,
    labels,
    centers: ClassCenters,
    center_weight: float,
    class_ids: list[int] | None = None,
) -> float:
    """Cross-entropy over ``class_ids`` columns plus weighted center loss."""
    if class_ids is None:
        class_ids = centers.class_ids()
    col = {c: i for i, c in enumerate(class_ids)}
    label_cols = [col[int(c)] for c in np.asarray(labels)]
    ce = cross_entropy(logits, label_cols)
    if center_weight == 0.0:
        return ce
    return ce + center_weight * center_loss(reps, labels, centers)


def cosine_annealed_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be at least 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TemporaryHead:
    """Linear output layer over an explicit class-id ordering; never persisted."""

    weight: np.ndarray  # feature_dim x num_classes
    bias: np.ndarray  # num_classes
    class_ids: tuple[int, ...]

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.shape[1] != len(self.class_ids) or self.bias.shape != (
            self.weight.shape[1],
        ):
            raise ShapeMismatchError("head shape does not match its class list")

    @classmethod
    def create(cls, feature_dim: int, class_ids, rng: Rng) -> "TemporaryHead":
        ids = tuple(int(c) for c in class_ids)
        bound = math.sqrt(6.0 / feature_dim)
        return cls(
            weight=rng.uniform_array((feature_dim, len(ids)), -bound, bound),
            bias=np.zeros(len(ids)),
            class_ids=ids,
        )

    def extend(self, new_class_ids, rng: Rng) -> "TemporaryHead":
        """Head with columns appended for new classes; old columns kept."""
        ids = tuple(int(c) for c in new_class_ids)
        overlap = set(ids) & set(self.class_ids)
        if overlap:
            raise ValueError(f"head already covers classes {sorted(overlap)}")
        bound = math.sqrt(6.0 / self.weight.shape[0])
        extra = rng.uniform_array((self.weight.shape[0], len(ids)), -bound, bound)
        return TemporaryHead(
            weight=np.hstack([self.weight, extra]),
            bias=np.concatenate([self.bias, np.zeros(len(ids))]),
            class_ids=self.class_ids + ids,
        )

    def columns_for(self, labels) -> np.ndarray:
        col = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([col[int(c)] for c in np.asarray(labels)], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"head has no column for class {exc.args[0]}") from None

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight + self.bias

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class Gradients:
    """Analytic gradients of the center-adapt loss for one batch."""

    head_weight: np.ndarray
    head_bias: np.ndarray
    adapter_down: dict[int, np.ndarray]
    adapter_up: dict[int, np.ndarray]
    block_weights: list[np.ndarray]
    block_biases: list[np.ndarray]


def network_gradients(
    backbone: Backbone,
    adapter: Adapter | None,
    head: TemporaryHead,
    batch: np.ndarray,
    labels,
    centers: ClassCenters | None,
    center_weight: float,
) -> tuple[float, Gradients]:
    """Loss value and exact gradients via the chain rule through the residual
    bottlenecks and the (possibly frozen) blocks.

    Block gradients are always produced; whether they are applied is the
    caller's decision (they never are while the backbone is frozen).
    """
    batch = np.asarray(batch, dtype=np.float64)
    features, cache = forward_blocks(backbone, batch, adapter, keep_cache=True)
    assert cache is not None
    m = batch.shape[0]
    logits = head.logits(features)
    cols = head.columns_for(labels)

    probs = softmax(logits)
    loss = cross_entropy(logits, cols)

    d_logits = probs.copy()
    d_logits[np.arange(m), cols] -= 1.0
    d_logits /= m

    grad_head_w = features.T @ d_logits
    grad_head_b = d_logits.sum(axis=0)
    d_features = d_logits @ head.weight.T

    if center_weight != 0.0:
        if centers is None:
            raise ValueError("center_weight > 0 requires class centers")
        diff = features - centers.stack(labels)
        loss += center_weight * 0.5 * float(np.sum(diff * diff))
        d_features = d_features + center_weight * diff

    grad_down: dict[int, np.ndarray] = {}
    grad_up: dict[int, np.ndarray] = {}
    grad_w: list[np.ndarray] = [np.empty(0)] * backbone.num_blocks
    grad_b: list[np.ndarray] = [np.empty(0)] * backbone.num_blocks

    dz = d_features
    last = backbone.num_blocks - 1
    for l in range(last, -1, -1):
        if adapter is not None and l in adapter.down:
            u = cache.adapter_pre[l]
            base = cache.adapter_base[l]
            grad_up[l] = np.maximum(u, 0.0).T @ dz
            du = (dz @ adapter.up[l].T) * (u > 0)
            grad_down[l] = base.T @ du
            dh = dz + du @ adapter.down[l].T
        else:
            dh = dz
        da = dh * (cache.preacts[l] > 0) if l < last else dh
        grad_w[l] = cache.block_inputs[l].T @ da
        grad_b[l] = da.sum(axis=0)
        dz = da @ backbone.weights[l].T

    grads = Gradients(
        head_weight=grad_head_w,
        head_bias=grad_head_b,
        adapter_down=grad_down,
        adapter_up=grad_up,
        block_weights=grad_w,
        block_biases=grad_b,
    )
    return loss, grads


class _MomentumSgd:
    """Classic momentum: v <- beta*v + g, param <- param - lr*v."""

    def __init__(self, beta: float):
        self.beta = beta
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        v = self._velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        v = self.beta * v + grad
        self._velocity[name] = v
        param -= lr * v


@dataclass
class TrainResult:
    epoch_losses: list[float]
    head: TemporaryHead
    centers: ClassCenters | None
    steps: int


def run_training(
    backbone: Backbone,
    dataset: LabeledDataset,
    cfg: TrainConfig,
    rng: Rng,
    *,
    adapter: Adapter | None = None,
    head: TemporaryHead | None = None,
    centers: ClassCenters | None = None,
    update_backbone: bool = False,
) -> TrainResult:
    """Shared mini-batch SGD loop with cosine-annealed learning rate.

    Trains the head, the adapter when given, and the backbone blocks when
    ``update_backbone`` is set. Class centers, when given, are refreshed
    from each batch's representations after the parameter step.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if update_backbone:
        backbone.require_unfrozen()
    else:
        backbone.require_frozen()
    if adapter is not None:
        adapter.require_unfrozen()

    if head is None:
        head = TemporaryHead.create(backbone.feature_dim, dataset.classes, rng)

    n = len(dataset)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    opt = _MomentumSgd(cfg.momentum)
    epoch_losses: list[float] = []
    step = 0

    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = dataset.features[idx]
            labels = dataset.labels[idx]
            loss, grads = network_gradients(
                backbone, adapter, head, batch, labels, centers, cfg.center_weight
            )
            lr = cosine_annealed_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
            opt.step("head.w", head.weight, grads.head_weight, lr)
            opt.step("head.b", head.bias, grads.head_bias, lr)
            if adapter is not None:
                for blk in adapter.down:
                    opt.step(f"adapter.{blk}.down", adapter.down[blk], grads.adapter_down[blk], lr)
                    opt.step(f"adapter.{blk}.up", adapter.up[blk], grads.adapter_up[blk], lr)
            if update_backbone:
                for l in range(backbone.num_blocks):
                    opt.step(f"block.{l}.w", backbone.weights[l], grads.block_weights[l], lr)
                    opt.step(f"block.{l}.b", backbone.biases[l], grads.block_biases[l], lr)
            if centers is not None:
                reps = forward_blocks(backbone, batch, adapter)[0]
                update_centers(centers, reps, labels, cfg.center_update_rate)
            batch_losses.append(loss)
            step += 1
        epoch_losses.append(float(np.mean(batch_losses)))

    return TrainResult(epoch_losses=epoch_losses, head=head, centers=centers, steps=step)


@dataclass
class AdaptResult:
    adapter: Adapter
    epoch_losses: list[float]
    steps: int
    head_param_count: int


def adapt_task(
    backbone: Backbone,
    dataset: LabeledDataset,
    task_id: int,
    cfg: TrainConfig,
    rng: Rng,
    bottleneck_dim: int = 8,
    block_indices: tuple[int, ...] | None = None,
) -> AdaptResult:
    """Fine-tune a fresh adapter on one task under the center-adapt loss.

    Centers start at the per-class means of the initial (identity-adapter)
    representations and persist across epochs within the task. The
    temporary head is dropped on return; only the frozen adapter survives.
    """
    backbone.require_frozen()
    if len(dataset) == 0:
        raise ValueError(f"task {task_id}: empty training set")
    adapter = init_adapter(task_id, backbone, bottleneck_dim, rng, block_indices)
    initial_reps = forward_blocks(backbone, dataset.features, adapter)[0]
    centers = ClassCenters.from_representations(initial_reps, dataset.labels)
    result = run_training(
        backbone, dataset, cfg, rng, adapter=adapter, centers=centers
    )
    adapter.freeze()
    return AdaptResult(
        adapter=adapter,
        epoch_losses=result.epoch_losses,
        steps=result.steps,
        head_param_count=result.head.param_count(),
    )


def intra_class_spread(
    backbone: Backbone, adapter: Adapter | None, dataset: LabeledDataset
) -> float:
    """Mean distance of each representation to its class's mean representation."""
    reps = forward_blocks(backbone, dataset.features, adapter)[0]
    total = 0.0
    for class_id in dataset.classes:
        rows = reps[dataset.labels == class_id]
        total += float(np.linalg.norm(rows - rows.mean(axis=0), axis=1).sum())
    return total / len(dataset)


# ---------------------------------------------------------------------------
# Gradient verification harness
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    trials: int
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    den = max(1e-4, float(np.max(np.abs(analytic))) if analytic.size else 0.0,
              float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    return num / den


def gradient_check(
    trials: int = 100,
    eps: float = 1e-5,
    tolerance: float = 1e-5,
    seed: int = 1993,
) -> GradCheckReport:
    """Compare every analytic gradient against central finite differences on
    random small network/loss configurations."""
    from .numerics import finite_diff_grad

    rng = Rng(seed, stream=77)
    worst = 0.0
    for trial in range(trials):
        r = rng.substream("gradcheck", trial)
        n_blocks = 2 + r.randbelow(2)
        dims = [2 + r.randbelow(4) for _ in range(n_blocks + 1)]
        dims = [max(d, 3) for d in dims]
        backbone = Backbone(
            weights=[r.normal_array((dims[i], dims[i + 1]), sigma=0.7) for i in range(n_blocks)],
            biases=[r.normal_array(dims[i + 1], sigma=0.3) for i in range(n_blocks)],
        )
        bott = 1 + r.randbelow(min(dims[1:-1]) - 1) if min(dims[1:-1]) > 1 else 1
        adapter = Adapter(
            task_id=1,
            down={l: r.normal_array((dims[l + 1], bott), sigma=0.7) for l in range(n_blocks - 1)},
            up={l: r.normal_array((bott, dims[l + 1]), sigma=0.7) for l in range(n_blocks - 1)},
            bottleneck_dim=bott,
        )
        m_classes = 2 + r.randbelow(3)
        head = TemporaryHead(
            weight=r.normal_array((dims[-1], m_classes), sigma=0.7),
            bias=r.normal_array(m_classes, sigma=0.3),
            class_ids=tuple(range(m_classes)),
        )
        batch_size = 2 + r.randbelow(5)
        batch = r.normal_array((batch_size, dims[0]))
        labels = np.array([r.randbelow(m_classes) for _ in range(batch_size)])
        centers = ClassCenters(
            {c: r.normal_array(dims[-1]) for c in range(m_classes)}
        )
        weight = [0.0, 1e-4, 1e-2, 0.3][r.randbelow(4)]

        def loss_fn() -> float:
            features, _ = forward_blocks(backbone, batch, adapter)
            return center_adapt_loss(
                head.logits(features), features, labels, centers, weight,
                class_ids=list(head.class_ids),
            )

        _, grads = network_gradients(
            backbone, adapter, head, batch, labels, centers, weight
        )
        checks: list[tuple[np.ndarray, np.ndarray]] = [
            (grads.head_weight, head.weight),
            (grads.head_bias, head.bias),
        ]
        for blk in adapter.down:
            checks.append((grads.adapter_down[blk], adapter.down[blk]))
            checks.append((grads.adapter_up[blk], adapter.up[blk]))
        for l in range(n_blocks):
            checks.append((grads.block_weights[l], backbone.weights[l]))
            checks.append((grads.block_biases[l], backbone.biases[l]))
        for analytic, param in checks:
            numeric = finite_diff_grad(lambda _arr: loss_fn(), param, eps)
            worst = max(worst, _relative_error(analytic, numeric))

    report = GradCheckReport(trials=trials, max_relative_error=worst, tolerance=tolerance)
    return report
