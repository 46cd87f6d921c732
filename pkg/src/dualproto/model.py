"""Frozen MLP feature extractor and per-task residual bottleneck adapters.

The backbone is a stack of affine blocks with ReLU after every block except
the last; its output is the representation every prototype and predictor
consumes. Adapters insert a down-project / ReLU / up-project residual on
selected block outputs and start as exact identity maps (zero up-projection).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng, ShapeMismatchError, as_matrix, as_vector, ensure_finite, relu


class FrozenStateError(RuntimeError):
    """An operation required a frozen (or unfrozen) component and got the other."""


def _freeze_array(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass
class Backbone:
    """Stack of (weight, bias) blocks; ReLU after every block except the last."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatchError("backbone needs one bias per weight block")
        if not self.weights:
            raise ShapeMismatchError("backbone needs at least one block")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = as_matrix(w)
            b = as_vector(b, length=w.shape[1])
            if l > 0 and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ShapeMismatchError(
                    f"block {l - 1} output dim {self.weights[l - 1].shape[1]} "
                    f"!= block {l} input dim {w.shape[0]}"
                )
            self.weights[l] = w
            self.biases[l] = b

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_blocks(self) -> int:
        return len(self.weights)

    def block_output_dim(self, block: int) -> int:
        return self.weights[block].shape[1]

    def freeze(self) -> "Backbone":
        for arr in self.weights + self.biases:
            _freeze_array(arr)
        self.frozen = True
        return self

    def require_frozen(self):
        if not self.frozen:
            raise FrozenStateError("operation requires a frozen backbone")

    def require_unfrozen(self):
        if self.frozen:
            raise FrozenStateError("operation would mutate a frozen backbone")

    def copy(self, frozen: bool = False) -> "Backbone":
        clone = Backbone(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )
        return clone.freeze() if frozen else clone


@dataclass
class Adapter:
    """Per-task bottleneck: one (down, up) pair per adapted block."""

    task_id: int
    down: dict[int, np.ndarray]  # block index -> (h_l x r)
    up: dict[int, np.ndarray]  # block index -> (r x h_l)
    bottleneck_dim: int
    frozen: bool = False

    def __post_init__(self):
        if set(self.down) != set(self.up):
            raise ShapeMismatchError("adapter down/up must cover the same blocks")
        for blk, w_dp in self.down.items():
            w_dp = as_matrix(w_dp)
            w_up = as_matrix(self.up[blk])
            h = w_dp.shape[0]
            r = w_dp.shape[1]
            if not 1 <= r < h:
                raise ShapeMismatchError(
                    f"bottleneck dim {r} must satisfy 1 <= r < block width {h}"
                )
            if w_up.shape != (r, h):
                raise ShapeMismatchError(
                    f"adapter block {blk}: up projection {w_up.shape} "
                    f"does not match down projection {w_dp.shape}"
                )
            self.down[blk] = w_dp
            self.up[blk] = w_up

    @property
    def block_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.down))

    def freeze(self) -> "Adapter":
        for arr in list(self.down.values()) + list(self.up.values()):
            _freeze_array(arr)
        self.frozen = True
        return self

    def require_unfrozen(self):
        if self.frozen:
            raise FrozenStateError(f"adapter for task {self.task_id} is frozen")

    def param_count(self) -> int:
        return sum(w.size for w in self.down.values()) + sum(
            w.size for w in self.up.values()
        )


class AdapterRegistry:
    """Frozen adapters keyed by task id; ids must stay contiguous from 1."""

    def __init__(self):
        self._adapters: dict[int, Adapter] = {}

    def add(self, adapter: Adapter) -> None:
        if not adapter.frozen:
            raise FrozenStateError("only frozen adapters may enter the registry")
        expected = len(self._adapters) + 1
        if adapter.task_id != expected:
            raise ValueError(
                f"registry expects task id {expected}, got {adapter.task_id}"
            )
        self._adapters[adapter.task_id] = adapter

    def get(self, task_id: int) -> Adapter:
        try:
            return self._adapters[task_id]
        except KeyError:
            raise KeyError(f"no adapter registered for task {task_id}") from None

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._adapters

    def __len__(self) -> int:
        return len(self._adapters)

    def task_ids(self) -> list[int]:
        return sorted(self._adapters)


def adapter_forward(z: np.ndarray, w_down: np.ndarray, w_up: np.ndarray) -> np.ndarray:
    """Residual bottleneck map z + relu(z @ down) @ up.

    Accepts a single vector or a batch of row vectors.
    """
    w_down = as_matrix(w_down)
    w_up = as_matrix(w_up)
    arr = np.asarray(z, dtype=np.float64)
    width = arr.shape[-1]
    if width != w_down.shape[0] or w_up.shape[1] != width:
        raise ShapeMismatchError(
            f"adapter_forward: input width {width} vs down {w_down.shape} "
            f"and up {w_up.shape}"
        )
    return arr + relu(arr @ w_down) @ w_up


@dataclass
class ForwardCache:
    """Intermediate activations needed to backpropagate through the blocks."""

    block_inputs: list[np.ndarray]  # z_l fed into block l
    preacts: list[np.ndarray]  # affine outputs a_l before ReLU
    adapter_base: dict[int, np.ndarray]  # block output h_l entering the residual
    adapter_pre: dict[int, np.ndarray]  # bottleneck pre-activation h_l @ down
    features: np.ndarray


def forward_blocks(
    backbone: Backbone,
    x: np.ndarray,
    adapter: Adapter | None = None,
    keep_cache: bool = False,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Single forward implementation shared by extraction and training."""
    z = x
    last = backbone.num_blocks - 1
    block_inputs: list[np.ndarray] = []
    preacts: list[np.ndarray] = []
    adapter_base: dict[int, np.ndarray] = {}
    adapter_pre: dict[int, np.ndarray] = {}
    for l, (w, b) in enumerate(zip(backbone.weights, backbone.biases)):
        if keep_cache:
            block_inputs.append(z)
        a = z @ w + b
        if keep_cache:
            preacts.append(a)
        h = relu(a) if l < last else a
        if adapter is not None and l in adapter.down:
            u = h @ adapter.down[l]
            if keep_cache:
                adapter_base[l] = h
                adapter_pre[l] = u
            z = h + relu(u) @ adapter.up[l]
        else:
            z = h
    if not keep_cache:
        return z, None
    return z, ForwardCache(block_inputs, preacts, adapter_base, adapter_pre, z)


def _forward(backbone: Backbone, x: np.ndarray, adapter: Adapter | None) -> np.ndarray:
    features, _ = forward_blocks(backbone, x, adapter)
    return features


def extract(backbone: Backbone, x, adapter: Adapter | None = None) -> np.ndarray:
    """Representation of one sample (1-D) or a batch of samples (2-D rows)."""
    backbone.require_frozen()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ShapeMismatchError(f"extract: input must be 1-D or 2-D, got {arr.ndim}-D")
    if arr.shape[-1] != backbone.input_dim:
        raise ShapeMismatchError(
            f"extract: input dim {arr.shape[-1]} != backbone input dim "
            f"{backbone.input_dim}"
        )
    if adapter is not None:
        for blk in adapter.down:
            if not 0 <= blk < backbone.num_blocks:
                raise ShapeMismatchError(f"adapter references missing block {blk}")
            if adapter.down[blk].shape[0] != backbone.block_output_dim(blk):
                raise ShapeMismatchError(
                    f"adapter block {blk} width {adapter.down[blk].shape[0]} "
                    f"!= backbone block width {backbone.block_output_dim(blk)}"
                )
    return ensure_finite("extracted representation", _forward(backbone, arr, adapter))


def init_backbone(dims: list[int], rng: Rng) -> Backbone:
    """Unfrozen backbone with fan-in-scaled uniform weights and zero biases."""
    if len(dims) < 2:
        raise ShapeMismatchError("backbone needs at least input and feature dims")
    weights = []
    biases = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = float(np.sqrt(6.0 / d_in))
        weights.append(rng.uniform_array((d_in, d_out), -bound, bound))
        biases.append(np.zeros(d_out))
    return Backbone(weights, biases)


def default_adapter_blocks(backbone: Backbone) -> tuple[int, ...]:
    """All block outputs except the final feature layer."""
    return tuple(range(backbone.num_blocks - 1))


def init_adapter(
    task_id: int,
    backbone: Backbone,
    bottleneck_dim: int,
    rng: Rng,
    block_indices: tuple[int, ...] | None = None,
) -> Adapter:
    """Fresh adapter: fan-in-scaled down projection, zero up projection.

    The zero up projection makes a fresh adapter an exact identity, so
    training starts from the frozen extractor's behaviour.
    """
    backbone.require_frozen()
    if block_indices is None:
        block_indices = default_adapter_blocks(backbone)
    down = {}
    up = {}
    for blk in sorted(block_indices):
        h = backbone.block_output_dim(blk)
        bound = float(np.sqrt(6.0 / h))
        down[blk] = rng.uniform_array((h, bottleneck_dim), -bound, bound)
        up[blk] = np.zeros((bottleneck_dim, h))
    return Adapter(task_id=task_id, down=down, up=up, bottleneck_dim=bottleneck_dim)


def count_trainable_params(
    adapter: Adapter | None, head_dims: tuple[int, int] | None = None
) -> int:
    """Adapter entries plus temporary-head entries (weight and bias)."""
    total = adapter.param_count() if adapter is not None else 0
    if head_dims is not None:
        h, m = head_dims
        total += h * m + m
    return total


def backbone_param_count(backbone: Backbone) -> int:
    return sum(w.size for w in backbone.weights) + sum(b.size for b in backbone.biases)


def pretrain_backbone(pretrain_set, cfg, rng: Rng, dims: list[int]) -> Backbone:
    """Train a fresh backbone on held-out classes, then freeze it.

    A temporary softmax head over the pretraining classes provides the
    cross-entropy signal and is discarded; only the frozen extractor
    survives into the incremental phase.
    """
    from .training import run_training  # late import; training depends on model

    if len(pretrain_set) == 0:
        raise ValueError("pretrain_backbone: empty pretraining set")
    if dims[0] != pretrain_set.features.shape[1]:
        raise ShapeMismatchError(
            f"backbone input dim {dims[0]} != data dim {pretrain_set.features.shape[1]}"
        )
    backbone = init_backbone(dims, rng.substream("backbone-init"))
    result = run_training(
        backbone,
        pretrain_set,
        cfg,
        rng.substream("backbone-train"),
        update_backbone=True,
    )
    losses = result.epoch_losses
    if len(losses) >= 2 and losses[-1] >= losses[0]:
        raise RuntimeError(
            f"pretraining failed to reduce the loss ({losses[0]:.6f} -> {losses[-1]:.6f})"
        )
    return backbone.freeze()
