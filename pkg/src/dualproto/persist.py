"""Versioned text container for weights and prototype stores.

Layout (UTF-8, LF line endings)::

    DPWEIGHTS 1
    meta <key> <value>
    tensor <name> <rows> <cols>
    <cols space-separated decimal values per line, rows lines>
    ...
    end

Values are written with ``repr`` so every float64 round-trips exactly.
Writes are atomic (temp file + rename) so partial files never appear.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import Adapter, AdapterRegistry, Backbone
from .prototypes import DualPrototypeStore

FORMAT_TAG = "DPWEIGHTS"
FORMAT_VERSION = 1


class PersistError(ValueError):
    """A weights file is malformed or has the wrong kind."""


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def save_tensors(
    path: str | Path, meta: dict[str, str], tensors: dict[str, np.ndarray]
) -> None:
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}"]
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in key or "\n" in value or " " in key:
            raise PersistError(f"meta entry {key!r} is not single-token/single-line")
        lines.append(f"meta {key} {value}")
    for name in sorted(tensors):
        arr = np.atleast_2d(np.asarray(tensors[name], dtype=np.float64))
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("end")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_tensors(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != [FORMAT_TAG, str(FORMAT_VERSION)]:
        raise PersistError(f"{path}: missing or unsupported header")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            return meta, tensors
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
            continue
        if line.startswith("tensor "):
            try:
                _, name, rows_s, cols_s = line.split(" ")
                rows, cols = int(rows_s), int(cols_s)
            except ValueError:
                raise PersistError(f"{path}: line {i + 1}: bad tensor header") from None
            block = lines[i + 1 : i + 1 + rows]
            if len(block) != rows:
                raise PersistError(f"{path}: tensor {name}: truncated data")
            try:
                arr = np.array(
                    [[float(v) for v in row.split(" ")] for row in block]
                )
            except ValueError:
                raise PersistError(f"{path}: tensor {name}: non-numeric value") from None
            if arr.shape != (rows, cols):
                raise PersistError(
                    f"{path}: tensor {name}: expected {rows}x{cols}, got {arr.shape}"
                )
            tensors[name] = arr
            i += 1 + rows
            continue
        raise PersistError(f"{path}: line {i + 1}: unrecognised line {line!r}")
    raise PersistError(f"{path}: missing 'end' terminator")


def _require_kind(meta: dict[str, str], kind: str, path) -> None:
    if meta.get("kind") != kind:
        raise PersistError(f"{path}: expected kind={kind}, got {meta.get('kind')!r}")


def save_backbone(path: str | Path, backbone: Backbone) -> None:
    tensors: dict[str, np.ndarray] = {}
    for l in range(backbone.num_blocks):
        tensors[f"block{l}.weight"] = backbone.weights[l]
        tensors[f"block{l}.bias"] = backbone.biases[l]
    meta = {
        "kind": "backbone",
        "blocks": str(backbone.num_blocks),
        "frozen": "1" if backbone.frozen else "0",
    }
    save_tensors(path, meta, tensors)


def load_backbone(path: str | Path) -> Backbone:
    meta, tensors = load_tensors(path)
    _require_kind(meta, "backbone", path)
    blocks = int(meta["blocks"])
    weights = [tensors[f"block{l}.weight"] for l in range(blocks)]
    biases = [tensors[f"block{l}.bias"].reshape(-1) for l in range(blocks)]
    backbone = Backbone(weights, biases)
    if meta.get("frozen") == "1":
        backbone.freeze()
    return backbone


def save_adapters(path: str | Path, registry: AdapterRegistry) -> None:
    meta = {"kind": "adapters", "tasks": str(len(registry))}
    tensors: dict[str, np.ndarray] = {}
    for task_id in registry.task_ids():
        adapter = registry.get(task_id)
        meta[f"adapter{task_id}.blocks"] = ",".join(str(b) for b in adapter.block_indices)
        meta[f"adapter{task_id}.bottleneck"] = str(adapter.bottleneck_dim)
        for blk in adapter.block_indices:
            tensors[f"adapter{task_id}.block{blk}.down"] = adapter.down[blk]
            tensors[f"adapter{task_id}.block{blk}.up"] = adapter.up[blk]
    save_tensors(path, meta, tensors)


def load_adapters(path: str | Path) -> AdapterRegistry:
    meta, tensors = load_tensors(path)
    _require_kind(meta, "adapters", path)
    registry = AdapterRegistry()
    for task_id in range(1, int(meta["tasks"]) + 1):
        blocks = [
            int(b) for b in meta[f"adapter{task_id}.blocks"].split(",") if b != ""
        ]
        adapter = Adapter(
            task_id=task_id,
            down={b: tensors[f"adapter{task_id}.block{b}.down"] for b in blocks},
            up={b: tensors[f"adapter{task_id}.block{b}.up"] for b in blocks},
            bottleneck_dim=int(meta[f"adapter{task_id}.bottleneck"]),
        )
        registry.add(adapter.freeze())
    return registry


def save_store(path: str | Path, store: DualPrototypeStore) -> None:
    store.check_consistent()
    meta = {"kind": "store", "classes": str(store.class_count)}
    tensors: dict[str, np.ndarray] = {}
    for class_id in store.class_ids():
        meta[f"class{class_id}.task"] = str(store.task_of[class_id])
        tensors[f"class{class_id}.raw"] = store.raw[class_id]
        tensors[f"class{class_id}.aug"] = store.aug[class_id]
    save_tensors(path, meta, tensors)


def load_store(path: str | Path) -> DualPrototypeStore:
    meta, tensors = load_tensors(path)
    _require_kind(meta, "store", path)
    store = DualPrototypeStore()
    class_ids = sorted(
        int(key[len("class") : -len(".task")])
        for key in meta
        if key.startswith("class") and key.endswith(".task")
    )
    if len(class_ids) != int(meta["classes"]):
        raise PersistError(f"{path}: class count mismatch")
    for class_id in class_ids:
        raw = tensors[f"class{class_id}.raw"].reshape(-1)
        aug = tensors[f"class{class_id}.aug"].reshape(-1)
        raw.flags.writeable = False
        aug.flags.writeable = False
        store.raw[class_id] = raw
        store.aug[class_id] = aug
        store.task_of[class_id] = int(meta[f"class{class_id}.task"])
    store.check_consistent()
    return store
