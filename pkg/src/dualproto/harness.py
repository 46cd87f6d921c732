"""Experiment orchestration: the full incremental loop, baseline and
ablation arms, metric aggregation, result persistence, and embedding dumps.

Every run is a pure function of its config: the stream, the pretrained
extractor, and all training draw from substreams of the experiment seed, so
rerunning a config reproduces every metric exactly.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import BackboneConfig, ExperimentConfig
from .data import (
    LabeledDataset,
    TaskStream,
    generate_synthetic,
    load_feature_csv,
    split_base_inc,
)
from .inference import (
    Prediction,
    StageEval,
    evaluate_stage,
    separation_report,
    summarize_predictions,
)
from .model import (
    AdapterRegistry,
    Backbone,
    backbone_param_count,
    count_trainable_params,
    extract,
    forward_blocks,
    init_backbone,
    pretrain_backbone,
)
from .numerics import Rng, topk_indices
from .persist import (
    atomic_write_json,
    atomic_write_text,
    save_adapters,
    save_backbone,
    save_store,
)
from .prototypes import (
    DualPrototypeStore,
    compute_aug_prototypes,
    compute_raw_prototypes,
    ingest_task,
)
from .training import TemporaryHead, TrainConfig, adapt_task, run_training

RESULTS_FORMAT_VERSION = 1

ABLATION_ARMS = ("dpta", "adapter-ca", "adapter-ea", "simplecil", "topk-oracle")


@dataclass
class RunResult:
    method: str
    seed: int
    k: int
    stages: list[StageEval]
    task_adaption_accuracy: dict[int, float]
    trainable_params: dict[int, int]
    class_to_task: dict[int, int]
    classes_per_task: dict[int, list[int]]
    config_echo: dict
    wall_clock_seconds: float = 0.0
    separation: dict | None = None
    format_version: int = RESULTS_FORMAT_VERSION

    @property
    def average_accuracy(self) -> float:
        return float(np.mean([s.accuracy for s in self.stages]))

    @property
    def final_accuracy(self) -> float:
        return self.stages[-1].accuracy

    @property
    def average_task_adaption_accuracy(self) -> float:
        return float(np.mean(list(self.task_adaption_accuracy.values())))

    def metrics_dict(self) -> dict:
        """Everything except wall-clock timing; reruns must reproduce this."""
        return {
            "format_version": self.format_version,
            "method": self.method,
            "seed": self.seed,
            "k": self.k,
            "stages": [
                {
                    "stage": s.stage,
                    "n_test": s.n_test,
                    "n_topk_hit": s.n_topk_hit,
                    "n_correct": s.n_correct,
                    "accuracy": s.accuracy,
                    "topk_accuracy": s.topk_accuracy,
                    "conditional_accuracy": s.conditional_accuracy,
                    "per_task_accuracy": {str(t): a for t, a in s.per_task_accuracy.items()},
                }
                for s in self.stages
            ],
            "average_accuracy": self.average_accuracy,
            "final_accuracy": self.final_accuracy,
            "task_adaption_accuracy": {
                str(t): a for t, a in self.task_adaption_accuracy.items()
            },
            "average_task_adaption_accuracy": self.average_task_adaption_accuracy,
            "adaption_gap": self.average_task_adaption_accuracy - self.average_accuracy,
            "trainable_params": {str(t): p for t, p in self.trainable_params.items()},
            "class_to_task": {str(c): t for c, t in self.class_to_task.items()},
            "classes_per_task": {
                str(t): ids for t, ids in self.classes_per_task.items()
            },
            "separation": self.separation,
            "config": self.config_echo,
        }

    def to_dict(self) -> dict:
        payload = self.metrics_dict()
        payload["wall_clock_seconds"] = self.wall_clock_seconds
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "RunResult":
        stages = [
            StageEval(
                stage=s["stage"],
                n_test=s["n_test"],
                n_topk_hit=s["n_topk_hit"],
                n_correct=s["n_correct"],
                per_task_accuracy={int(t): a for t, a in s["per_task_accuracy"].items()},
            )
            for s in payload["stages"]
        ]
        return cls(
            method=payload["method"],
            seed=payload["seed"],
            k=payload["k"],
            stages=stages,
            task_adaption_accuracy={
                int(t): a for t, a in payload["task_adaption_accuracy"].items()
            },
            trainable_params={int(t): p for t, p in payload["trainable_params"].items()},
            class_to_task={int(c): t for c, t in payload["class_to_task"].items()},
            classes_per_task={
                int(t): list(ids) for t, ids in payload["classes_per_task"].items()
            },
            config_echo=payload["config"],
            wall_clock_seconds=payload.get("wall_clock_seconds", 0.0),
            separation=payload.get("separation"),
            format_version=payload["format_version"],
        )


def build_stream(cfg: ExperimentConfig) -> TaskStream:
    rng = Rng(cfg.seed).substream("data")
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic, rng)
    assert cfg.dataset is not None
    dataset = load_feature_csv(cfg.dataset.path)
    return split_base_inc(
        dataset,
        cfg.dataset.base_m,
        cfg.dataset.inc_n,
        rng,
        pretrain_fraction=cfg.dataset.pretrain_fraction,
        test_fraction=cfg.dataset.test_fraction,
    )


def _pretrain_config(backbone_cfg: BackboneConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=backbone_cfg.pretrain_epochs,
        batch_size=backbone_cfg.pretrain_batch_size,
        lr_max=backbone_cfg.pretrain_lr_max,
        lr_min=backbone_cfg.pretrain_lr_min,
        center_weight=0.0,
        seed=seed,
    )


def prepare_backbone(cfg: ExperimentConfig, stream: TaskStream) -> Backbone:
    """Pretrain on the held-out partition when one exists, else freeze a
    fresh random extractor."""
    rng = Rng(cfg.seed).substream("pretrain")
    input_dim = stream.tasks[0].train.dim
    dims = cfg.backbone.dims(input_dim)
    if stream.pretrain is None:
        return init_backbone(dims, rng.substream("backbone-init")).freeze()
    overlap = stream.pretrain.class_set & set().union(
        *(t.class_set for t in stream.tasks)
    )
    if overlap:
        raise ValueError(f"pretraining classes {sorted(overlap)} overlap the stream")
    return pretrain_backbone(
        stream.pretrain, _pretrain_config(cfg.backbone, cfg.seed), rng, dims
    )


def pretrain_only(cfg: ExperimentConfig) -> tuple[Backbone, list[float]]:
    """Pretraining as a standalone step, exposing the epoch losses.

    Uses the same substream keys as :func:`prepare_backbone`, so the frozen
    weights are bit-identical to what a full run would start from.
    """
    stream = build_stream(cfg)
    if stream.pretrain is None:
        raise ValueError("config has no pretraining partition")
    rng = Rng(cfg.seed).substream("pretrain")
    dims = cfg.backbone.dims(stream.tasks[0].train.dim)
    backbone = init_backbone(dims, rng.substream("backbone-init"))
    result = run_training(
        backbone,
        stream.pretrain,
        _pretrain_config(cfg.backbone, cfg.seed),
        rng.substream("backbone-train"),
        update_backbone=True,
    )
    return backbone.freeze(), result.epoch_losses


def train_adapters(
    cfg: ExperimentConfig, stream: TaskStream, backbone: Backbone
) -> AdapterRegistry:
    """One frozen adapter per task, drawn from the same substreams a full
    run uses (so the registry matches a run's persisted adapters)."""
    rng = Rng(cfg.seed)
    registry = AdapterRegistry()
    for t in range(1, stream.num_tasks + 1):
        outcome = adapt_task(
            backbone,
            stream.task(t).train,
            t,
            cfg.train,
            rng.substream("adapt", t),
            bottleneck_dim=cfg.backbone.bottleneck_dim,
            block_indices=cfg.backbone.adapter_blocks,
        )
        registry.add(outcome.adapter)
    return registry


# ---------------------------------------------------------------------------
# Per-arm stage loops
# ---------------------------------------------------------------------------


def _within_task_accuracy(
    backbone: Backbone,
    adapter,
    protos: dict[int, np.ndarray],
    task_test: LabeledDataset,
) -> float:
    """Accuracy on one task's test split, scoring only that task's classes."""
    ids = sorted(protos)
    rows = np.stack([protos[c] for c in ids])
    norms = np.linalg.norm(rows, axis=1)
    reps = extract(backbone, task_test.features, adapter)
    correct = 0
    for rep, label in zip(reps, task_test.labels):
        scores = np.clip((rows @ rep) / (norms * float(np.linalg.norm(rep))), -1, 1)
        if ids[topk_indices(scores, 1)[0]] == int(label):
            correct += 1
    return correct / len(task_test)


def _run_dual_prototype(cfg: ExperimentConfig, stream: TaskStream, backbone: Backbone):
    """The full per-task loop: raw prototypes, task adaption, augmented
    prototypes, ingest, then evaluation on the cumulative test set."""
    rng = Rng(cfg.seed)
    store = DualPrototypeStore()
    registry = AdapterRegistry()
    stages: list[StageEval] = []
    task_acc: dict[int, float] = {}
    params: dict[int, int] = {}

    for t in range(1, stream.num_tasks + 1):
        task = stream.task(t)
        raw = compute_raw_prototypes(backbone, task.train)
        outcome = adapt_task(
            backbone,
            task.train,
            t,
            cfg.train,
            rng.substream("adapt", t),
            bottleneck_dim=cfg.backbone.bottleneck_dim,
            block_indices=cfg.backbone.adapter_blocks,
        )
        if outcome.epoch_losses and outcome.epoch_losses[-1] > outcome.epoch_losses[0]:
            raise RuntimeError(
                f"task {t}: final epoch loss {outcome.epoch_losses[-1]:.6f} exceeds "
                f"first epoch loss {outcome.epoch_losses[0]:.6f}"
            )
        registry.add(outcome.adapter)
        aug = compute_aug_prototypes(backbone, outcome.adapter, task.train)
        ingest_task(store, t, raw, aug)

        params[t] = count_trainable_params(
            outcome.adapter,
            (backbone.feature_dim, len(task.train.classes)),
        )
        task_acc[t] = _within_task_accuracy(
            backbone, outcome.adapter, {c: aug[c] for c in aug}, task.test
        )
        stage = evaluate_stage(
            store, backbone, registry, stream.cumulative_test(t), cfg.top_k, t
        )
        stages.append(stage)

    sep = separation_report(
        backbone, registry, store,
        {t: stream.task(t).test for t in range(1, stream.num_tasks + 1)},
    )
    separation = {
        str(t): {
            "on_task_mean": s.on_task_mean,
            "off_task_mean": s.off_task_mean,
            "wrong_adapter_mean": s.wrong_adapter_mean,
        }
        for t, s in sep.items()
    }
    return stages, task_acc, params, separation, registry, store


def _run_single_extractor(cfg: ExperimentConfig, stream: TaskStream, backbone: Backbone):
    """SimpleCIL (raw prototypes), first-task adaption arms (one adapter for
    everything), and the shortlist oracle. One extractor scores all classes;
    the shortlist comes from the same scores, so the accuracy factorisation
    is preserved."""
    rng = Rng(cfg.seed)
    adapter = None
    params: dict[int, int] = {}
    if cfg.method in ("adapter-ca", "adapter-ea"):
        outcome = adapt_task(
            backbone,
            stream.task(1).train,
            1,
            cfg.train,
            rng.substream("adapt", 1),
            bottleneck_dim=cfg.backbone.bottleneck_dim,
            block_indices=cfg.backbone.adapter_blocks,
        )
        adapter = outcome.adapter
        params[1] = count_trainable_params(
            adapter, (backbone.feature_dim, len(stream.task(1).train.classes))
        )

    oracle = cfg.method == "topk-oracle"
    protos: dict[int, np.ndarray] = {}
    task_of = stream.task_of_class()
    stages: list[StageEval] = []
    task_acc: dict[int, float] = {}

    for t in range(1, stream.num_tasks + 1):
        task = stream.task(t)
        new = (
            compute_raw_prototypes(backbone, task.train)
            if adapter is None
            else compute_aug_prototypes(backbone, adapter, task.train)
        )
        protos.update(new)
        params.setdefault(t, 0)

        ids = sorted(protos)
        rows = np.stack([protos[c] for c in ids])
        norms = np.linalg.norm(rows, axis=1)
        test = stream.cumulative_test(t)
        k_eff = min(cfg.top_k, len(ids))
        predictions = []
        for i in range(len(test)):
            rep = extract(backbone, test.features[i], adapter)
            scores = np.clip(
                (rows @ rep) / (norms * float(np.linalg.norm(rep))), -1, 1
            )
            shortlist = [ids[j] for j in topk_indices(scores, k_eff)]
            true_label = int(test.labels[i])
            if oracle:
                predicted = true_label if true_label in shortlist else shortlist[0]
            else:
                predicted = shortlist[0]
            predictions.append(
                Prediction(
                    sample_id=i, topk_labels=shortlist,
                    predicted=predicted, true_label=true_label,
                )
            )
        stages.append(summarize_predictions(predictions, task_of, t))
        task_acc[t] = _within_task_accuracy(
            backbone, adapter, {c: protos[c] for c in task.train.classes}, task.test
        )

    return stages, task_acc, params, None


def _run_finetune(cfg: ExperimentConfig, stream: TaskStream, backbone: Backbone):
    """Sequential fine-tuning of the whole (unfrozen) extractor with a
    growing linear head; the catastrophic-forgetting baseline."""
    rng = Rng(cfg.seed)
    work = backbone.copy(frozen=False)
    head: TemporaryHead | None = None
    train_cfg = TrainConfig(**{**vars(cfg.train), "center_weight": 0.0})
    task_of = stream.task_of_class()
    stages: list[StageEval] = []
    task_acc: dict[int, float] = {}
    params: dict[int, int] = {}
    base_params = backbone_param_count(work)

    for t in range(1, stream.num_tasks + 1):
        task = stream.task(t)
        new_ids = sorted(task.train.class_set)
        stage_rng = rng.substream("finetune", t)
        head = (
            TemporaryHead.create(work.feature_dim, new_ids, stage_rng)
            if head is None
            else head.extend(new_ids, stage_rng)
        )
        run_training(
            work, task.train, train_cfg, stage_rng, head=head, update_backbone=True
        )
        params[t] = base_params + head.param_count()

        test = stream.cumulative_test(t)
        features = forward_blocks(work, test.features)[0]
        logits = head.logits(features)
        k_eff = min(cfg.top_k, len(head.class_ids))
        predictions = []
        for i in range(len(test)):
            shortlist = [
                head.class_ids[j] for j in topk_indices(logits[i], k_eff)
            ]
            predictions.append(
                Prediction(
                    sample_id=i, topk_labels=shortlist,
                    predicted=shortlist[0], true_label=int(test.labels[i]),
                )
            )
        stages.append(summarize_predictions(predictions, task_of, t))

        own_cols = [head.class_ids.index(c) for c in new_ids]
        own_feats = forward_blocks(work, task.test.features)[0]
        own_logits = head.logits(own_feats)[:, own_cols]
        correct = sum(
            1
            for i in range(len(task.test))
            if new_ids[topk_indices(own_logits[i], 1)[0]] == int(task.test.labels[i])
        )
        task_acc[t] = correct / len(task.test)

    return stages, task_acc, params, None


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig,
    stream: TaskStream | None = None,
    backbone: Backbone | None = None,
    write: bool = True,
) -> RunResult:
    start = time.perf_counter()
    if cfg.method == "adapter-ea" and cfg.train.center_weight != 0.0:
        # the cross-entropy-only arm: the echoed config must show weight 0
        cfg = cfg.replaced()
        cfg.train.center_weight = 0.0
    if stream is None:
        stream = build_stream(cfg)
    if backbone is None:
        backbone = prepare_backbone(cfg, stream)

    registry = None
    store = None
    if cfg.method == "dpta":
        stages, task_acc, params, separation, registry, store = _run_dual_prototype(
            cfg, stream, backbone
        )
    elif cfg.method == "finetune":
        stages, task_acc, params, separation = _run_finetune(cfg, stream, backbone)
    else:
        stages, task_acc, params, separation = _run_single_extractor(
            cfg, stream, backbone
        )

    result = RunResult(
        method=cfg.method,
        seed=cfg.seed,
        k=cfg.top_k,
        stages=stages,
        task_adaption_accuracy=task_acc,
        trainable_params=params,
        class_to_task=stream.task_of_class(),
        classes_per_task={
            t: sorted(stream.task(t).class_set) for t in range(1, stream.num_tasks + 1)
        },
        config_echo=cfg.echo(),
        separation=separation,
    )
    result.wall_clock_seconds = time.perf_counter() - start

    if write:
        out = Path(cfg.out_dir)
        atomic_write_json(out / "results.json", result.to_dict())
        atomic_write_text(out / "curves.csv", curves_csv({cfg.method: result}))
        atomic_write_text(out / "manifest.txt", stream_manifest(stream))
        save_backbone(out / "weights" / "backbone.txt", backbone)
        if registry is not None:
            save_adapters(out / "weights" / "adapters.txt", registry)
        if store is not None:
            save_store(out / "weights" / "store.txt", store)
    return result


def run_ablation_suite(cfg: ExperimentConfig, write: bool = True) -> dict[str, RunResult]:
    """All comparison arms on one bitwise-identical stream and extractor."""
    stream = build_stream(cfg)
    backbone = prepare_backbone(cfg, stream)
    results: dict[str, RunResult] = {}
    for arm in ABLATION_ARMS:
        arm_cfg = cfg.replaced(method=arm, out_dir=Path(cfg.out_dir) / arm)
        results[arm] = run_experiment(arm_cfg, stream=stream, backbone=backbone, write=write)
    if write:
        out = Path(cfg.out_dir)
        atomic_write_json(
            out / "ablation.json",
            {
                "format_version": RESULTS_FORMAT_VERSION,
                "seed": cfg.seed,
                "k": cfg.top_k,
                "arms": {
                    arm: {
                        "average_accuracy": r.average_accuracy,
                        "final_accuracy": r.final_accuracy,
                        "stage_accuracy": [s.accuracy for s in r.stages],
                    }
                    for arm, r in results.items()
                },
            },
        )
        atomic_write_text(out / "curves.csv", curves_csv(results))
    return results


def finetune_sequential(
    cfg: ExperimentConfig,
    stream: TaskStream | None = None,
    backbone: Backbone | None = None,
    write: bool = True,
) -> RunResult:
    return run_experiment(
        cfg.replaced(method="finetune"), stream=stream, backbone=backbone, write=write
    )


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def stream_manifest(stream: TaskStream) -> str:
    lines = []
    for t in range(1, stream.num_tasks + 1):
        ids = " ".join(str(c) for c in sorted(stream.task(t).class_set))
        lines.append(f"task {t}: {ids}")
    if stream.pretrain is not None:
        ids = " ".join(str(c) for c in sorted(stream.pretrain.class_set))
        lines.append(f"pretrain: {ids}")
    return "\n".join(lines) + "\n"


def curves_csv(results: dict[str, RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "method", "accuracy", "topk_accuracy", "conditional_accuracy"])
    for method, result in results.items():
        for s in result.stages:
            writer.writerow(
                [s.stage, method, repr(s.accuracy), repr(s.topk_accuracy),
                 repr(s.conditional_accuracy)]
            )
    return buf.getvalue()


def dump_embeddings(
    backbone: Backbone,
    registry: AdapterRegistry | None,
    stream: TaskStream,
    which: str,
    path: str | Path,
) -> int:
    """CSV of test-sample representations: raw extractor or each sample's
    own-task adapted extractor. Returns the number of rows written."""
    if which not in ("raw", "adapted"):
        raise ValueError(f"which must be 'raw' or 'adapted', got {which!r}")
    if which == "adapted" and registry is None:
        raise ValueError("adapted dump requires an adapter registry")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["sample_id", "task_id", "class_id"]
        + [f"f{i}" for i in range(backbone.feature_dim)]
    )
    sample_id = 0
    rows = 0
    for t in range(1, stream.num_tasks + 1):
        task = stream.task(t)
        adapter = registry.get(t) if which == "adapted" else None
        reps = extract(backbone, task.test.features, adapter)
        for label, rep in zip(task.test.labels, reps):
            writer.writerow(
                [sample_id, t, int(label)] + [repr(float(v)) for v in rep]
            )
            sample_id += 1
            rows += 1
    atomic_write_text(path, buf.getvalue())
    return rows


@dataclass
class LoadedRun:
    """Persisted artifacts of a finished run, reloaded for serving."""

    backbone: Backbone
    registry: AdapterRegistry
    store: "DualPrototypeStore"
    k: int
    method: str


def load_run(run_dir: str | Path) -> LoadedRun:
    from .persist import load_adapters, load_backbone, load_store
    import json

    run_dir = Path(run_dir)
    results_path = run_dir / "results.json"
    if not results_path.exists():
        raise FileNotFoundError(f"no results.json under {run_dir}")
    payload = json.loads(results_path.read_text())
    weights = run_dir / "weights"
    adapters_path = weights / "adapters.txt"
    store_path = weights / "store.txt"
    if not adapters_path.exists() or not store_path.exists():
        raise ValueError(
            f"run {run_dir} ({payload['method']}) did not persist adapters and "
            "a prototype store; only dual-prototype runs can serve predictions"
        )
    return LoadedRun(
        backbone=load_backbone(weights / "backbone.txt"),
        registry=load_adapters(adapters_path),
        store=load_store(store_path),
        k=int(payload["k"]),
        method=payload["method"],
    )


def load_embedding_csv(path: str | Path):
    """Re-read an embedding dump; same numeric conventions as feature CSVs."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["sample_id", "task_id", "class_id"]:
            raise ValueError(f"{path}: not an embedding dump")
        dim = len(header) - 3
        ids, tasks, labels, feats = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != dim + 3:
                raise ValueError(
                    f"{path}: line {line_no}: expected {dim + 3} columns, got {len(row)}"
                )
            ids.append(int(row[0]))
            tasks.append(int(row[1]))
            labels.append(int(row[2]))
            feats.append([float(v) for v in row[3:]])
    return (
        np.array(ids), np.array(tasks), np.array(labels), np.array(feats)
    )


def render_report(payload: dict) -> str:
    """Human-readable summary of a results.json payload."""
    lines = [
        f"method: {payload['method']}   seed: {payload['seed']}   K: {payload['k']}",
        "",
        f"{'stage':>5} {'classes':>8} {'accuracy':>9} {'topK':>7} {'cond':>7}",
    ]
    classes_per_task = payload["classes_per_task"]
    seen = 0
    for s in payload["stages"]:
        seen += len(classes_per_task[str(s["stage"])])
        lines.append(
            f"{s['stage']:>5} {seen:>8} {s['accuracy']:>9.4f} "
            f"{s['topk_accuracy']:>7.4f} {s['conditional_accuracy']:>7.4f}"
        )
    lines.append("")
    lines.append(
        f"average stage accuracy: {payload['average_accuracy']:.4f}   "
        f"final accuracy: {payload['final_accuracy']:.4f}"
    )
    task_acc = payload["task_adaption_accuracy"]
    per_task = " ".join(f"{task_acc[t]:.3f}" for t in sorted(task_acc, key=int))
    lines.append(
        f"within-task adaption accuracy: [{per_task}] "
        f"mean {payload['average_task_adaption_accuracy']:.4f} "
        f"(gap vs average: {payload['adaption_gap']:+.4f})"
    )
    total = sum(payload["trainable_params"].values())
    lines.append(f"trainable parameters: {total} across "
                 f"{len(payload['trainable_params'])} stages")
    if payload.get("separation"):
        lines.append("")
        lines.append("adapter separation (mean cosine): task  on-task  off-task  wrong-adapter")
        for t in sorted(payload["separation"], key=int):
            s = payload["separation"][t]
            off = "absent" if s["off_task_mean"] is None else f"{s['off_task_mean']:.4f}"
            wrong = (
                "absent"
                if s["wrong_adapter_mean"] is None
                else f"{s['wrong_adapter_mean']:.4f}"
            )
            lines.append(
                f"  {t:>4} {s['on_task_mean']:>8.4f} {off:>9} {wrong:>13}"
            )
    lines.append(f"wall clock: {payload.get('wall_clock_seconds', 0.0):.2f} s")
    return "\n".join(lines) + "\n"
