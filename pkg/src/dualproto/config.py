"""Experiment configuration: flat key=value sections, every default echoed
back into the results file for provenance.

Sections: ``[experiment]`` (method, k, seed, out), ``[train]``,
``[backbone]``, and exactly one of ``[synthetic]`` or ``[dataset]``.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """The experiment config file is malformed or inconsistent."""


METHODS = ("dpta", "simplecil", "adapter-ca", "adapter-ea", "finetune", "topk-oracle")

_METHOD_ALIASES = {
    "dpta": "dpta",
    "simplecil": "simplecil",
    "simplecil-raw-ncm": "simplecil",
    "raw-ncm": "simplecil",
    "adapter-ca": "adapter-ca",
    "adapter-ea": "adapter-ea",
    "finetune": "finetune",
    "finetune-sequential": "finetune",
    "topk-oracle": "topk-oracle",
    "top-k-oracle": "topk-oracle",
}


def normalize_method(name: str) -> str:
    canonical = _METHOD_ALIASES.get(name.strip().lower())
    if canonical is None:
        raise ConfigError(
            f"unknown method {name!r}; expected one of {', '.join(sorted(set(_METHOD_ALIASES)))}"
        )
    return canonical


@dataclass
class BackboneConfig:
    hidden_dims: tuple[int, ...] = (64, 64)
    feature_dim: int = 32
    bottleneck_dim: int = 8
    adapter_blocks: tuple[int, ...] | None = None  # default: all but the last
    pretrain_epochs: int = 10
    pretrain_batch_size: int = 32
    pretrain_lr_max: float = 0.02
    pretrain_lr_min: float = 1e-4

    def dims(self, input_dim: int) -> list[int]:
        return [input_dim, *self.hidden_dims, self.feature_dim]


@dataclass
class DatasetConfig:
    path: Path
    inc_n: int
    base_m: int = 0
    pretrain_fraction: float = 0.0
    test_fraction: float = 0.25


@dataclass
class ExperimentConfig:
    method: str = "dpta"
    top_k: int = 5
    seed: int = 1993
    out_dir: Path = Path("runs/default")
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    dataset: DatasetConfig | None = None

    def __post_init__(self):
        self.method = normalize_method(self.method)
        if self.top_k < 1:
            raise ConfigError("k must be at least 1")
        if (self.synthetic is None) == (self.dataset is None):
            raise ConfigError("configure exactly one of [synthetic] or [dataset]")
        self.out_dir = Path(self.out_dir)

    def replaced(self, method=None, top_k=None, seed=None, out_dir=None) -> "ExperimentConfig":
        cfg = ExperimentConfig(
            method=method if method is not None else self.method,
            top_k=top_k if top_k is not None else self.top_k,
            seed=seed if seed is not None else self.seed,
            out_dir=out_dir if out_dir is not None else self.out_dir,
            train=TrainConfig(**vars(self.train)),
            backbone=BackboneConfig(**vars(self.backbone)),
            synthetic=SyntheticSpec(**vars(self.synthetic)) if self.synthetic else None,
            dataset=DatasetConfig(**vars(self.dataset)) if self.dataset else None,
        )
        if seed is not None:
            cfg.train.seed = seed
        return cfg

    def echo(self) -> dict:
        """Every effective setting, defaults included, for the results file."""
        payload = {
            "experiment": {
                "method": self.method,
                "k": self.top_k,
                "seed": self.seed,
                "out": str(self.out_dir),
            },
            "train": {f.name: getattr(self.train, f.name) for f in fields(self.train)},
            "backbone": {
                f.name: _echo_value(getattr(self.backbone, f.name))
                for f in fields(self.backbone)
            },
        }
        if self.synthetic is not None:
            payload["synthetic"] = {
                f.name: getattr(self.synthetic, f.name) for f in fields(self.synthetic)
            }
        if self.dataset is not None:
            payload["dataset"] = {
                f.name: _echo_value(getattr(self.dataset, f.name))
                for f in fields(self.dataset)
            }
        return payload


def _echo_value(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    return value


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _convert(section: str, key: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            return _BOOL[raw.lower()]
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type == "int_tuple":
            if raw == "":
                return ()
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


_TRAIN_TYPES = {
    "epochs": int, "batch_size": int, "lr_max": float, "lr_min": float,
    "center_weight": float, "center_update_rate": float, "momentum": float,
    "seed": int,
}
_BACKBONE_TYPES = {
    "hidden_dims": "int_tuple", "feature_dim": int, "bottleneck_dim": int,
    "adapter_blocks": "int_tuple", "pretrain_epochs": int,
    "pretrain_batch_size": int, "pretrain_lr_max": float, "pretrain_lr_min": float,
}
_SYNTHETIC_TYPES = {
    "num_tasks": int, "classes_per_task": int, "train_per_class": int,
    "test_per_class": int, "input_dim": int, "noise_scale": float,
    "task_noise_scale": float, "task_subspace_dim": int,
    "twin_offset_scale": float, "translation_scale": float,
    "min_separation": float, "anchor_radius": float, "pretrain_classes": int,
    "twins": bool,
}
_DATASET_TYPES = {
    "path": str, "base_m": int, "inc_n": int,
    "pretrain_fraction": float, "test_fraction": float,
}
_EXPERIMENT_KEYS = {"method", "k", "seed", "out"}


def _parse_section(parser, section: str, types: dict) -> dict:
    values = {}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        if key not in types:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        values[key] = _convert(section, key, raw, types[key])
    return values


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    known = {"experiment", "train", "backbone", "synthetic", "dataset"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    exp: dict = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"[experiment] unknown key {key!r}")
            exp[key] = raw.strip()

    train_kwargs = _parse_section(parser, "train", _TRAIN_TYPES)
    backbone_kwargs = _parse_section(parser, "backbone", _BACKBONE_TYPES)
    synthetic_kwargs = _parse_section(parser, "synthetic", _SYNTHETIC_TYPES)
    dataset_kwargs = _parse_section(parser, "dataset", _DATASET_TYPES)

    if backbone_kwargs.get("adapter_blocks") == ():
        backbone_kwargs["adapter_blocks"] = None

    seed = int(exp.get("seed", 1993))
    train_kwargs.setdefault("seed", seed)

    synthetic = None
    dataset = None
    if parser.has_section("dataset"):
        if "path" not in dataset_kwargs or "inc_n" not in dataset_kwargs:
            raise ConfigError("[dataset] requires 'path' and 'inc_n'")
        dataset_kwargs["path"] = Path(dataset_kwargs["path"])
        dataset = DatasetConfig(**dataset_kwargs)
    else:
        synthetic = SyntheticSpec(**synthetic_kwargs)

    try:
        return ExperimentConfig(
            method=exp.get("method", "dpta"),
            top_k=int(exp.get("k", 5)),
            seed=seed,
            out_dir=Path(exp.get("out", "runs/default")),
            train=TrainConfig(**train_kwargs),
            backbone=BackboneConfig(**backbone_kwargs),
            synthetic=synthetic,
            dataset=dataset,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
