"""Experiment configuration: a JSON document with strict sections.

Unknown keys anywhere are hard errors. Example::

    {
      "dataset": {"source": "synth", "n_per_type": 100, "signal_strength": 0.8},
      "metapaths": [["AB", "BC", "CB", "BA"], ["AB", "BA"]],
      "encoders": ["GCN"],
      "encoder": {"num_layers": 2, "hidden_dim": 32},
      "train": {"alpha": 0.1, "beta": 0.05, "max_iters": 200},
      "split": {"train": 0.6, "val": 0.2, "test": 0.2, "stratified": true},
      "strategies": ["vanilla", "with-metapath", "selar"],
      "seeds": [0, 1, 2]
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bilevel import Strategy, TrainConfig
from .errors import ConfigError, SchemaError
from .gnn import ARCHS, EncoderConfig
from .metrics import SplitSpec

SOURCES = ("synth", "kg", "typed")


@dataclass
class DatasetConfig:
    source: str = "synth"
    # kg
    interactions: str | None = None
    triples: str | None = None
    add_inverse: bool = False
    # typed
    nodes: str | None = None
    edges: str | None = None
    labels: str | None = None
    # synth
    n_per_type: int = 100
    n_edge_types: int = 4
    signal_strength: float = 0.8
    feature_dim: int = 0
    avg_degree: float = 2.0
    n_primary: int = 1200

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"dataset.source must be one of {SOURCES}, got {self.source!r}")
        required = {"kg": ("interactions", "triples"), "typed": ("nodes", "edges", "labels")}.get(self.source, ())
        for key in required:
            if getattr(self, key) is None:
                raise ConfigError(f"dataset.{key} is required for source {self.source!r}")

    def check_files(self, base: Path) -> None:
        for key in ("interactions", "triples", "nodes", "edges", "labels"):
            value = getattr(self, key)
            if value is not None:
                path = resolve(base, value)
                if not path.is_file():
                    raise SchemaError(f"dataset.{key}: file not found: {path}")
                setattr(self, key, str(path))


@dataclass
class SplitConfig:
    train: float = 0.3
    val: float = 0.35
    test: float = 0.35
    stratified: bool = True

    def __post_init__(self):
        self.spec(0)

    def spec(self, seed: int) -> SplitSpec:
        return SplitSpec(self.train, self.val, self.test, seed=seed, stratified=self.stratified)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    metapaths: list[list[str]] | None = None  # None: the synthetic default set
    encoders: list[str] = field(default_factory=lambda: ["GCN"])
    encoder: dict[str, Any] = field(default_factory=dict)
    train: dict[str, Any] = field(default_factory=dict)
    split: SplitConfig = field(default_factory=SplitConfig)
    strategies: list[str] = field(default_factory=lambda: [s.value for s in Strategy])
    seeds: list[int] = field(default_factory=lambda: [0])
    aux_pos: int | None = 400

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        self.strategies = [Strategy.parse(s).value for s in self.strategies]
        for arch in self.encoders:
            if arch.upper() not in ARCHS:
                raise ConfigError(f"unknown encoder {arch!r}; choose from {ARCHS}")
        # build once so bad keys or values fail at load time
        self.encoder_config("GCN")
        self.train_config(Strategy.VANILLA, 0)

    def encoder_config(self, arch: str) -> EncoderConfig:
        return build_strict(EncoderConfig, {**self.encoder, "arch": arch}, "encoder")

    def train_config(self, strategy: Strategy | str, seed: int) -> TrainConfig:
        if "strategy" in self.train or "seed" in self.train:
            raise ConfigError("train.strategy and train.seed are set by 'strategies' and 'seeds'")
        return build_strict(TrainConfig, {**self.train, "strategy": strategy, "seed": seed}, "train")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def build_strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except Exception as exc:  # bad types or validation errors of the target type
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(data: dict, base: Path | None = None) -> ExperimentConfig:
    """Strictly parse a config dictionary; relative data paths resolve against ``base``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    data = dict(data)
    data["dataset"] = build_strict(DatasetConfig, data.get("dataset", {}), "dataset")
    data["split"] = build_strict(SplitConfig, data.get("split", {}), "split")
    if "metapaths" in data and data["metapaths"] is not None:
        mp = data["metapaths"]
        if not isinstance(mp, list) or not all(isinstance(p, list) and p for p in mp):
            raise ConfigError("metapaths must be a list of non-empty edge-type name lists")
    cfg = build_strict(ExperimentConfig, data, "config")
    cfg.dataset.check_files(base or Path.cwd())
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data, path.parent)
