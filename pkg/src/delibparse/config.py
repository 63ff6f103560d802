"""Declarative run configuration, serialized as a sectioned key=value file.

A run directory always receives a copy of the fully resolved
configuration, so any output can be regenerated byte-for-byte by pointing
the same command at that file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig
from .training import SpecAugmentPolicy, TrainConfig


@dataclass
class CorpusConfig:
    n_train: int = 2000
    n_valid: int = 400
    n_test: int = 400
    compositional_fraction: float = 0.3
    feat_dim: int = 16


@dataclass
class ChannelConfig:
    train_channel: str = "natural"
    wer: float = 0.20
    tier: int = 1


@dataclass
class MatrixConfig:
    tiers: tuple = (1,)
    modalities: tuple = ("text", "fusion", "audio")
    strategies: tuple = ("hyp", "ref", "union")
    channels: tuple = ("natural",)
    seeds: tuple = (0, 1, 2)
    tier1_wer: float = 0.20
    tier2_wer: float = 0.35


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    target_pieces: int = 160
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    matrix: MatrixConfig = field(default_factory=MatrixConfig)


def _coerce(current, raw: str):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if current and isinstance(current[0], int):
            return tuple(int(x) for x in items)
        return tuple(items)
    return raw


def _read_section(obj, section) -> dict:
    kw = {}
    for f in fields(obj):
        if f.name not in section:
            continue
        raw = section[f.name]
        current = getattr(obj, f.name)
        if f.name == "stop_em":
            kw[f.name] = float(raw) if raw else None
        else:
            kw[f.name] = _coerce(current, raw)
    return kw


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def save_config(cfg: RunConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {
        "seed": str(cfg.seed),
        "jobs": str(cfg.jobs),
        "target_pieces": str(cfg.target_pieces),
    }
    cp["corpus"] = {f.name: _fmt(getattr(cfg.corpus, f.name))
                    for f in fields(cfg.corpus)}
    cp["channel"] = {f.name: _fmt(getattr(cfg.channel, f.name))
                     for f in fields(cfg.channel)}
    cp["model"] = {f.name: _fmt(getattr(cfg.model, f.name))
                   for f in fields(cfg.model)}
    train = {f.name: _fmt(getattr(cfg.train, f.name))
             for f in fields(cfg.train) if f.name != "augment"}
    train.update({f.name: _fmt(getattr(cfg.train.augment, f.name))
                  for f in fields(cfg.train.augment)})
    cp["train"] = train
    cp["matrix"] = {f.name: _fmt(getattr(cfg.matrix, f.name))
                    for f in fields(cfg.matrix)}
    with open(path, "w", encoding="utf-8") as f:
        cp.write(f)


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    with open(path, encoding="utf-8") as f:
        cp.read_file(f)
    cfg = RunConfig()
    if cp.has_section("run"):
        s = cp["run"]
        cfg.seed = int(s.get("seed", cfg.seed))
        cfg.jobs = int(s.get("jobs", cfg.jobs))
        cfg.target_pieces = int(s.get("target_pieces", cfg.target_pieces))
    if cp.has_section("corpus"):
        cfg.corpus = replace(cfg.corpus, **_read_section(cfg.corpus, cp["corpus"]))
    if cp.has_section("channel"):
        cfg.channel = replace(cfg.channel, **_read_section(cfg.channel, cp["channel"]))
    if cp.has_section("model"):
        cfg.model = replace(cfg.model, **_read_section(cfg.model, cp["model"]))
    if cp.has_section("train"):
        section = cp["train"]
        cfg.train = replace(cfg.train, **_read_section(cfg.train, section))
        aug_kw = _read_section(cfg.train.augment, section)
        if aug_kw:
            cfg.train = replace(cfg.train, augment=replace(cfg.train.augment, **aug_kw))
    if cp.has_section("matrix"):
        cfg.matrix = replace(cfg.matrix, **_read_section(cfg.matrix, cp["matrix"]))
    return cfg


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.ini"
    save_config(cfg, path)
    return path
