"""Experiment configuration: one JSON document + dotted CLI overrides.

Sections: "model", "train", "transfer", "data", plus top-level "seed" and
"out". Command-line flags spelled --model.d, --train.lr, --transfer.method,
--data.path, --seed, --out override individual fields. Model geometry
(feature count, segments, feedback) comes from the dataset manifest and is
cross-checked against any explicit model settings before training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DomainDataset, ingest_jsonl, load_manifest, normalize, split
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig
from .transfer import AnnealSettings, DrrSettings, TransferPlan

_SECTIONS = ("model", "train", "transfer", "data")


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    @classmethod
    def load(cls, path=None, overrides=None) -> "ExperimentConfig":
        doc = {}
        if path:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        cfg = cls(
            model=dict(doc.get("model", {})),
            train=dict(doc.get("train", {})),
            transfer=dict(doc.get("transfer", {})),
            data=dict(doc.get("data", {})),
            seed=int(doc.get("seed", 0)),
            out=doc.get("out"),
        )
        for key, value in (overrides or {}).items():
            cfg.set_dotted(key, value)
        return cfg

    def set_dotted(self, key: str, value) -> None:
        if key == "seed":
            self.seed = int(value)
            return
        if key == "out":
            self.out = str(value)
            return
        head, _, rest = key.partition(".")
        if head not in _SECTIONS or not rest:
            raise ConfigError(f"unknown config override {key!r}")
        getattr(self, head)[rest] = value

    # -- builders ----------------------------------------------------------------

    def model_config(self, dataset: DomainDataset) -> ModelConfig:
        derived = {
            "n_features": dataset.n_features,
            "i_end": dataset.i_end,
            "h_end": dataset.h_end,
            "feedback": dataset.feedback,
        }
        merged = dict(self.model)
        for key, value in derived.items():
            if key in merged and merged[key] != value:
                raise ConfigError(
                    f"model.{key}={merged[key]} contradicts dataset ({value})"
                )
            merged[key] = value
        return ModelConfig.from_dict(merged)

    def train_config(self) -> TrainConfig:
        known = {k: v for k, v in self.train.items()
                 if k in TrainConfig.__dataclass_fields__}
        known.setdefault("seed", self.seed)
        return TrainConfig(**known)

    def transfer_plan(self) -> TransferPlan:
        t = dict(self.transfer)
        anneal = AnnealSettings(**{k: v for k, v in t.get("anneal", {}).items()
                                   if k in AnnealSettings.__dataclass_fields__})
        drr = DrrSettings(**{k: v for k, v in t.get("drr", {}).items()
                             if k in DrrSettings.__dataclass_fields__})
        return TransferPlan(
            method=t.get("method", "drr"),
            pretrain_epochs=int(t.get("pretrain_epochs", 2)),
            anneal=anneal,
            drr=drr,
        )


def load_dataset(path, manifest_path=None, data_cfg: dict | None = None,
                 seed: int = 0) -> DomainDataset:
    """Ingest -> split -> normalize, per the "data" config section."""
    data_cfg = data_cfg or {}
    path = Path(path)
    if manifest_path is None:
        manifest_path = data_cfg.get("manifest")
    if manifest_path is None:
        manifest_path = Path(str(path).replace(".jsonl", ".manifest.json"))
        if not Path(manifest_path).exists():
            raise ConfigError(f"no manifest next to {path}; pass --manifest")
    manifest = load_manifest(manifest_path)
    ds = ingest_jsonl(
        path,
        manifest,
        feedback_mode=data_cfg.get("feedback"),
        min_user_count=int(data_cfg.get("min_user_count", 1)),
        min_item_count=int(data_cfg.get("min_item_count", 1)),
    )
    fractions = tuple(data_cfg.get("fractions", (0.8, 0.1, 0.1)))
    ds = split(ds, fractions=fractions, seed=int(data_cfg.get("split_seed", seed)))
    method = data_cfg.get("normalize", "minmax")
    if method != "none":
        ds = normalize(ds, method=method, bins=int(data_cfg.get("bins", 4)))
    return ds
