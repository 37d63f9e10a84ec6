"""Run manifest: one nested config drives split, train, attack and report."""

import copy
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .federation import MODES
from .models import MODEL_KINDS, TrainConfig

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/run0",
    "dataset": {},
    "split": {"num_clients": 3, "ratios": [0.8, 0.1, 0.1], "dir": None},
    "train": {
        "mode": "FedR",
        "model_kind": "TransE",
        "dim": 128,
        "margin": 10.0,
        "temperature": 1.0,
        "num_negatives": 256,
        "learning_rate": 0.001,
        "local_epochs": 3,
        "batch_size": 512,
        "norm": "l2",
        "corruption": "both",
        "rounds": 300,
        "sample_fraction": 1.0,
        "eval_every": 5,
        "patience": 5,
        "secure": {"psu": True, "secagg": True},
    },
    "attack": {"leakage_ratios": [0.3, 0.5, 1.0], "traitor": 0},
    "report": {"targets": [0.2, 0.4], "runs": []},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class RunManifest:
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, overrides=None):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        merged = _merge(DEFAULTS, data)
        if overrides:
            merged = _merge(merged, overrides)
        m = cls(raw=merged)
        m.validate()
        return m

    @classmethod
    def from_dict(cls, data):
        m = cls(raw=_merge(DEFAULTS, data))
        m.validate()
        return m

    def __getitem__(self, key):
        return self.raw[key]

    def validate(self):
        train = self.raw["train"]
        if train["mode"] not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}, got {train['mode']!r}")
        if train["model_kind"] not in MODEL_KINDS:
            raise ConfigError(
                f"train.model_kind must be one of {MODEL_KINDS}, got {train['model_kind']!r}"
            )
        secure = train.get("secure", {})
        if (secure.get("psu") or secure.get("secagg")) and train["mode"] != "FedR":
            raise ConfigError(
                "train.secure: psu/secagg flags require train.mode = FedR"
            )
        ratios = self.raw["split"]["ratios"]
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split.ratios must be three fractions summing to 1, got {ratios}")
        if self.raw["split"]["num_clients"] < 1:
            raise ConfigError("split.num_clients must be >= 1")
        for lr in self.raw["attack"]["leakage_ratios"]:
            if not 0.0 < lr <= 1.0:
                raise ConfigError(f"attack.leakage_ratios entries must be in (0, 1], got {lr}")
        dataset = self.raw["dataset"]
        if "triples" in dataset and not os.path.exists(dataset["triples"]):
            raise ConfigError(f"dataset.triples: no such file {dataset['triples']!r}")
        if not 0.0 < train["sample_fraction"] <= 1.0:
            raise ConfigError("train.sample_fraction must be in (0, 1]")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    @property
    def split_dir(self) -> str:
        return self.raw["split"]["dir"] or os.path.join(self.output_dir, "split")

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            margin=t["margin"],
            temperature=t["temperature"],
            num_negatives=t["num_negatives"],
            learning_rate=t["learning_rate"],
            local_epochs=t["local_epochs"],
            batch_size=t["batch_size"],
            dim=t["dim"],
            seed=self.seed,
            norm=t["norm"],
            corruption=t["corruption"],
        )
