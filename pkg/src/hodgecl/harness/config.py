"""Experiment configuration, variant presets and seed derivation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..downstream import DEFAULT_C_GRID
from ..datasets import TriangularGridSpec

STREAMS = {"data": 0, "init": 1, "shuffle": 2, "mask": 3, "svm": 4}

# CLI names -> (report label, overrides)
VARIANTS = {
    "sscl-spec": ("SSCL_Spec", {"loss": "weighted", "augmentation": "spectral"}),
    "sscl": ("SSCL", {"loss": "weighted", "augmentation": "uniform"}),
    "scl-spec": ("SCL_Spec", {"loss": "plain", "augmentation": "spectral"}),
    "scl": ("SCL", {"loss": "plain", "augmentation": "uniform"}),
    "scl-low": ("SCL_low", {"loss": "plain", "augmentation": "uniform", "lower_only": True}),
    "supervised": ("SCNN_supervised", {"supervised": True}),
}


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    rows: int = 8
    cols: int = 8
    holes: tuple = ((3, 2, 1, 1), (3, 5, 1, 1))
    label_seed: int | None = 0
    n_train: int = 200
    n_val: int = 100
    n_test: int = 100
    # encoder
    hidden: tuple = (32, 32)
    embed_dim: int = 32
    order: int = 2
    pooling: str = "mean"
    standardize: bool = True
    lower_only: bool = False
    # contrastive objective
    loss: str = "plain"
    tau: float = 0.1
    gamma_h: float = 1.0
    gamma_g: float = 1.0
    gamma_c: float = 1.0
    include_positive: bool = False
    # augmentation
    augmentation: str = "uniform"
    budget: float = 0.3
    budget_is_fraction: bool = True
    aug_step: float = 0.05
    aug_iters: int = 200
    # optimization
    supervised: bool = False
    lr: float = 0.01
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 100
    eval_every: int = 20
    # protocol
    seed: int = 0
    n_splits: int = 16
    c_grid: tuple = DEFAULT_C_GRID

    def __post_init__(self):
        for name in ("lr", "weight_decay"):
            value = getattr(self, name)
            if value != 0 and not 1e-5 <= value <= 1:
                raise ValueError(f"{name}={value} outside [1e-5, 1]")
        if self.epochs < 1 or self.batch_size < 2 or self.n_splits < 1:
            raise ValueError("epochs, batch_size and n_splits must be positive (batch_size >= 2)")
        if self.loss not in ("plain", "weighted"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.augmentation not in ("uniform", "spectral"):
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.order not in (1, 2, 3):
            raise ValueError("filter order must be 1, 2 or 3")

    @property
    def grid_spec(self) -> TriangularGridSpec:
        return TriangularGridSpec(self.rows, self.cols, tuple(tuple(h) for h in self.holes), self.label_seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("holes", "hidden", "c_grid"):
            if key in doc:
                doc[key] = tuple(tuple(v) if isinstance(v, list) else v for v in doc[key])
        return cls(**doc)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def variant_config(base: ExperimentConfig, variant: str) -> ExperimentConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    defaults = {"loss": "plain", "augmentation": "uniform", "lower_only": False, "supervised": False}
    return base.replace(**{**defaults, **VARIANTS[variant][1]})


def variant_label(variant: str) -> str:
    return VARIANTS[variant][0]


def stream(master_seed: int, split: int, name: str) -> np.random.SeedSequence:
    """Independent seed for one (split, purpose) pair."""
    return np.random.SeedSequence(master_seed, spawn_key=(split, STREAMS[name]))


def rng_for(master_seed: int, split: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream(master_seed, split, name))


def int_seed(master_seed: int, split: int, name: str) -> int:
    return int(stream(master_seed, split, name).generate_state(1)[0])
