"""Pipeline configuration read from JSON.

Layout::

    {"arch": {"hidden": [32]},
     "train": {"lr": 0.05, "epochs": 30, "batch_size": 64, "momentum": 0.9},
     "rashomon": {"epsilon": 0.05, "lambda_grid": [...], "seeds_per_lambda": 1,
                  "finetune_epochs": 2, "target_size": 350, "n_bins": 4},
     "shap": {"method": "exact", "background_size": 100, "n_permutations": 200},
     "report": {"parsimony_metric": "auroc"},
     "data": {"explain_count": 500, "train_frac": 0.8},
     "master_seed": 0}

Every section and key is optional.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from shapleyvic.errors import ValidationError
from shapleyvic.mlp import MLPArch, TrainConfig
from shapleyvic.rashomon import RashomonConfig, default_lambda_grid
from shapleyvic.shap import DEFAULT_EXACT_LIMIT, EXACT, PERMUTATION

AUROC = "auroc"
CROSS_ENTROPY = "cross_entropy"

_KEYS = {
    "arch": {"hidden"},
    "train": {"lr", "epochs", "batch_size", "momentum"},
    "rashomon": {
        "epsilon", "lambda_grid", "seeds_per_lambda", "finetune_epochs",
        "finetune_lr", "target_size", "n_bins", "min_subset_size",
    },
    "shap": {"method", "background_size", "n_permutations", "exact_limit"},
    "report": {"parsimony_metric", "parsimony"},
    "data": {"explain_count", "train_frac"},
    "master_seed": None,
}


@dataclass(frozen=True)
class PipelineConfig:
    hidden: tuple[int, ...] = (32,)
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    momentum: float = 0.9
    epsilon: float = 0.05
    lambda_grid: tuple[float, ...] = field(default_factory=default_lambda_grid)
    seeds_per_lambda: int = 1
    finetune_epochs: int = 2
    finetune_lr: float | None = None
    target_size: int = 350
    n_bins: int = 4
    min_subset_size: int = 50
    shap_method: str = EXACT
    background_size: int = 100
    n_permutations: int = 200
    exact_limit: int = DEFAULT_EXACT_LIMIT
    parsimony_metric: str = AUROC
    parsimony: bool = True
    explain_count: int = 500
    train_frac: float = 0.8
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValidationError("arch.hidden must list at least one positive layer size")
        if self.shap_method not in (EXACT, PERMUTATION):
            raise ValidationError(f"shap.method must be {EXACT!r} or {PERMUTATION!r}")
        if self.background_size < 1:
            raise ValidationError("shap.background_size must be >= 1")
        if self.parsimony_metric not in (AUROC, CROSS_ENTROPY):
            raise ValidationError(f"report.parsimony_metric must be {AUROC!r} or {CROSS_ENTROPY!r}")
        # surface invalid values now rather than mid-pipeline
        self.train_config()
        self.rashomon_config()

    def arch(self, d: int) -> MLPArch:
        return MLPArch((d, *self.hidden, 1))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lam=0.0,
            learning_rate=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.master_seed,
            momentum=self.momentum,
        )

    def rashomon_config(self) -> RashomonConfig:
        return RashomonConfig(
            epsilon=self.epsilon,
            lambda_grid=self.lambda_grid,
            seeds_per_lambda=self.seeds_per_lambda,
            finetune_epochs=self.finetune_epochs,
            finetune_lr=self.finetune_lr,
            target_size=self.target_size,
            master_seed=self.master_seed,
            n_bins=self.n_bins,
            min_subset_size=self.min_subset_size,
        )

    def with_overrides(self, seed: int | None = None, epsilon: float | None = None) -> "PipelineConfig":
        changes = {}
        if seed is not None:
            changes["master_seed"] = int(seed)
        if epsilon is not None:
            changes["epsilon"] = float(epsilon)
        return replace(self, **changes) if changes else self

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        for section, value in obj.items():
            if section not in _KEYS:
                raise ValidationError(f"unknown config section {section!r}")
            allowed = _KEYS[section]
            if allowed is not None:
                if not isinstance(value, dict):
                    raise ValidationError(f"config section {section!r} must be an object")
                extra = set(value) - allowed
                if extra:
                    raise ValidationError(f"unknown keys in {section!r}: {sorted(extra)}")
        arch = obj.get("arch", {})
        train = obj.get("train", {})
        ras = obj.get("rashomon", {})
        shp = obj.get("shap", {})
        rep = obj.get("report", {})
        dat = obj.get("data", {})
        kw = {}
        if "hidden" in arch:
            kw["hidden"] = tuple(arch["hidden"])
        for src, dst in (("lr", "lr"), ("epochs", "epochs"), ("batch_size", "batch_size"), ("momentum", "momentum")):
            if src in train:
                kw[dst] = train[src]
        for key in _KEYS["rashomon"]:
            if key in ras:
                kw[key] = tuple(ras[key]) if key == "lambda_grid" else ras[key]
        if "method" in shp:
            kw["shap_method"] = shp["method"]
        for key in ("background_size", "n_permutations", "exact_limit"):
            if key in shp:
                kw[key] = shp[key]
        for key in ("parsimony_metric", "parsimony"):
            if key in rep:
                kw[key] = rep[key]
        for key in ("explain_count", "train_frac"):
            if key in dat:
                kw[key] = dat[key]
        if "master_seed" in obj:
            kw["master_seed"] = int(obj["master_seed"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ValidationError(f"bad config value: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "arch": {"hidden": list(self.hidden)},
            "train": {"lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size, "momentum": self.momentum},
            "rashomon": {
                "epsilon": self.epsilon,
                "lambda_grid": list(self.lambda_grid),
                "seeds_per_lambda": self.seeds_per_lambda,
                "finetune_epochs": self.finetune_epochs,
                "finetune_lr": self.finetune_lr,
                "target_size": self.target_size,
                "n_bins": self.n_bins,
                "min_subset_size": self.min_subset_size,
            },
            "shap": {
                "method": self.shap_method,
                "background_size": self.background_size,
                "n_permutations": self.n_permutations,
                "exact_limit": self.exact_limit,
            },
            "report": {"parsimony_metric": self.parsimony_metric, "parsimony": self.parsimony},
            "data": {"explain_count": self.explain_count, "train_frac": self.train_frac},
            "master_seed": self.master_seed,
        }
