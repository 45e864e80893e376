"""Sampling nearly optimal MLPs.

Stage 1 retrains the model under a grid of L2 penalties (endogenous
perturbation); stage 2 fine-tunes the surviving seed models on
variable-defined subsets of the training data (exogenous perturbation).
Every candidate is kept only if its validation loss stays within a factor
``1 + epsilon`` of the optimal model's.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from shapleyvic import mlp
from shapleyvic.data import DataSplit, Dataset, SubsetSpec, all_subsets
from shapleyvic.errors import NumericalError, ValidationError
from shapleyvic.mlp import MLPArch, MLPModel, TrainConfig

log = logging.getLogger(__name__)

STAGE_OPTIMAL = "optimal"
STAGE_SEED = "seed"
STAGE_FINETUNED = "finetuned"

MIN_STABLE_MEMBERS = 10


def default_lambda_grid() -> tuple[float, ...]:
    return (0.0, *np.logspace(-6, -1, 11).tolist())


@dataclass(frozen=True)
class RashomonConfig:
    epsilon: float = 0.05
    lambda_grid: tuple[float, ...] = field(default_factory=default_lambda_grid)
    seeds_per_lambda: int = 1
    finetune_epochs: int = 2
    finetune_lr: float | None = None  # None: 0.1 x the base learning rate
    target_size: int = 350
    master_seed: int = 0
    n_bins: int = 4
    min_subset_size: int = 50

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if not self.lambda_grid or 0.0 not in self.lambda_grid:
            raise ValidationError("lambda_grid must contain 0")
        if any(v < 0 for v in self.lambda_grid):
            raise ValidationError("lambda values must be >= 0")
        if self.seeds_per_lambda < 1:
            raise ValidationError("seeds_per_lambda must be >= 1")
        if self.finetune_epochs < 0:
            raise ValidationError("finetune_epochs must be >= 0")
        if self.target_size < 1:
            raise ValidationError("target_size must be >= 1")

    def threshold(self, reference_loss: float) -> float:
        return (1.0 + self.epsilon) * reference_loss


@dataclass(frozen=True)
class Provenance:
    stage: str
    lam: float
    seed: int
    candidate: int | None = None  # stage-1 candidate index this model descends from
    subset: tuple[int, int] | None = None  # (variable_index, bin_id)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "lambda": self.lam,
            "seed": self.seed,
            "candidate": self.candidate,
            "subset": list(self.subset) if self.subset is not None else None,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Provenance":
        sub = obj.get("subset")
        return cls(
            stage=obj["stage"],
            lam=float(obj["lambda"]),
            seed=int(obj["seed"]),
            candidate=obj.get("candidate"),
            subset=tuple(sub) if sub is not None else None,
        )


@dataclass(frozen=True)
class ModelSample:
    model: MLPModel
    valid_loss: float
    provenance: Provenance


@dataclass(frozen=True)
class ModelEnsemble:
    reference_loss: float
    epsilon: float
    members: tuple[ModelSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members or self.members[0].provenance.stage != STAGE_OPTIMAL:
            raise ValidationError("member 0 must be the optimal model")

    @property
    def threshold(self) -> float:
        return (1.0 + self.epsilon) * self.reference_loss

    def __len__(self) -> int:
        return len(self.members)


def valid_loss(model: MLPModel, x_valid, y_valid) -> float:
    return mlp.loss(model, x_valid, y_valid, 0.0)


def train_optimal(x_train, y_train, x_valid, y_valid, arch: MLPArch, cfg: TrainConfig) -> ModelSample:
    """Train f* with no penalty and record its validation loss L*."""
    cfg = replace(cfg, lam=0.0)
    model = mlp.train(x_train, y_train, arch, cfg)
    return ModelSample(
        model=model,
        valid_loss=valid_loss(model, x_valid, y_valid),
        provenance=Provenance(stage=STAGE_OPTIMAL, lam=0.0, seed=cfg.seed),
    )


def stage1_candidates(base_cfg: TrainConfig, rcfg: RashomonConfig) -> list[tuple[int, float, int]]:
    """``(candidate_index, lambda, training_seed)`` for every stage-1 training.

    Seed offset 0 reuses ``base_cfg.seed``, so the lambda=0 candidate
    reproduces the optimal model exactly.
    """
    out = []
    for lam in rcfg.lambda_grid:
        for s in range(rcfg.seeds_per_lambda):
            out.append((len(out), lam, base_cfg.seed + s))
    return out


def stage1_seeds(
    x_train,
    y_train,
    x_valid,
    y_valid,
    arch: MLPArch,
    base_cfg: TrainConfig,
    rcfg: RashomonConfig,
    reference_loss: float,
) -> list[ModelSample]:
    """Train one model per (lambda, seed) and keep those in the stage-1 set.

    A model trained with penalty lambda is accepted when its *penalized*
    validation loss (cross-entropy + lambda * sum of squared weights) is at
    most ``(1 + epsilon) * reference_loss``. Accepted samples record the
    unpenalized validation loss.
    """
    threshold = rcfg.threshold(reference_loss)
    accepted: list[ModelSample] = []
    rejected: list[float] = []
    for cand, lam, seed in stage1_candidates(base_cfg, rcfg):
        try:
            model = mlp.train(x_train, y_train, arch, replace(base_cfg, lam=lam, seed=seed))
        except NumericalError as exc:
            log.info("stage1 lambda=%g seed=%d rejected: %s", lam, seed, exc)
            rejected.append(lam)
            continue
        ce = valid_loss(model, x_valid, y_valid)
        penalized = ce + lam * model.weight_sq_sum()
        if penalized <= threshold:
            accepted.append(
                ModelSample(model, ce, Provenance(stage=STAGE_SEED, lam=lam, seed=seed, candidate=cand))
            )
        else:
            rejected.append(lam)
        log.debug("stage1 lambda=%g seed=%d penalized=%.6g accepted=%s", lam, seed, penalized,
                  penalized <= threshold)
    if not accepted:
        raise ValidationError(
            "stage 1 accepted no models; rejected lambda values: "
            + ", ".join(f"{v:g}" for v in sorted(set(rejected)))
        )
    return accepted


def _schedule(seeds: Sequence[ModelSample], subsets: Sequence[SubsetSpec], master_seed: int):
    """Fine-tuning tasks ordered by a pseudo-random key per (candidate, subset).

    Each task's key and RNG stream depend only on its own identity, so the
    relative order of two tasks does not change when other seeds are added
    or removed.
    """
    tasks = []
    for si, s in enumerate(seeds):
        cand = s.provenance.candidate if s.provenance.candidate is not None else si
        for sub in subsets:
            ident = [master_seed, cand, sub.variable_index, sub.bin_id]
            key = np.random.SeedSequence(ident).generate_state(2, dtype=np.uint64).tolist()
            tasks.append((key, si, sub, ident))
    tasks.sort(key=lambda t: t[0])
    return tasks


def stage2_expand(
    seeds: Sequence[ModelSample],
    subsets: Sequence[SubsetSpec],
    ds_features,
    ds_outcome,
    x_valid,
    y_valid,
    base_cfg: TrainConfig,
    rcfg: RashomonConfig,
    reference_loss: float,
    exclude: MLPModel | None = None,
) -> list[ModelSample]:
    """Grow the sample by fine-tuning seed models on training subsets.

    Seeds whose unpenalized validation loss passes the threshold are kept
    first (except one identical to ``exclude``); fine-tuned copies follow in
    schedule order until ``rcfg.target_size`` members are collected or the
    schedule runs out. ``ds_features``/``ds_outcome`` are the full data
    arrays indexed by the subsets' ``member_idx``.
    """
    if not seeds:
        raise ValidationError("stage 2 needs at least one seed model")
    threshold = rcfg.threshold(reference_loss)
    members: list[ModelSample] = []
    for s in seeds:
        if s.valid_loss <= threshold and not (exclude is not None and s.model.same_params(exclude)):
            members.append(s)
    if rcfg.finetune_epochs > 0 and subsets:
        x_all = np.asarray(ds_features, dtype=float)
        y_all = np.asarray(ds_outcome, dtype=float)
        lr = rcfg.finetune_lr if rcfg.finetune_lr is not None else 0.1 * base_cfg.learning_rate
        tried = 0
        for _, si, sub, ident in _schedule(seeds, subsets, rcfg.master_seed):
            if len(members) >= rcfg.target_size:
                break
            seed_sample = seeds[si]
            task_seed = int(np.random.SeedSequence(ident).generate_state(1)[0])
            cfg = replace(base_cfg, lam=0.0, learning_rate=lr, epochs=rcfg.finetune_epochs, seed=task_seed)
            idx = sub.member_idx
            tried += 1
            try:
                model = mlp.train(x_all[idx], y_all[idx], seed_sample.model.arch, cfg, init=seed_sample.model)
            except NumericalError:
                continue
            ce = valid_loss(model, x_valid, y_valid)
            if ce <= threshold:
                prov = Provenance(
                    stage=STAGE_FINETUNED,
                    lam=seed_sample.provenance.lam,
                    seed=task_seed,
                    candidate=seed_sample.provenance.candidate,
                    subset=(sub.variable_index, sub.bin_id),
                )
                members.append(ModelSample(model, ce, prov))
        log.info("stage2: %d fine-tunings tried, %d members", tried, len(members))
    members = members[: rcfg.target_size]
    if len(members) < MIN_STABLE_MEMBERS:
        warnings.warn(
            f"only {len(members)} nearly optimal models found; the meta-analysis will be unstable",
            RuntimeWarning,
            stacklevel=2,
        )
    return members


def sample_rashomon(
    ds: Dataset,
    split: DataSplit,
    arch: MLPArch,
    cfg: TrainConfig,
    rcfg: RashomonConfig,
    optimal: ModelSample | None = None,
) -> ModelEnsemble:
    """Optimal model, stage-1 seeds and stage-2 expansion as one ensemble.

    ``optimal`` may be passed in to reuse an already trained f*.
    """
    x, y = ds.features, ds.outcome.astype(float)
    x_tr, y_tr = x[split.train_idx], y[split.train_idx]
    x_va, y_va = x[split.valid_idx], y[split.valid_idx]
    if x_va.shape[0] == 0:
        raise ValidationError("validation split is empty")
    if optimal is None:
        optimal = train_optimal(x_tr, y_tr, x_va, y_va, arch, cfg)
    ref = optimal.valid_loss
    seeds = stage1_seeds(x_tr, y_tr, x_va, y_va, arch, cfg, rcfg, ref)
    subsets = all_subsets(ds, split, rcfg.n_bins, rcfg.min_subset_size)
    members = stage2_expand(seeds, subsets, x, y, x_va, y_va, cfg, rcfg, ref, exclude=optimal.model)
    return ModelEnsemble(reference_loss=ref, epsilon=rcfg.epsilon, members=(optimal, *members))


def save_ensemble(ens: ModelEnsemble, directory: str | os.PathLike) -> None:
    """Write ``meta.json`` plus one ``member_K.json`` per model."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for old in root.glob("member_*.json"):
        old.unlink()
    with open(root / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"reference_loss": ens.reference_loss, "epsilon": ens.epsilon, "member_count": len(ens)},
            fh,
            indent=2,
        )
    for k, m in enumerate(ens.members):
        with open(root / f"member_{k}.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "model": mlp.model_to_dict(m.model),
                    "provenance": m.provenance.to_dict(),
                    "valid_loss": m.valid_loss,
                },
                fh,
            )


def load_ensemble(directory: str | os.PathLike) -> ModelEnsemble:
    root = Path(directory)
    try:
        with open(root / "meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"no ensemble found in {root}") from None
    members = []
    for k in range(int(meta["member_count"])):
        with open(root / f"member_{k}.json", encoding="utf-8") as fh:
            obj = json.load(fh)
        members.append(
            ModelSample(
                model=mlp.model_from_dict(obj["model"]),
                valid_loss=float(obj["valid_loss"]),
                provenance=Provenance.from_dict(obj["provenance"]),
            )
        )
    return ModelEnsemble(
        reference_loss=float(meta["reference_loss"]), epsilon=float(meta["epsilon"]), members=members
    )
