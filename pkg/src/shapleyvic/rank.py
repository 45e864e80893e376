"""Significance-based variable ranks per model and the ensemble average rank."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from shapleyvic.errors import ValidationError
from shapleyvic.shap import ImportanceSummary

Z_CRIT = 1.96


def dominates(summary: ImportanceSummary, j: int, k: int, z_crit: float = Z_CRIT) -> bool:
    """Whether variable ``j`` is significantly more important than ``k`` for this model.

    Uses a two-sided normal test on the difference of mean |SHAP|. With both
    standard errors zero the test reduces to ``diff > 0``.
    """
    if j == k:
        raise ValidationError("a variable cannot be compared with itself")
    diff = float(summary.mean_abs[j] - summary.mean_abs[k])
    if not diff > 0:
        return False
    sd = math.sqrt(float(summary.se[j]) ** 2 + float(summary.se[k]) ** 2)
    if sd == 0:
        return True
    return abs(diff / sd) > z_crit


def dominance_counts(summary: ImportanceSummary, z_crit: float = Z_CRIT) -> np.ndarray:
    d = len(summary.var_names)
    return np.array(
        [sum(dominates(summary, j, k, z_crit) for k in range(d) if k != j) for j in range(d)],
        dtype=np.int64,
    )


def competition_ranks(counts) -> np.ndarray:
    """Rank 1 for the largest count; ties share the smallest available rank (1, 1, 3, ...)."""
    counts = np.asarray(counts)
    return np.array([1 + int(np.sum(counts > c)) for c in counts], dtype=np.int64)


def model_ranks(summary: ImportanceSummary, z_crit: float = Z_CRIT) -> tuple[np.ndarray, np.ndarray]:
    if len(summary.var_names) < 2:
        raise ValidationError("ranking needs at least two variables")
    counts = dominance_counts(summary, z_crit)
    return counts, competition_ranks(counts)


@dataclass(frozen=True, eq=False)
class RankResult:
    var_names: tuple[str, ...]
    model_ids: tuple[int, ...]
    dominance_counts: np.ndarray  # (M, d)
    per_model_ranks: np.ndarray  # (M, d)
    avg_rank: np.ndarray  # (d,)
    ensemble_order: tuple[str, ...]

    def __eq__(self, other):
        if not isinstance(other, RankResult):
            return NotImplemented
        return (
            self.var_names == other.var_names
            and self.model_ids == other.model_ids
            and self.ensemble_order == other.ensemble_order
            and np.array_equal(self.dominance_counts, other.dominance_counts)
            and np.array_equal(self.per_model_ranks, other.per_model_ranks)
            and np.array_equal(self.avg_rank, other.avg_rank)
        )

    __hash__ = None


def order_by_avg_rank(var_names: Sequence[str], avg_rank) -> tuple[str, ...]:
    """Ascending average rank; ties broken by variable name."""
    return tuple(nm for _, nm in sorted(zip(np.asarray(avg_rank, dtype=float).tolist(), var_names)))


def ensemble_ranking(summaries: Sequence[ImportanceSummary], z_crit: float = Z_CRIT) -> RankResult:
    if not summaries:
        raise ValidationError("need at least one model summary")
    ordered = sorted(summaries, key=lambda s: s.model_id)
    names = ordered[0].var_names
    for s in ordered[1:]:
        if s.var_names != names:
            raise ValidationError(f"model {s.model_id} has a different variable set")
    counts, ranks = zip(*(model_ranks(s, z_crit) for s in ordered))
    ranks = np.vstack(ranks)
    # mean of integers via exact sum, so the result is independent of model order
    avg = ranks.sum(axis=0) / ranks.shape[0]
    return RankResult(
        var_names=names,
        model_ids=tuple(s.model_id for s in ordered),
        dominance_counts=np.vstack(counts),
        per_model_ranks=ranks,
        avg_rank=avg,
        ensemble_order=order_by_avg_rank(names, avg),
    )


def order_by_importance(summary: ImportanceSummary) -> tuple[str, ...]:
    """Variables by descending mean |SHAP| (ties by name); the usual single-model SHAP ranking."""
    return tuple(nm for _, nm in sorted(zip((-summary.mean_abs).tolist(), summary.var_names)))
