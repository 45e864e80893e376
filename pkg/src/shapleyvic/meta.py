"""Random-effects pooling of per-model importances.

Each ensemble member is treated as a study reporting an importance estimate
and its standard error. Between-model variance is estimated by the
DerSimonian-Laird method of moments, and the prediction interval uses a t
quantile with M - 2 degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from shapleyvic.errors import ValidationError
from shapleyvic.shap import ImportanceSummary

VAR_FLOOR = 1e-12


def _studies(y, s) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    if y.shape != s.shape:
        raise ValidationError("y and s must have the same length")
    if np.any(s < 0):
        raise ValidationError("standard errors must be >= 0")
    return y, s


def dl_tau2(y, s) -> float:
    """DerSimonian-Laird between-study variance.

    Fixed-effect weights are 1/s**2 with s**2 floored at 1e-12. When every s
    is zero the sample variance of y is returned instead.
    """
    y, s = _studies(y, s)
    m = y.size
    if m < 2:
        raise ValidationError("heterogeneity needs at least two studies")
    if np.all(s == 0):
        return float(np.var(y, ddof=1))
    w = 1.0 / np.maximum(s * s, VAR_FLOOR)
    sw = w.sum()
    ybar = (w * y).sum() / sw
    q = (w * (y - ybar) ** 2).sum()
    c = sw - (w * w).sum() / sw
    if c <= 0:
        return 0.0
    return max(0.0, float((q - (m - 1)) / c))


def pool(y, s, tau2: float) -> tuple[float, float]:
    """Inverse-variance weighted mean with weights 1/(s**2 + tau2), and its standard error."""
    y, s = _studies(y, s)
    if y.size < 1:
        raise ValidationError("pooling needs at least one study")
    if tau2 < 0:
        raise ValidationError("tau2 must be >= 0")
    w = 1.0 / np.maximum(s * s + tau2, VAR_FLOOR)
    sw = w.sum()
    return float((w * y).sum() / sw), float(math.sqrt(1.0 / sw))


def prediction_interval(pooled_mean: float, pooled_se: float, tau2: float, m: int) -> tuple[float, float]:
    """95% prediction interval: mean -/+ t(0.975, M-2) * sqrt(tau2 + se**2)."""
    if m < 3:
        raise ValidationError(f"a prediction interval needs M >= 3 models, got {m}")
    half = stats.t.ppf(0.975, m - 2) * math.sqrt(tau2 + pooled_se ** 2)
    return pooled_mean - half, pooled_mean + half


@dataclass(frozen=True)
class VariableResult:
    variable: str
    pooled_mean: float
    pooled_se: float
    tau2: float
    pi_low: float  # nan when M < 3
    pi_high: float

    @property
    def has_pi(self) -> bool:
        return not (math.isnan(self.pi_low) or math.isnan(self.pi_high))

    @property
    def significant(self) -> bool:
        """True when the prediction interval excludes zero."""
        return self.has_pi and (self.pi_low > 0 or self.pi_high < 0)


@dataclass(frozen=True, eq=False)
class VicResult:
    """Pooled importance per variable plus the per-model table it came from.

    ``table`` has shape ``(M, d)`` with rows ordered by ``model_ids``.
    """

    variables: tuple[VariableResult, ...]
    model_ids: tuple[int, ...]
    valid_losses: np.ndarray
    table: np.ndarray

    @property
    def var_names(self) -> tuple[str, ...]:
        return tuple(v.variable for v in self.variables)

    def __getitem__(self, name: str) -> VariableResult:
        for v in self.variables:
            if v.variable == name:
                return v
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, VicResult):
            return NotImplemented
        return (
            self.variables == other.variables
            and self.model_ids == other.model_ids
            and np.array_equal(self.valid_losses, other.valid_losses, equal_nan=True)
            and np.array_equal(self.table, other.table)
        )

    __hash__ = None


def pool_variable(name: str, y, s) -> VariableResult:
    y, s = _studies(y, s)
    tau2 = dl_tau2(y, s)
    mean, se = pool(y, s, tau2)
    if y.size >= 3:
        lo, hi = prediction_interval(mean, se, tau2, y.size)
    else:
        lo = hi = float("nan")
    return VariableResult(name, mean, se, tau2, lo, hi)


def shapleyvic_values(summaries: Sequence[ImportanceSummary]) -> VicResult:
    """Pool every variable independently across the ensemble.

    Summaries are sorted by ``model_id`` first, so the result does not depend
    on input order.
    """
    if len(summaries) < 2:
        raise ValidationError("need at least two model summaries")
    ordered = sorted(summaries, key=lambda s: s.model_id)
    names = ordered[0].var_names
    for s in ordered[1:]:
        if s.var_names != names:
            raise ValidationError(f"model {s.model_id} has a different variable set")
    ids = [s.model_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate model_id in summaries")
    y = np.vstack([s.mean_abs for s in ordered])
    se = np.vstack([s.se for s in ordered])
    variables = tuple(pool_variable(nm, y[:, j], se[:, j]) for j, nm in enumerate(names))
    return VicResult(
        variables=variables,
        model_ids=tuple(ids),
        valid_losses=np.array([s.valid_loss for s in ordered], dtype=float),
        table=y,
    )
