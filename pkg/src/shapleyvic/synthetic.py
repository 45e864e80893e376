"""Synthetic binary-outcome datasets with known variable effects."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from shapleyvic.data import CATEGORICAL, CONTINUOUS, Dataset


def make_logistic_dataset(
    n: int,
    coefficients: Sequence[float],
    seed: int,
    intercept: float = 0.0,
    categorical: Sequence[int] = (),
    names: Sequence[str] | None = None,
) -> Dataset:
    """Standard-normal features with ``P(y=1) = logistic(intercept + x @ coefficients)``.

    Columns listed in ``categorical`` are replaced by a balanced binary
    variable (coded -1/+1 inside the linear predictor). Categorical codes are
    assigned in first-appearance order, matching :func:`shapleyvic.data.load_csv`.
    """
    beta = np.asarray(coefficients, dtype=float)
    d = beta.size
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    kinds = [CONTINUOUS] * d
    levels = {}
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(d))
    lin = np.empty_like(x)
    lin[:] = x
    for j in categorical:
        raw = rng.integers(0, 2, size=n)
        lin[:, j] = 2.0 * raw - 1.0
        labels = ("a", "b")
        first = [int(v) for v in dict.fromkeys(raw.tolist())]
        remap = {old: new for new, old in enumerate(first)}
        x[:, j] = [remap[int(v)] for v in raw]
        kinds[j] = CATEGORICAL
        levels[names[j]] = tuple(labels[old] for old in first)
    p = expit(intercept + lin @ beta)
    y = (rng.random(n) < p).astype(np.int64)
    return Dataset(features=x, outcome=y, var_names=names, var_kinds=tuple(kinds), levels=levels)


def make_meta_studies(
    m: int, mu: float, tau2: float, se: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Study estimates drawn as ``theta ~ N(mu, tau2)``, ``y ~ N(theta, se**2)``."""
    rng = np.random.default_rng(seed)
    theta = rng.normal(mu, np.sqrt(tau2), size=m)
    y = rng.normal(theta, se)
    return y, np.full(m, float(se))
