"""Shapley attributions of MLP predictions and their per-model summary.

The coalition value function is interventional: variables outside the
coalition are filled in from background rows and the prediction averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from shapleyvic import mlp
from shapleyvic.errors import ValidationError
from shapleyvic.mlp import MLPModel

EXACT = "exact"
PERMUTATION = "permutation"
DEFAULT_EXACT_LIMIT = 15

# rows of the (masks x background) expansion evaluated per predict call
_CHUNK_ROWS = 1 << 17
# (row, mask, background) triples per block in the MLP fast path
_MLP_BLOCK = 1 << 12


@dataclass(frozen=True, eq=False)
class ShapConfig:
    background: np.ndarray
    method: str = EXACT
    n_permutations: int = 200
    seed: int = 0
    exact_limit: int = DEFAULT_EXACT_LIMIT

    def __post_init__(self):
        bg = np.atleast_2d(np.asarray(self.background, dtype=float))
        if bg.shape[0] < 1:
            raise ValidationError("background needs at least one row")
        object.__setattr__(self, "background", bg)
        if self.method not in (EXACT, PERMUTATION):
            raise ValidationError(f"unknown SHAP method {self.method!r}")
        if self.n_permutations < 1:
            raise ValidationError("n_permutations must be >= 1")


@dataclass(frozen=True)
class ShapMatrix:
    values: np.ndarray  # (m, d)
    base_value: float


@dataclass(frozen=True)
class ImportanceSummary:
    model_id: int
    var_names: tuple[str, ...]
    mean_abs: np.ndarray
    se: np.ndarray
    valid_loss: float

    def __post_init__(self):
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "mean_abs", np.asarray(self.mean_abs, dtype=float))
        object.__setattr__(self, "se", np.asarray(self.se, dtype=float))
        d = len(self.var_names)
        if self.mean_abs.shape != (d,) or self.se.shape != (d,):
            raise ValidationError("mean_abs and se need one entry per variable")


Predictor = Callable[[np.ndarray], np.ndarray]


def _predictor(model) -> Predictor:
    if isinstance(model, MLPModel):
        return lambda z: mlp.predict_unchecked(model, z)
    if callable(model):
        return lambda z: np.asarray(model(z), dtype=float).reshape(-1)
    raise TypeError("model must be an MLPModel or a callable mapping rows to predictions")


def _check_background(background, d: int) -> np.ndarray:
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValidationError("background is empty")
    if bg.shape[1] != d:
        raise ValidationError(f"background width {bg.shape[1]} does not match d={d}")
    return bg


def _mask_bits(masks: np.ndarray, d: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(d)) & 1).astype(bool)


def coalition_values(model, rows: np.ndarray, masks: np.ndarray, background: np.ndarray) -> np.ndarray:
    """``v(S)`` for every row and every coalition bitmask; shape ``(m, len(masks))``.

    Bit ``j`` of a mask set means variable ``j`` takes the row's value.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    m, d = rows.shape
    bg = _check_background(background, d)
    k = bg.shape[0]
    masks = np.asarray(masks, dtype=np.int64)
    bits = _mask_bits(masks, d)
    if isinstance(model, MLPModel):
        return _mlp_coalition_values(model, rows, bits, bg)
    f = _predictor(model)
    out = np.empty((m, masks.size))
    per_mask = m * k
    step = max(1, _CHUNK_ROWS // max(per_mask, 1))
    for start in range(0, masks.size, step):
        b = bits[start:start + step]
        if per_mask <= _CHUNK_ROWS:
            z = np.where(b[None, :, None, :], rows[:, None, None, :], bg[None, None, :, :])
            pred = f(z.reshape(-1, d)).reshape(m, b.shape[0], k)
            out[:, start:start + step] = pred.mean(axis=2)
        else:
            for c, bm in enumerate(b):
                for r in range(m):
                    z = np.where(bm, rows[r], bg)
                    out[r, start + c] = f(z).mean()
    return out


def _mlp_coalition_values(model: MLPModel, rows: np.ndarray, bits: np.ndarray, bg: np.ndarray) -> np.ndarray:
    # The first layer is linear in the input, so its pre-activation splits
    # into a part from the row's coalition columns and a part from the
    # background's remaining columns. Both are computed once per mask.
    w0, b0 = model.weights[0], model.biases[0]
    xs = (rows - model.input_shift) / model.input_scale
    bs = (bg - model.input_shift) / model.input_scale
    sel = bits.astype(float)
    m, k, n_masks = xs.shape[0], bs.shape[0], bits.shape[0]
    h = w0.shape[1]
    from_row = np.einsum("rj,cj,jh->rch", xs, sel, w0)  # (m, masks, h)
    from_bg = np.einsum("bj,cj,jh->cbh", bs, 1.0 - sel, w0) + b0  # (masks, k, h)
    rest_w, rest_b = model.weights[1:], model.biases[1:]
    out = np.empty((m, n_masks))
    # small blocks keep the hidden-layer buffer in cache
    c_step = max(1, min(n_masks, _MLP_BLOCK // k))
    r_step = max(1, _MLP_BLOCK // (c_step * k))
    buf = np.empty((min(r_step, m), c_step, k, h))
    for r0 in range(0, m, r_step):
        r1 = min(r0 + r_step, m)
        for c0 in range(0, n_masks, c_step):
            c1 = min(c0 + c_step, n_masks)
            a = buf[: r1 - r0, : c1 - c0]
            np.add(from_row[r0:r1, c0:c1, None, :], from_bg[None, c0:c1], out=a)
            np.maximum(a, 0.0, out=a)
            a = a.reshape(-1, h)
            for i, (w, b) in enumerate(zip(rest_w, rest_b)):
                a = a @ w + b
                if i < len(rest_w) - 1:
                    a = np.maximum(a, 0.0)
            out[r0:r1, c0:c1] = expit(a[:, 0]).reshape(r1 - r0, c1 - c0, k).mean(axis=2)
    return out


def value_function(model, x, coalition: Iterable[int], background) -> float:
    """Mean prediction over background rows with ``x``'s values on ``coalition``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    mask = 0
    for j in coalition:
        if not 0 <= j < d:
            raise ValidationError(f"variable index {j} out of range for d={d}")
        mask |= 1 << int(j)
    return float(coalition_values(model, x[None, :], np.array([mask]), background)[0, 0])


def base_value(model, background) -> float:
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValidationError("background is empty")
    return float(_predictor(model)(bg).mean())


def _shapley_weights(d: int) -> np.ndarray:
    """Weight of a coalition of size s not containing the player, s = 0..d-1."""
    return np.array(
        [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    )


def shap_exact_rows(model, rows, background, exact_limit: int = DEFAULT_EXACT_LIMIT) -> np.ndarray:
    """Exact Shapley values for each row by enumerating all ``2**d`` coalitions."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    d = rows.shape[1]
    if d > exact_limit:
        raise ValidationError(
            f"exact SHAP over d={d} variables exceeds exact_limit={exact_limit}; use the permutation method"
        )
    masks = np.arange(1 << d, dtype=np.int64)
    v = coalition_values(model, rows, masks, background)
    sizes = np.array([bin(s).count("1") for s in range(1 << d)])
    weights = _shapley_weights(d)
    phi = np.empty((rows.shape[0], d))
    for j in range(d):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[:, j] = (v[:, without | bit] - v[:, without]) @ weights[sizes[without]]
    return phi


def shap_exact(model, x, background, exact_limit: int = DEFAULT_EXACT_LIMIT) -> np.ndarray:
    """phi_j = sum over S not containing j of |S|!(d-|S|-1)!/d! * [v(S + j) - v(S)]."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return shap_exact_rows(model, x, background, exact_limit)[0]


def shap_permutation(
    model,
    x,
    background,
    n_permutations: int,
    seed,
    return_se: bool = False,
):
    """Monte Carlo Shapley values from random variable orderings.

    Each of the ``n_permutations`` sampled orderings is also walked in
    reverse (antithetic pair); the estimate is the mean over pairs. With
    ``return_se`` the Monte Carlo standard error of each coordinate, taken
    over the pair means, is returned as well. ``seed`` may be an int or a
    sequence of ints.
    """
    if n_permutations < 1:
        raise ValidationError("n_permutations must be >= 1")
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(d) for _ in range(n_permutations)])
    both = np.concatenate([orders, orders[:, ::-1]])
    bits = np.left_shift(1, both).astype(np.int64)
    prefix = np.zeros((both.shape[0], d + 1), dtype=np.int64)
    prefix[:, 1:] = np.bitwise_or.accumulate(bits, axis=1)
    # orderings share prefixes, so each distinct coalition is evaluated once
    uniq, inverse = np.unique(prefix, return_inverse=True)
    v = coalition_values(model, x[None, :], uniq, background)[0][inverse.reshape(prefix.shape)]
    gains = np.diff(v, axis=1)
    contrib = np.empty_like(gains)
    np.put_along_axis(contrib, both, gains, axis=1)
    pairs = 0.5 * (contrib[:n_permutations] + contrib[n_permutations:])
    phi = pairs.mean(axis=0)
    if not return_se:
        return phi
    if n_permutations > 1:
        se = pairs.std(axis=0, ddof=1) / math.sqrt(n_permutations)
    else:
        se = np.zeros(d)
    return phi, se


def shap_matrix(model, rows, cfg: ShapConfig, model_id: int = 0) -> ShapMatrix:
    """Attributions for every row; exact when ``d <= cfg.exact_limit``, otherwise permutation.

    Permutation streams are seeded per ``(cfg.seed, model_id, row index)``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    m, d = rows.shape
    bg = _check_background(cfg.background, d)
    if cfg.method == EXACT and d <= cfg.exact_limit:
        values = shap_exact_rows(model, rows, bg, cfg.exact_limit)
    else:
        values = np.empty((m, d))
        for i in range(m):
            values[i] = shap_permutation(model, rows[i], bg, cfg.n_permutations, [cfg.seed, model_id, i])
    return ShapMatrix(values=values, base_value=base_value(model, bg))


def importance_from_values(
    values: np.ndarray, var_names: Sequence[str], model_id: int = 0, valid_loss: float = float("nan")
) -> ImportanceSummary:
    """Mean |SHAP| per variable and its standard error sd(|SHAP|)/sqrt(m).

    The standard deviation uses ``ddof=1``; a single row gives se = 0.
    """
    a = np.abs(np.atleast_2d(np.asarray(values, dtype=float)))
    m = a.shape[0]
    if m == 0:
        raise ValidationError("need at least one explanation row")
    se = a.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros(a.shape[1])
    return ImportanceSummary(
        model_id=model_id, var_names=tuple(var_names), mean_abs=a.mean(axis=0), se=se, valid_loss=valid_loss
    )


def summarize_importance(
    sample, explain_rows, cfg: ShapConfig, var_names: Sequence[str], model_id: int = 0
) -> tuple[ImportanceSummary, ShapMatrix]:
    """SHAP matrix of one ensemble member over the explanation rows, and its summary."""
    rows = np.atleast_2d(np.asarray(explain_rows, dtype=float))
    if rows.shape[0] == 0:
        raise ValidationError("explanation set is empty")
    sm = shap_matrix(sample.model, rows, cfg, model_id)
    return importance_from_values(sm.values, var_names, model_id, sample.valid_loss), sm
