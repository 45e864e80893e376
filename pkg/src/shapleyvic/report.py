"""Output files: importance bars, per-model violins, rank comparison and the
parsimony curve, each as a CSV plus a small hand-written SVG."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr, escape

import numpy as np
from scipy import stats

from shapleyvic import mlp, tables
from shapleyvic.config import AUROC, CROSS_ENTROPY
from shapleyvic.data import DataSplit, Dataset
from shapleyvic.errors import NumericalError, ValidationError
from shapleyvic.meta import VicResult
from shapleyvic.mlp import TrainConfig

BAR_COLOR = "#9aa5b1"
SIG_COLOR = "#1f5f8b"
LOSS_LOW = (68, 1, 84)
LOSS_HIGH = (253, 231, 37)


class Svg:
    """Minimal SVG writer; every attribute value is XML-escaped."""

    def __init__(self, width: float, height: float):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def el(self, tag: str, text: str | None = None, **attrs) -> None:
        a = "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(_attr(v))}" for k, v in attrs.items())
        if text is None:
            self.parts.append(f"<{tag}{a}/>")
        else:
            self.parts.append(f"<{tag}{a}>{escape(text)}</{tag}>")

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:g}" height="{self.height:g}" '
            f'viewBox="0 0 {self.width:g} {self.height:g}" font-family="sans-serif" font-size="12">'
        )
        return "\n".join([head, *self.parts, "</svg>", ""])

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.render(), encoding="utf-8")


def _attr(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else "nan"
    return str(v)


def _scale(lo: float, hi: float, a: float, b: float):
    if hi == lo:
        return lambda v: (a + b) / 2
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def loss_color(value: float, lo: float, hi: float) -> str:
    t = 0.5 if hi == lo else min(1.0, max(0.0, (value - lo) / (hi - lo)))
    rgb = [round(c0 + t * (c1 - c0)) for c0, c1 in zip(LOSS_LOW, LOSS_HIGH)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _prepare(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot write to {p}: {exc}") from None
    if not os.access(p, os.W_OK):
        raise ValidationError(f"cannot write to {p}")
    return p


def emit_bar(vic: VicResult, path) -> tuple[Path, Path]:
    """``vic.csv`` and ``bar.svg``: bars by descending pooled mean with PI whiskers.

    Bars whose prediction interval excludes zero are filled darker and carry
    ``class="bar significant"``.
    """
    out = _prepare(path)
    csv_path, svg_path = out / "vic.csv", out / "bar.svg"
    tables.write_vic(csv_path, vic)
    order = sorted(vic.variables, key=lambda v: (-v.pooled_mean, v.variable))
    row_h, left, right, top = 24, 160, 40, 30
    width = 640
    svg = Svg(width, top + row_h * len(order) + 40)
    ends = [0.0]
    for v in order:
        ends += [v.pooled_mean] + ([v.pi_low, v.pi_high] if v.has_pi else [])
    x = _scale(min(ends), max(ends), left, width - right)
    svg.el("text", "Overall variable importance (95% PI)", x=left, y=18)
    svg.el("line", x1=x(0.0), y1=top - 4, x2=x(0.0), y2=top + row_h * len(order), stroke="#000")
    for i, v in enumerate(order):
        y0 = top + i * row_h
        cls = "bar significant" if v.significant else "bar"
        x0, x1 = sorted((x(0.0), x(v.pooled_mean)))
        svg.el("text", v.variable, x=left - 6, y=y0 + row_h * 0.65, text_anchor="end")
        svg.el("rect", class_=cls, x=x0, y=y0 + 4, width=max(x1 - x0, 0.5), height=row_h - 8,
               fill=SIG_COLOR if v.significant else BAR_COLOR,
               data_variable=v.variable, data_pooled_mean=repr(v.pooled_mean))
        if v.has_pi:
            ym = y0 + row_h / 2
            svg.el("line", class_="pi", x1=x(v.pi_low), y1=ym, x2=x(v.pi_high), y2=ym, stroke="#000",
                   data_variable=v.variable, data_pi_low=repr(v.pi_low), data_pi_high=repr(v.pi_high))
            for e in (v.pi_low, v.pi_high):
                svg.el("line", x1=x(e), y1=ym - 5, x2=x(e), y2=ym + 5, stroke="#000")
        if v.significant:
            svg.el("text", "*", x=width - right + 8, y=y0 + row_h * 0.7, class_="sig-mark")
    svg.save(svg_path)
    return csv_path, svg_path


def _density_outline(values: np.ndarray, grid: np.ndarray) -> np.ndarray | None:
    if values.size < 2 or np.ptp(values) == 0:
        return None
    try:
        dens = stats.gaussian_kde(values)(grid)
    except np.linalg.LinAlgError:
        return None
    return dens / dens.max()


def emit_violin(vic: VicResult, path) -> tuple[Path, Path]:
    """``violin.csv`` and ``violin.svg``: per-variable importance across models.

    Points are coloured on a linear scale from the smallest to the largest
    member validation loss; the colour bar states both endpoints.
    """
    out = _prepare(path)
    csv_path, svg_path = out / "violin.csv", out / "violin.svg"
    tables.write_violin(csv_path, vic)
    if vic.table.size == 0:
        raise ValidationError("violin plot needs the per-model importance table")
    names = vic.var_names
    order = sorted(range(len(names)), key=lambda j: (-vic.variables[j].pooled_mean, names[j]))
    lo_loss, hi_loss = float(np.min(vic.valid_losses)), float(np.max(vic.valid_losses))
    row_h, left, right, top = 36, 160, 40, 30
    width = 640
    svg = Svg(width, top + row_h * len(order) + 70)
    vmin, vmax = float(vic.table.min()), float(vic.table.max())
    pad = 0.05 * (vmax - vmin) if vmax > vmin else 0.5 * abs(vmax) or 1.0
    x = _scale(vmin - pad, vmax + pad, left, width - right)
    svg.el("text", "Variable importance across nearly optimal models", x=left, y=18)
    for i, j in enumerate(order):
        nm = names[j]
        vals = vic.table[:, j]
        yc = top + i * row_h + row_h / 2
        svg.el("text", nm, x=left - 6, y=yc + 4, text_anchor="end")
        grid = np.linspace(vals.min(), vals.max(), 40)
        dens = _density_outline(vals, grid)
        if dens is None:
            svg.el("line", class_="tick", x1=x(vals.mean()), y1=yc - row_h * 0.4, x2=x(vals.mean()),
                   y2=yc + row_h * 0.4, stroke="#555", data_variable=nm)
        else:
            half = row_h * 0.42 * dens
            pts = [(x(g), yc - h) for g, h in zip(grid, half)] + [
                (x(g), yc + h) for g, h in zip(grid[::-1], half[::-1])
            ]
            svg.el("polygon", class_="violin", points=" ".join(f"{a:.2f},{b:.2f}" for a, b in pts),
                   fill="#dde3ea", stroke="#8a96a3", data_variable=nm)
        for r, mid in enumerate(vic.model_ids):
            svg.el("circle", class_="model", cx=x(vals[r]), cy=yc, r=2,
                   fill=loss_color(vic.valid_losses[r], lo_loss, hi_loss),
                   data_model_id=mid, data_variable=nm, data_value=repr(float(vals[r])))
    yb = top + row_h * len(order) + 20
    for t in np.linspace(0, 1, 20):
        svg.el("rect", x=left + t * 200, y=yb, width=10.5, height=10,
               fill=loss_color(lo_loss + t * (hi_loss - lo_loss), lo_loss, hi_loss))
    svg.el("text", "validation loss", x=left + 220, y=yb + 9)
    svg.el("g", class_="colorbar", data_min=repr(lo_loss), data_max=repr(hi_loss))
    svg.el("text", f"{lo_loss:.4g}", x=left, y=yb + 24)
    svg.el("text", f"{hi_loss:.4g}", x=left + 200, y=yb + 24, text_anchor="end")
    svg.save(svg_path)
    return csv_path, svg_path


def spearman(order_a: Sequence[str], order_b: Sequence[str]) -> float:
    """Spearman correlation between two orderings of the same variables (no ties)."""
    if sorted(order_a) != sorted(order_b) or len(set(order_a)) != len(order_a):
        raise ValidationError("orderings must be permutations of the same variables")
    n = len(order_a)
    if n < 2:
        raise ValidationError("need at least two variables")
    pos_b = {nm: i for i, nm in enumerate(order_b)}
    d2 = sum((i - pos_b[nm]) ** 2 for i, nm in enumerate(order_a))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def rank_comparison(shap_order: Sequence[str], vic_order: Sequence[str], path) -> float:
    """``rank_comparison.csv`` and a slope chart; returns the Spearman correlation."""
    rho = spearman(shap_order, vic_order)
    out = _prepare(path)
    shap_rank = {nm: i for i, nm in enumerate(shap_order, start=1)}
    vic_rank = {nm: i for i, nm in enumerate(vic_order, start=1)}
    tables.write_rows(
        out / "rank_comparison.csv",
        ("variable", "shap_rank", "vic_rank"),
        ((nm, shap_rank[nm], vic_rank[nm]) for nm in shap_order),
    )
    row_h, top = 22, 40
    xa, xb = 180, 420
    svg = Svg(600, top + row_h * len(shap_order) + 20)
    svg.el("text", f"SHAP vs ShapleyVIC ranking (Spearman {rho:.3f})", x=20, y=18, class_="title",
           data_spearman=repr(rho))
    svg.el("text", "SHAP (optimal model)", x=xa, y=top - 10, text_anchor="end")
    svg.el("text", "ShapleyVIC ensemble", x=xb, y=top - 10)
    for nm in shap_order:
        ya = top + (shap_rank[nm] - 0.5) * row_h
        yb = top + (vic_rank[nm] - 0.5) * row_h
        moved = shap_rank[nm] != vic_rank[nm]
        svg.el("line", class_="slope", x1=xa + 6, y1=ya, x2=xb - 6, y2=yb,
               stroke="#c0392b" if moved else "#7f8c8d", data_variable=nm)
        svg.el("text", f"{shap_rank[nm]}. {nm}", x=xa, y=ya + 4, text_anchor="end", data_variable=nm)
        svg.el("text", f"{vic_rank[nm]}. {nm}", x=xb, y=yb + 4, data_variable=nm)
    svg.save(out / "rank_comparison.svg")
    return rho


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties count half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = stats.rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


@dataclass(frozen=True)
class ParsimonyEntry:
    k: int
    variables: tuple[str, ...]
    value: float  # nan when training at this k diverged


@dataclass(frozen=True)
class ParsimonyCurve:
    metric: str
    ranking: tuple[str, ...]
    entries: tuple[ParsimonyEntry, ...]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])


def parsimony_seed(master_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([master_seed, k]).generate_state(1)[0])


def parsimony(
    ds: Dataset,
    split: DataSplit,
    hidden: Sequence[int],
    cfg: TrainConfig,
    ranking: Sequence[str],
    metric: str = AUROC,
    master_seed: int = 0,
) -> ParsimonyCurve:
    """Validation performance of fresh MLPs trained on the top-k ranked variables.

    Selected columns keep their dataset order, so the model at ``k = d`` is
    the same whatever the ranking.
    """
    if sorted(ranking) != sorted(ds.var_names):
        raise ValidationError("ranking must be a permutation of the dataset's variables")
    if metric not in (AUROC, CROSS_ENTROPY):
        raise ValidationError(f"unknown parsimony metric {metric!r}")
    col = {nm: j for j, nm in enumerate(ds.var_names)}
    y = ds.outcome.astype(float)
    entries = []
    for k in range(1, len(ranking) + 1):
        top = tuple(ranking[:k])
        cols = sorted(col[nm] for nm in top)
        x_tr = ds.features[np.ix_(split.train_idx, cols)]
        x_va = ds.features[np.ix_(split.valid_idx, cols)]
        arch = mlp.MLPArch((k, *hidden, 1))
        kcfg = TrainConfig(
            lam=0.0, learning_rate=cfg.learning_rate, epochs=cfg.epochs, batch_size=cfg.batch_size,
            seed=parsimony_seed(master_seed, k), momentum=cfg.momentum, standardize=cfg.standardize,
        )
        try:
            model = mlp.train(x_tr, y[split.train_idx], arch, kcfg)
        except NumericalError:
            entries.append(ParsimonyEntry(k, top, float("nan")))
            continue
        if metric == AUROC:
            value = auroc(mlp.predict(model, x_va), y[split.valid_idx])
        else:
            value = mlp.loss(model, x_va, y[split.valid_idx])
        entries.append(ParsimonyEntry(k, top, value))
    return ParsimonyCurve(metric=metric, ranking=tuple(ranking), entries=tuple(entries))


def emit_parsimony(curves: dict[str, ParsimonyCurve], path) -> tuple[Path, Path]:
    """``parsimony.csv`` (one row per ranking and k) and a line chart."""
    out = _prepare(path)
    csv_path, svg_path = out / "parsimony.csv", out / "parsimony.svg"
    tables.write_rows(
        csv_path,
        ("ranking", "k", "variables", "metric", "value"),
        (
            (label, e.k, ";".join(e.variables), c.metric, e.value)
            for label, c in curves.items()
            for e in c.entries
        ),
    )
    left, top, w, h = 60, 30, 480, 240
    svg = Svg(left + w + 160, top + h + 50)
    vals = [e.value for c in curves.values() for e in c.entries if math.isfinite(e.value)]
    d = max((len(c.entries) for c in curves.values()), default=1)
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    x = _scale(1, max(d, 2), left, left + w)
    y = _scale(lo, hi, top + h, top)
    metric = next(iter(curves.values())).metric if curves else AUROC
    svg.el("text", f"Parsimony: validation {metric} vs number of variables", x=left, y=18)
    svg.el("line", x1=left, y1=top + h, x2=left + w, y2=top + h, stroke="#000")
    svg.el("line", x1=left, y1=top, x2=left, y2=top + h, stroke="#000")
    palette = ["#1f5f8b", "#c0392b", "#27ae60", "#8e44ad"]
    for ci, (label, c) in enumerate(curves.items()):
        color = palette[ci % len(palette)]
        pts = [(x(e.k), y(e.value)) for e in c.entries if math.isfinite(e.value)]
        if pts:
            svg.el("polyline", class_="curve", points=" ".join(f"{a:.2f},{b:.2f}" for a, b in pts),
                   fill="none", stroke=color, data_ranking=label)
        for e in c.entries:
            if math.isfinite(e.value):
                svg.el("circle", cx=x(e.k), cy=y(e.value), r=3, fill=color, data_ranking=label,
                       data_k=e.k, data_value=repr(e.value))
        svg.el("text", label, x=left + w + 12, y=top + 14 + 16 * ci, fill=color)
    svg.save(svg_path)
    return csv_path, svg_path
