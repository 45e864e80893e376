"""CSV files exchanged between pipeline stages.

Floats are written with ``repr`` (shortest exact round-trip, ``.`` decimal
point, no grouping), so reloading a table reproduces the values bit for bit.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from shapleyvic.errors import ValidationError
from shapleyvic.meta import VariableResult, VicResult
from shapleyvic.rank import RankResult
from shapleyvic.shap import ImportanceSummary, ShapMatrix

SHAP_COLUMNS = ("model_id", "row_id", "variable", "shap_value")
SUMMARY_COLUMNS = ("model_id", "variable", "mean_abs_shap", "se", "valid_loss")
VIC_COLUMNS = ("variable", "pooled_mean", "pooled_se", "tau2", "pi_low", "pi_high")
VIOLIN_COLUMNS = ("model_id", "valid_loss", "variable", "mean_abs_shap")
RANK_COLUMNS = ("model_id", "variable", "dominance_count", "rank")
ENSEMBLE_COLUMNS = ("variable", "avg_rank", "ensemble_position")


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_rows(path: str | os.PathLike, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def read_rows(path: str | os.PathLike, columns: Sequence[str]) -> list[dict]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"missing table {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise ValidationError(f"{path}: expected columns {list(columns)}, got {reader.fieldnames}")
        return list(reader)


def write_shap_values(path, matrices: Sequence[tuple[int, ShapMatrix]], var_names: Sequence[str],
                      row_ids: Sequence[int] | None = None) -> None:
    def rows():
        for model_id, sm in matrices:
            ids = row_ids if row_ids is not None else range(sm.values.shape[0])
            for i, rid in enumerate(ids):
                for j, nm in enumerate(var_names):
                    yield model_id, int(rid), nm, sm.values[i, j]

    write_rows(path, SHAP_COLUMNS, rows())


def write_summaries(path, summaries: Sequence[ImportanceSummary]) -> None:
    write_rows(
        path,
        SUMMARY_COLUMNS,
        (
            (s.model_id, nm, s.mean_abs[j], s.se[j], s.valid_loss)
            for s in summaries
            for j, nm in enumerate(s.var_names)
        ),
    )


def read_summaries(path) -> list[ImportanceSummary]:
    grouped: dict[int, list[dict]] = defaultdict(list)
    for r in read_rows(path, SUMMARY_COLUMNS):
        grouped[int(r["model_id"])].append(r)
    out = []
    for model_id, rs in grouped.items():
        out.append(
            ImportanceSummary(
                model_id=model_id,
                var_names=tuple(r["variable"] for r in rs),
                mean_abs=[float(r["mean_abs_shap"]) for r in rs],
                se=[float(r["se"]) for r in rs],
                valid_loss=float(rs[0]["valid_loss"]),
            )
        )
    return out


def write_vic(path, vic: VicResult) -> None:
    write_rows(
        path,
        VIC_COLUMNS,
        ((v.variable, v.pooled_mean, v.pooled_se, v.tau2, v.pi_low, v.pi_high) for v in vic.variables),
    )


def read_vic_variables(path) -> list[VariableResult]:
    return [
        VariableResult(
            r["variable"],
            float(r["pooled_mean"]),
            float(r["pooled_se"]),
            float(r["tau2"]),
            float(r["pi_low"]),
            float(r["pi_high"]),
        )
        for r in read_rows(path, VIC_COLUMNS)
    ]


def write_violin(path, vic: VicResult) -> None:
    write_rows(
        path,
        VIOLIN_COLUMNS,
        (
            (mid, vic.valid_losses[i], nm, vic.table[i, j])
            for i, mid in enumerate(vic.model_ids)
            for j, nm in enumerate(vic.var_names)
        ),
    )


def read_vic(vic_path, violin_path) -> VicResult:
    variables = read_vic_variables(vic_path)
    names = [v.variable for v in variables]
    col = {nm: j for j, nm in enumerate(names)}
    by_model: dict[int, dict] = {}
    for r in read_rows(violin_path, VIOLIN_COLUMNS):
        entry = by_model.setdefault(int(r["model_id"]), {"loss": float(r["valid_loss"]), "vals": {}})
        entry["vals"][r["variable"]] = float(r["mean_abs_shap"])
    ids = sorted(by_model)
    table = np.empty((len(ids), len(names)))
    for i, mid in enumerate(ids):
        vals = by_model[mid]["vals"]
        if set(vals) != set(names):
            raise ValidationError(f"{violin_path}: model {mid} does not cover every variable")
        for nm, v in vals.items():
            table[i, col[nm]] = v
    return VicResult(
        variables=tuple(variables),
        model_ids=tuple(ids),
        valid_losses=np.array([by_model[m]["loss"] for m in ids]),
        table=table,
    )


def write_ranks(path, rr: RankResult) -> None:
    write_rows(
        path,
        RANK_COLUMNS,
        (
            (mid, nm, rr.dominance_counts[i, j], rr.per_model_ranks[i, j])
            for i, mid in enumerate(rr.model_ids)
            for j, nm in enumerate(rr.var_names)
        ),
    )


def write_ensemble_rank(path, rr: RankResult) -> None:
    pos = {nm: p for p, nm in enumerate(rr.ensemble_order, start=1)}
    write_rows(
        path,
        ENSEMBLE_COLUMNS,
        sorted(((nm, rr.avg_rank[j], pos[nm]) for j, nm in enumerate(rr.var_names)), key=lambda r: r[2]),
    )


def read_ensemble_order(path) -> tuple[str, ...]:
    rows = read_rows(path, ENSEMBLE_COLUMNS)
    return tuple(r["variable"] for r in sorted(rows, key=lambda r: int(r["ensemble_position"])))
