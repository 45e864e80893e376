"""End-to-end ShapleyVIC analysis over an output directory.

Each stage reads what earlier stages wrote under ``out`` and writes its own
products, so stages can be run one at a time or chained by :func:`run`::

    out/split.json
    out/ensemble/meta.json, out/ensemble/member_K.json   (fit, sample)
    out/shap/shap_values.csv, out/shap/summary.csv        (explain)
    out/vic.csv, out/violin.csv                           (pool)
    out/ranks.csv, out/ensemble_rank.csv                  (rank)
    out/*.svg, out/rank_comparison.csv, out/parsimony.csv (report)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shapleyvic import meta, rank, rashomon, report, shap, tables
from shapleyvic.config import PipelineConfig
from shapleyvic.data import DataSplit, Dataset, split_dataset
from shapleyvic.errors import ValidationError

log = logging.getLogger(__name__)


def _split_path(out: Path) -> Path:
    return out / "split.json"


def load_split(out: Path, ds: Dataset) -> DataSplit:
    try:
        with open(_split_path(out), encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{out} has no split.json; run 'fit' first") from None
    if obj.get("n") != ds.n:
        raise ValidationError(f"split.json was made for n={obj.get('n')} rows, data has {ds.n}")
    return DataSplit.from_dict(obj)


def fit(ds: Dataset, cfg: PipelineConfig, out) -> rashomon.ModelEnsemble:
    """Split the data and train the optimal model."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    split = split_dataset(ds, cfg.explain_count, cfg.train_frac, cfg.master_seed)
    with open(_split_path(out), "w", encoding="utf-8") as fh:
        json.dump({"n": ds.n, **split.to_dict()}, fh)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    x, y = ds.features, ds.outcome.astype(float)
    best = rashomon.train_optimal(
        x[split.train_idx], y[split.train_idx], x[split.valid_idx], y[split.valid_idx],
        cfg.arch(ds.d), cfg.train_config(),
    )
    ens = rashomon.ModelEnsemble(best.valid_loss, cfg.epsilon, (best,))
    rashomon.save_ensemble(ens, out / "ensemble")
    log.info("optimal model: validation loss %.6f", best.valid_loss)
    return ens


def sample(ds: Dataset, cfg: PipelineConfig, out) -> rashomon.ModelEnsemble:
    """Expand the fitted optimum into a sample of nearly optimal models."""
    out = Path(out)
    split = load_split(out, ds)
    optimal = rashomon.load_ensemble(out / "ensemble").members[0]
    ens = rashomon.sample_rashomon(
        ds, split, cfg.arch(ds.d), cfg.train_config(), cfg.rashomon_config(), optimal=optimal
    )
    rashomon.save_ensemble(ens, out / "ensemble")
    log.info("ensemble: %d models (reference loss %.6f)", len(ens), ens.reference_loss)
    return ens


def background_rows(ds: Dataset, split: DataSplit, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 2])
    k = min(size, split.train_idx.size)
    idx = np.sort(rng.choice(split.train_idx, size=k, replace=False))
    return ds.features[idx]


def explain(ds: Dataset, cfg: PipelineConfig, out) -> list[shap.ImportanceSummary]:
    """SHAP values and mean-|SHAP| summaries for every ensemble member."""
    out = Path(out)
    split = load_split(out, ds)
    if split.explain_idx.size == 0:
        raise ValidationError("the explanation split is empty; set data.explain_count > 0")
    ens = rashomon.load_ensemble(out / "ensemble")
    scfg = shap.ShapConfig(
        background=background_rows(ds, split, cfg.background_size, cfg.master_seed),
        method=cfg.shap_method,
        n_permutations=cfg.n_permutations,
        seed=cfg.master_seed,
        exact_limit=cfg.exact_limit,
    )
    rows = ds.features[split.explain_idx]
    summaries, matrices = [], []
    for k, member in enumerate(ens.members):
        summ, sm = shap.summarize_importance(member, rows, scfg, ds.var_names, model_id=k)
        summaries.append(summ)
        matrices.append((k, sm))
    (out / "shap").mkdir(exist_ok=True)
    tables.write_shap_values(out / "shap" / "shap_values.csv", matrices, ds.var_names, split.explain_idx)
    tables.write_summaries(out / "shap" / "summary.csv", summaries)
    return summaries


def pool(out) -> meta.VicResult:
    out = Path(out)
    vic = meta.shapleyvic_values(tables.read_summaries(out / "shap" / "summary.csv"))
    tables.write_vic(out / "vic.csv", vic)
    tables.write_violin(out / "violin.csv", vic)
    return vic


def rank_stage(out) -> rank.RankResult:
    out = Path(out)
    rr = rank.ensemble_ranking(tables.read_summaries(out / "shap" / "summary.csv"))
    tables.write_ranks(out / "ranks.csv", rr)
    tables.write_ensemble_rank(out / "ensemble_rank.csv", rr)
    return rr


@dataclass(frozen=True)
class ReportResult:
    spearman: float
    shap_order: tuple[str, ...]
    vic_order: tuple[str, ...]
    parsimony: dict


def make_report(ds: Dataset, cfg: PipelineConfig, out) -> ReportResult:
    out = Path(out)
    vic = tables.read_vic(out / "vic.csv", out / "violin.csv")
    report.emit_bar(vic, out)
    report.emit_violin(vic, out)
    summaries = {s.model_id: s for s in tables.read_summaries(out / "shap" / "summary.csv")}
    shap_order = rank.order_by_importance(summaries[0])
    vic_order = tables.read_ensemble_order(out / "ensemble_rank.csv")
    rho = report.rank_comparison(shap_order, vic_order, out)
    curves = {}
    if cfg.parsimony:
        split = load_split(out, ds)
        for label, order in (("shap", shap_order), ("shapleyvic", vic_order)):
            curves[label] = report.parsimony(
                ds, split, cfg.hidden, cfg.train_config(), order, cfg.parsimony_metric, cfg.master_seed
            )
        report.emit_parsimony(curves, out)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"spearman": rho, "shap_order": list(shap_order), "shapleyvic_order": list(vic_order)},
            fh,
            indent=2,
        )
    return ReportResult(rho, shap_order, vic_order, curves)


def run(ds: Dataset, cfg: PipelineConfig, out) -> ReportResult:
    fit(ds, cfg, out)
    sample(ds, cfg, out)
    explain(ds, cfg, out)
    pool(out)
    rank_stage(out)
    return make_report(ds, cfg, out)
