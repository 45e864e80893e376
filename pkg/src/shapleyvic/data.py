"""Tabular data loading, the explain/train/validation split and the
variable-defined training subsets used for fine-tuning."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from shapleyvic.errors import ValidationError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

DEFAULT_N_BINS = 4
DEFAULT_MIN_SUBSET_SIZE = 50


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, binary outcome and per-column metadata.

    Categorical columns hold integer codes ``0..L-1``; ``levels[name]`` maps
    each code back to the label it was read from.
    """

    features: np.ndarray
    outcome: np.ndarray
    var_names: tuple[str, ...]
    var_kinds: tuple[str, ...]
    levels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.outcome)
        if x.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        n, d = x.shape
        if n < 1 or d < 2:
            raise ValidationError(f"need n >= 1 rows and d >= 2 variables, got {n}x{d}")
        if y.shape != (n,):
            raise ValidationError("outcome length does not match the number of rows")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain missing or non-finite values")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("outcome must contain only 0 and 1")
        names = tuple(self.var_names)
        kinds = tuple(self.var_kinds)
        if len(names) != d or len(kinds) != d:
            raise ValidationError("var_names/var_kinds must have one entry per column")
        if any(not nm for nm in names) or len(set(names)) != d:
            raise ValidationError("variable names must be unique and nonempty")
        if any(k not in (CONTINUOUS, CATEGORICAL) for k in kinds):
            raise ValidationError(f"unknown variable kind in {kinds}")
        x = x.copy()
        x.flags.writeable = False
        y = y.astype(np.int64)
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "var_names", names)
        object.__setattr__(self, "var_kinds", kinds)
        object.__setattr__(self, "levels", {k: tuple(v) for k, v in self.levels.items()})

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.var_names == other.var_names
            and self.var_kinds == other.var_kinds
            and self.levels == other.levels
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.outcome, other.outcome)
        )

    __hash__ = None


@dataclass(frozen=True)
class Schema:
    outcome: str
    features: tuple[str, ...] | None = None
    categorical: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        if "outcome" not in obj:
            raise ValidationError("schema must name an outcome column")
        feats = obj.get("features")
        return cls(
            outcome=obj["outcome"],
            features=tuple(feats) if feats is not None else None,
            categorical=tuple(obj.get("categorical", ())),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Schema":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ValidationError(f"schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"schema file {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "categorical": list(self.categorical),
            "features": list(self.features) if self.features is not None else None,
        }


def load_csv(path: str | os.PathLike, schema: Schema | dict) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Columns are ordered as listed in ``schema.features`` (default: header
    order minus the outcome). Categorical labels are coded by first
    appearance. Row numbers in error messages count the header as row 1.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        seen = set()
        for h in header:
            if h in seen:
                raise ValidationError(f"{path}: duplicate column name {h!r}")
            seen.add(h)
        feature_names = (
            list(schema.features)
            if schema.features is not None
            else [h for h in header if h != schema.outcome]
        )
        for nm in [schema.outcome, *feature_names, *schema.categorical]:
            if nm not in seen:
                raise ValidationError(f"{path}: column {nm!r} not in header")
        if schema.outcome in feature_names:
            raise ValidationError("outcome column cannot also be a feature")
        if len(set(feature_names)) != len(feature_names):
            raise ValidationError("schema lists a feature twice")
        col_of = {h: i for i, h in enumerate(header)}
        categorical = set(schema.categorical)
        codes: dict[str, dict[str, int]] = {nm: {} for nm in feature_names if nm in categorical}

        rows: list[list[float]] = []
        outcome: list[int] = []
        for rownum, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ValidationError(
                    f"{path}: row {rownum} has {len(record)} cells, expected {len(header)}"
                )
            values = []
            for nm in feature_names:
                cell = record[col_of[nm]].strip()
                if cell == "":
                    raise ValidationError(f"{path}: empty cell at row {rownum}, column {nm!r}")
                if nm in codes:
                    values.append(float(codes[nm].setdefault(cell, len(codes[nm]))))
                else:
                    values.append(_parse_number(cell, path, rownum, nm))
            cell = record[col_of[schema.outcome]].strip()
            if cell == "":
                raise ValidationError(
                    f"{path}: empty cell at row {rownum}, column {schema.outcome!r}"
                )
            yv = _parse_number(cell, path, rownum, schema.outcome)
            if yv not in (0.0, 1.0):
                raise ValidationError(
                    f"{path}: outcome value {cell!r} at row {rownum} is not 0 or 1"
                )
            rows.append(values)
            outcome.append(int(yv))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return Dataset(
        features=np.array(rows, dtype=float),
        outcome=np.array(outcome, dtype=np.int64),
        var_names=tuple(feature_names),
        var_kinds=tuple(CATEGORICAL if nm in codes else CONTINUOUS for nm in feature_names),
        levels={nm: tuple(c) for nm, c in codes.items()},
    )


def _parse_number(cell: str, path, rownum: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ValidationError(
            f"{path}: cannot parse {cell!r} at row {rownum}, column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise ValidationError(f"{path}: non-finite value at row {rownum}, column {column!r}")
    return value


def write_csv(ds: Dataset, path: str | os.PathLike, outcome_name: str = "outcome") -> Schema:
    """Write ``ds`` so that ``load_csv(path, schema)`` reproduces it exactly.

    Returns the matching schema.
    """
    if outcome_name in ds.var_names:
        raise ValidationError(f"outcome name {outcome_name!r} clashes with a feature")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*ds.var_names, outcome_name])
        for row, y in zip(ds.features, ds.outcome):
            cells = []
            for j, nm in enumerate(ds.var_names):
                if ds.var_kinds[j] == CATEGORICAL:
                    cells.append(ds.levels[nm][int(row[j])])
                else:
                    cells.append(repr(float(row[j])))
            writer.writerow([*cells, str(int(y))])
    return Schema(
        outcome=outcome_name,
        features=ds.var_names,
        categorical=tuple(nm for nm, k in zip(ds.var_names, ds.var_kinds) if k == CATEGORICAL),
    )


@dataclass(frozen=True, eq=False)
class DataSplit:
    train_idx: np.ndarray
    valid_idx: np.ndarray
    explain_idx: np.ndarray
    seed: int

    def __eq__(self, other):
        if not isinstance(other, DataSplit):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.train_idx, other.train_idx)
            and np.array_equal(self.valid_idx, other.valid_idx)
            and np.array_equal(self.explain_idx, other.explain_idx)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_idx": self.train_idx.tolist(),
            "valid_idx": self.valid_idx.tolist(),
            "explain_idx": self.explain_idx.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DataSplit":
        return cls(
            train_idx=np.asarray(obj["train_idx"], dtype=np.int64),
            valid_idx=np.asarray(obj["valid_idx"], dtype=np.int64),
            explain_idx=np.asarray(obj["explain_idx"], dtype=np.int64),
            seed=int(obj["seed"]),
        )


def split_dataset(ds: Dataset, explain_count: int, train_frac: float, seed: int) -> DataSplit:
    """Draw the explanation rows first, then split the remainder into train/validation.

    The training share is rounded up. Index arrays are returned sorted.
    """
    n = ds.n
    if not 0 <= explain_count < n:
        raise ValidationError(f"explain_count must be in [0, n={n}), got {explain_count}")
    if not 0.0 < train_frac < 1.0:
        raise ValidationError(f"train_frac must be in (0, 1), got {train_frac}")
    perm = np.random.default_rng(seed).permutation(n)
    explain = perm[:explain_count]
    rest = perm[explain_count:]
    # round() guards against 0.8 * 10 = 8.000000000000002 rounding up to 9
    n_train = math.ceil(round(train_frac * rest.size, 9))
    train, valid = rest[:n_train], rest[n_train:]
    if np.unique(ds.outcome[train]).size < 2:
        raise ValidationError("training split lacks one of the outcome classes")
    return DataSplit(
        train_idx=np.sort(train), valid_idx=np.sort(valid), explain_idx=np.sort(explain), seed=seed
    )


@dataclass(frozen=True, eq=False)
class SubsetSpec:
    """One bin of one variable; ``member_idx`` are dataset row indices drawn from the training split."""

    variable_index: int
    bin_id: int
    member_idx: np.ndarray

    @property
    def size(self) -> int:
        return int(self.member_idx.size)


def make_subsets(
    ds: Dataset,
    split: DataSplit,
    variable_index: int,
    n_bins: int = DEFAULT_N_BINS,
    min_subset_size: int = DEFAULT_MIN_SUBSET_SIZE,
) -> list[SubsetSpec]:
    """Partition the training rows by the values of one variable.

    Continuous variables are cut at empirical quantiles of the training
    values (a value equal to a cut point goes to the lower bin); categorical
    variables get one bin per observed level. Bins smaller than
    ``min_subset_size`` are merged into their smaller neighbour. Returns an
    empty list when the variable is constant on the training rows.
    """
    if not 0 <= variable_index < ds.d:
        raise ValidationError(f"variable_index {variable_index} out of range for d={ds.d}")
    train = np.asarray(split.train_idx)
    values = ds.features[train, variable_index]
    if values.size == 0 or np.all(values == values[0]):
        return []
    if ds.var_kinds[variable_index] == CATEGORICAL:
        labels = np.unique(values, return_inverse=True)[1]
    else:
        if n_bins < 2:
            raise ValidationError("n_bins must be >= 2 for continuous variables")
        probs = np.arange(1, n_bins) / n_bins
        # "lower" keeps cut points on observed values, so binning is invariant
        # under strictly increasing transforms of the column
        edges = np.unique(np.quantile(values, probs, method="lower"))
        labels = np.searchsorted(edges, values, side="left")
    groups = [train[labels == b] for b in np.unique(labels)]
    groups = _merge_small(groups, min_subset_size)
    return [
        SubsetSpec(variable_index=variable_index, bin_id=b, member_idx=np.sort(g))
        for b, g in enumerate(groups)
    ]


def _merge_small(groups: list[np.ndarray], min_size: int) -> list[np.ndarray]:
    groups = list(groups)
    while len(groups) > 1:
        sizes = [g.size for g in groups]
        small = [i for i, s in enumerate(sizes) if s < min_size]
        if not small:
            break
        i = min(small, key=lambda k: (sizes[k], k))
        if i == 0:
            j = 1
        elif i == len(groups) - 1:
            j = i - 1
        else:
            j = i - 1 if sizes[i - 1] <= sizes[i + 1] else i + 1
        lo, hi = min(i, j), max(i, j)
        groups[lo] = np.concatenate([groups[lo], groups[hi]])
        del groups[hi]
    return groups


def all_subsets(
    ds: Dataset,
    split: DataSplit,
    n_bins: int = DEFAULT_N_BINS,
    min_subset_size: int = DEFAULT_MIN_SUBSET_SIZE,
) -> list[SubsetSpec]:
    """Subsets for every variable; constant variables contribute none."""
    out: list[SubsetSpec] = []
    for j in range(ds.d):
        out.extend(make_subsets(ds, split, j, n_bins, min_subset_size))
    return out

