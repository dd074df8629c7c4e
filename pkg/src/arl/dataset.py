"""Tabular dataset ingestion, encoding, splitting and training-set bias injection.

A ``Schema`` assigns every CSV column one role: numeric, categorical, label or
protected. Protected columns never enter the learner's feature matrix; they
are kept as per-feature group codes (for evaluation and the group-aware
baselines) and as a one-hot block for adversary modes that include S.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

ROLES = ("numeric", "categorical", "label", "protected")


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ProtectedFeature:
    column: str
    # raw value -> short display code, in reporting order
    values: dict

    @property
    def codes(self):
        return list(self.values.values())


@dataclass(frozen=True)
class Schema:
    columns: dict
    label: str
    positive: str
    protected: tuple = ()
    missing_tokens: tuple = ("?", "")
    name: str = "dataset"

    def __post_init__(self):
        bad = {c: r for c, r in self.columns.items() if r not in ROLES}
        if bad:
            raise SchemaError(f"unknown roles: {bad}")
        labels = [c for c, r in self.columns.items() if r == "label"]
        if labels != [self.label]:
            raise SchemaError(f"schema needs exactly one label column, found {labels}")
        declared = {c for c, r in self.columns.items() if r == "protected"}
        listed = {p.column for p in self.protected}
        if declared != listed:
            raise SchemaError(f"protected columns {sorted(declared)} != protected list {sorted(listed)}")

    @classmethod
    def from_dict(cls, d):
        protected = tuple(ProtectedFeature(p["column"], dict(p["values"])) for p in d.get("protected", []))
        return cls(
            columns=dict(d["columns"]),
            label=d["label"]["column"],
            positive=str(d["label"]["positive"]),
            protected=protected,
            missing_tokens=tuple(d.get("missing_tokens", ["?", ""])),
            name=d.get("name", "dataset"),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"schema file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "name": self.name,
            "columns": self.columns,
            "label": {"column": self.label, "positive": self.positive},
            "protected": [{"column": p.column, "values": p.values} for p in self.protected],
            "missing_tokens": list(self.missing_tokens),
        }

    def by_role(self, role):
        return [c for c, r in self.columns.items() if r == role]

    def protected_feature(self, column):
        for p in self.protected:
            if p.column == column:
                return p
        raise KeyError(f"{column!r} is not a protected feature")


@dataclass
class RawTable:
    frame: pd.DataFrame
    dropped: int = 0

    def __len__(self):
        return len(self.frame)


def load_csv(path, schema):
    """Read a header-row CSV, validate it against the schema and drop rows with missing cells."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: no data rows")
    header = [h.strip() for h in header]
    for col in header:
        if col not in schema.columns:
            raise SchemaError(f"{path}: column {col!r} is not in the schema")
    for col in schema.columns:
        if col not in header:
            raise SchemaError(f"{path}: schema column {col!r} missing from header")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    frame.columns = header
    if frame.empty:
        raise DataError(f"{path}: no data rows")
    frame = frame.apply(lambda s: s.str.strip())
    missing = frame.isin(list(schema.missing_tokens)).any(axis=1)
    dropped = int(missing.sum())
    frame = frame.loc[~missing].reset_index(drop=True)
    if frame.empty:
        raise DataError(f"{path}: no data rows after dropping {dropped} incomplete rows")
    if dropped:
        log.info("%s: dropped %d rows with missing values", path.name, dropped)

    for col in schema.by_role("numeric"):
        parsed = pd.to_numeric(frame[col], errors="coerce")
        bad = parsed.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}: unparseable numeric cell {frame[col].iloc[row]!r} at row {row}, column {col!r}")
        frame[col] = parsed.astype(float)
    return RawTable(frame[list(schema.columns)], dropped)


@dataclass
class EncodingStats:
    """Fitted encoding: category vocabularies and numeric mean/std."""

    categories: dict
    mean: dict
    std: dict

    def to_dict(self):
        return {"categories": self.categories, "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["categories"]), dict(d["mean"]), dict(d["std"]))


def fit_stats(raw, schema):
    frame = raw.frame
    categories = {c: sorted(frame[c].unique().tolist()) for c in schema.by_role("categorical")}
    mean, std = {}, {}
    for c in schema.by_role("numeric"):
        col = frame[c].to_numpy(dtype=float)
        mean[c] = float(col.mean())
        sd = float(col.std())
        # constant column: leave unscaled so it becomes all zeros
        std[c] = sd if sd > 0 else 1.0
    return EncodingStats(categories, mean, std)


@dataclass
class Dataset:
    """Encoded examples.

    X        standardized learner features (protected columns excluded)
    y        0/1 labels
    s        intersectional group id over the protected vocabulary, -1 outside it
    codes    per protected feature: index into its declared values, -1 outside
    S        one-hot block of the protected features (adversary modes with S only)
    """

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    codes: dict
    S: np.ndarray
    feature_names: list
    protected_names: list
    schema: Schema
    stats: EncodingStats
    raw: RawTable | None = None
    group_names: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape[0] != n or self.s.shape[0] != n or self.S.shape[0] != n:
            raise DataError("inconsistent row counts across X, y, s")

    def __len__(self):
        return len(self.y)

    @property
    def n_groups(self):
        return len(self.group_names)

    def group_counts(self):
        return {g: int(np.sum(self.s == k)) for k, g in enumerate(self.group_names)}

    def base_rates(self):
        out = {}
        for k, g in enumerate(self.group_names):
            mask = self.s == k
            out[g] = float(self.y[mask].mean()) if mask.any() else float("nan")
        return out

    def take(self, idx):
        """Row subset (or resample, with repeated indices); encoding stats are kept."""
        idx = np.asarray(idx, dtype=int)
        raw = RawTable(self.raw.frame.iloc[idx].reset_index(drop=True)) if self.raw is not None else None
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx].copy(),
            s=self.s[idx],
            codes={k: v[idx] for k, v in self.codes.items()},
            S=self.S[idx],
            raw=raw,
        )

    def with_labels(self, y):
        return replace(self, y=np.asarray(y, dtype=float).copy())

    def to_csv(self, path):
        """Audit dump of the rows in the original column order (labels as encoded)."""
        if self.raw is None:
            raise DataError("dataset has no raw rows to dump")
        frame = self.raw.frame.copy()
        pos, neg = self.schema.positive, "not:" + self.schema.positive
        frame[self.schema.label] = np.where(self.y > 0.5, pos, neg)
        frame.to_csv(path, index=False)


def encode(raw, schema, stats=None):
    """Encode a raw table. Fits stats when none are given; returns (dataset, stats)."""
    if stats is None:
        stats = fit_stats(raw, schema)
    frame = raw.frame
    n = len(frame)
    blocks, names = [], []
    unseen = 0
    for c, role in schema.columns.items():
        if role == "numeric":
            col = frame[c].to_numpy(dtype=float)
            blocks.append(((col - stats.mean[c]) / stats.std[c])[:, None])
            names.append(c)
        elif role == "categorical":
            vocab = stats.categories[c]
            index = {v: i for i, v in enumerate(vocab)}
            onehot = np.zeros((n, len(vocab)))
            pos = frame[c].map(index)
            hit = pos.notna().to_numpy()
            unseen += int((~hit).sum())
            onehot[np.flatnonzero(hit), pos[hit].astype(int).to_numpy()] = 1.0
            blocks.append(onehot)
            names.extend(f"{c}={v}" for v in vocab)
    if unseen:
        log.warning("%d categorical cells unseen at fit time encoded as all-zeros", unseen)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))

    y = (frame[schema.label].astype(str).to_numpy() == schema.positive).astype(float)

    codes, s_blocks, s_names = {}, [], []
    for p in schema.protected:
        index = {v: i for i, v in enumerate(p.values)}
        code = frame[p.column].map(index).fillna(-1).astype(int).to_numpy()
        codes[p.column] = code
        onehot = np.zeros((n, len(p.values)))
        ok = code >= 0
        onehot[np.flatnonzero(ok), code[ok]] = 1.0
        s_blocks.append(onehot)
        s_names.extend(f"{p.column}={v}" for v in p.values)
    S = np.hstack(s_blocks) if s_blocks else np.zeros((n, 0))

    s, group_names = _intersect(schema, codes, n)
    ds = Dataset(X, y, s, codes, S, names, s_names, schema, stats, raw, group_names)
    return ds, stats


def _intersect(schema, codes, n):
    if not schema.protected:
        return np.zeros(n, dtype=int), ["all"]
    sizes = [len(p.values) for p in schema.protected]
    s = np.zeros(n, dtype=int)
    valid = np.ones(n, dtype=bool)
    for p, size in zip(schema.protected, sizes):
        c = codes[p.column]
        valid &= c >= 0
        s = s * size + np.maximum(c, 0)
    s[~valid] = -1
    group_names = ["".join(combo) for combo in itertools.product(*(p.codes for p in schema.protected))]
    return s, group_names


def load_dataset(data_path, schema_path):
    schema = Schema.load(schema_path)
    raw = load_csv(data_path, schema)
    ds, _ = encode(raw, schema)
    return ds


def split(dataset, train_fraction=0.7, seed=0):
    """Shuffled train/test split; standardization is refit on the train part only."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if dataset.raw is None:
        raise DataError("split needs the raw rows to refit standardization")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    frame = dataset.raw.frame
    train_raw = RawTable(frame.iloc[perm[:n_train]].reset_index(drop=True))
    test_raw = RawTable(frame.iloc[perm[n_train:]].reset_index(drop=True))
    train, stats = encode(train_raw, dataset.schema)
    test, _ = encode(test_raw, dataset.schema, stats)
    return train, test


def kfold_indices(n, k=5, seed=0):
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} examples")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    return [(np.concatenate(folds[:i] + folds[i + 1:]), folds[i]) for i in range(k)]


def kfold(train, k=5, seed=0):
    """k (fit, validate) dataset pairs; fold sizes differ by at most one."""
    return [(train.take(fit), train.take(val)) for fit, val in kfold_indices(len(train), k, seed)]


def _feature_mask(dataset, feature, value_code):
    """Rows whose protected ``feature`` has the given display code (e.g. 'F')."""
    p = dataset.schema.protected_feature(feature)
    codes = p.codes
    if value_code not in codes:
        raise DataError(f"group {value_code!r} absent from {feature} vocabulary {codes}")
    return dataset.codes[feature] == codes.index(value_code)


def inject_representation_bias(train, feature, group, fraction, seed=0):
    """Resample to a fixed size so that ``group`` makes up ``fraction`` of rows.

    A side is drawn with replacement when it must grow and without replacement
    when it must shrink.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    mask = _feature_mask(train, feature, group)
    inside, outside = np.flatnonzero(mask), np.flatnonzero(~mask)
    if len(inside) == 0:
        raise DataError(f"group {group!r} has no rows")
    n = len(train)
    n_in = int(round(fraction * n))
    n_out = n - n_in
    if n_out > 0 and len(outside) == 0:
        raise DataError("no rows outside the target group to fill the remainder")
    rng = np.random.default_rng(seed)
    pick_in = rng.choice(inside, size=n_in, replace=n_in > len(inside))
    pick_out = rng.choice(outside, size=n_out, replace=n_out > len(outside))
    idx = np.concatenate([pick_in, pick_out])
    return train.take(np.sort(idx))


def inject_label_bias(train, flip_fraction, seed=0):
    """Flip exactly round(flip_fraction * n) labels chosen uniformly without replacement."""
    if not 0 <= flip_fraction <= 0.5:
        raise ValueError("flip_fraction must be in [0, 0.5]")
    n = len(train)
    k = int(round(flip_fraction * n))
    idx = np.random.default_rng(seed).choice(n, size=k, replace=False)
    y = train.y.copy()
    y[idx] = 1.0 - y[idx]
    return train.with_labels(y)


def set_base_rate(train, feature, group, rate, seed=0):
    """Resample inside ``group`` (with replacement) so its positive share equals ``rate``.

    Group size and every row outside the group are unchanged.
    """
    if not 0 < rate < 1:
        raise ValueError("rate must be in (0, 1)")
    mask = _feature_mask(train, feature, group)
    inside = np.flatnonzero(mask)
    pos = inside[train.y[inside] > 0.5]
    neg = inside[train.y[inside] <= 0.5]
    if len(pos) == 0 or len(neg) == 0:
        raise DataError(f"group {group!r} needs both positive and negative rows")
    n_pos = int(round(rate * len(inside)))
    n_neg = len(inside) - n_pos
    rng = np.random.default_rng(seed)
    new_rows = np.concatenate([rng.choice(pos, n_pos, replace=True), rng.choice(neg, n_neg, replace=True)])
    idx = np.arange(len(train))
    # target-group slots are refilled in place; other rows keep their position
    idx[inside] = new_rows
    return train.take(idx)


def group_priors(dataset):
    """Empirical p(s) and p(s, y) over observed group ids (-1 is the out-of-vocabulary bucket)."""
    n = len(dataset)
    if n == 0:
        raise DataError("empty dataset")
    ps, psy = {}, {}
    groups, counts = np.unique(dataset.s, return_counts=True)
    for g, c in zip(groups, counts):
        ps[int(g)] = c / n
    keys = np.stack([dataset.s, dataset.y.astype(int)], axis=1)
    pairs, counts = np.unique(keys, axis=0, return_counts=True)
    for (g, y), c in zip(pairs, counts):
        psy[(int(g), int(y))] = c / n
    return ps, psy
