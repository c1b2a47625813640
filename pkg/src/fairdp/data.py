"""Tabular dataset ingestion, group partitioning, and sampling.

A dataset is a feature matrix plus a protected-group code vector and binary
labels. Preprocessing is deliberately simple and fully documented here,
because the sensitivity bounds used elsewhere assume bounded features:

- numeric columns are min-max scaled into [0, 1] (constant columns map to 0);
- categorical columns are one-hot encoded, with the literal value "?" kept
  as an ordinary category (census-style files use it for "unknown");
- rows with genuinely empty cells in any used column are dropped;
- protected columns are label-encoded to contiguous codes [0, K); several
  protected columns are combined into a single code set via their
  cross-product, so the resulting groups are pairwise disjoint.

Group partitions, event-conditioned subsets, imbalance subsampling and
Poisson batch sampling all operate on row-index arrays into the dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    DataDomainError,
    DataFormatError,
    DegenerateGroupError,
    EmptyEventError,
    InvalidParameterError,
    SchemaError,
)
from .linalg import FloatArray, RngStream

IntArray = np.ndarray

__all__ = [
    "DatasetSchema",
    "ColumnCodec",
    "TabularDataset",
    "GroupPartition",
    "FairnessEvent",
    "load_csv",
    "partition_by_group",
    "cross_product_groups",
    "event_subset",
    "subsample_major",
    "poisson_batch",
    "train_test_split",
]


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for a CSV file: features, protected attribute(s), label."""

    feature_cols: tuple[str, ...]
    protected_cols: tuple[str, ...]
    label_col: str

    def __post_init__(self):
        if len(self.protected_cols) == 0:
            raise SchemaError("at least one protected column is required")
        if len(self.feature_cols) == 0:
            raise SchemaError("at least one feature column is required")

    @staticmethod
    def from_dict(d: dict) -> "DatasetSchema":
        protected = d.get("protected") or d.get("protected_cols")
        if isinstance(protected, str):
            protected = [protected]
        features = d.get("features") or d.get("feature_cols")
        label = d.get("label") or d.get("label_col")
        if features is None or protected is None or label is None:
            raise SchemaError("schema needs 'features', 'protected' and 'label' entries")
        return DatasetSchema(tuple(features), tuple(protected), str(label))

    def to_dict(self) -> dict:
        return {
            "features": list(self.feature_cols),
            "protected": list(self.protected_cols),
            "label": self.label_col,
        }


@dataclass(frozen=True)
class ColumnCodec:
    """How one raw column maps into the feature matrix (for round-trips)."""

    name: str
    kind: str  # "numeric" | "categorical"
    start: int
    stop: int
    lo: float = 0.0
    hi: float = 1.0
    categories: tuple[str, ...] = ()


@dataclass
class TabularDataset:
    features: FloatArray          # (n, d)
    protected: IntArray           # (n,) codes in [0, n_groups)
    labels: IntArray              # (n,) values in {0, 1}
    n_groups: int
    feature_names: list[str] = field(default_factory=list)
    group_names: list[str] = field(default_factory=list)
    codecs: list[ColumnCodec] = field(default_factory=list)
    # raw per-attribute encodings, kept so groups can be re-derived from any
    # subset of protected columns
    protected_attrs: dict[str, tuple[IntArray, tuple[str, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.protected = np.asarray(self.protected, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.protected.shape != (n,) or self.labels.shape != (n,):
            raise DataFormatError(
                f"length mismatch: features {n}, protected {self.protected.shape}, labels {self.labels.shape}"
            )
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise DataDomainError(f"labels must be binary, found extra values {sorted(bad)}")
        if n and (self.protected.min() < 0 or self.protected.max() >= self.n_groups):
            raise DataDomainError(
                f"protected codes must lie in [0, {self.n_groups}), found "
                f"[{self.protected.min()}, {self.protected.max()}]"
            )
        if not self.group_names:
            self.group_names = [str(k) for k in range(self.n_groups)]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "TabularDataset":
        """Row subset preserving all metadata."""
        idx = np.asarray(indices, dtype=np.int64)
        return TabularDataset(
            features=self.features[idx],
            protected=self.protected[idx],
            labels=self.labels[idx],
            n_groups=self.n_groups,
            feature_names=list(self.feature_names),
            group_names=list(self.group_names),
            codecs=list(self.codecs),
            protected_attrs={k: (codes[idx], cats) for k, (codes, cats) in self.protected_attrs.items()},
        )


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint, covering row-index lists, one per protected group."""

    groups: tuple[IntArray, ...]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def validate(self, n: int) -> None:
        seen = np.concatenate(self.groups) if self.groups else np.empty(0, dtype=np.int64)
        if len(seen) != n or len(np.unique(seen)) != n:
            raise DegenerateGroupError("partition is not a disjoint cover of the dataset rows")


_EVENT_KINDS = ("none", "positive-label", "label-equals")


@dataclass(frozen=True)
class FairnessEvent:
    """Conditioning event for a fairness probability.

    kind "none" keeps all of a group (demographic parity), "positive-label"
    keeps rows with y = 1 (equality of opportunity), "label-equals" keeps
    rows with the given label.
    """

    kind: str = "none"
    label: int | None = None

    def __post_init__(self):
        if self.kind not in _EVENT_KINDS:
            raise InvalidParameterError(f"unknown event kind {self.kind!r}")
        if self.kind == "label-equals" and self.label not in (0, 1):
            raise InvalidParameterError("label-equals event needs label 0 or 1")

    @staticmethod
    def none() -> "FairnessEvent":
        return FairnessEvent("none")

    @staticmethod
    def positive_label() -> "FairnessEvent":
        return FairnessEvent("positive-label")

    @staticmethod
    def label_equals(y: int) -> "FairnessEvent":
        return FairnessEvent("label-equals", int(y))

    def describe(self) -> str:
        if self.kind == "label-equals":
            return f"label-equals-{self.label}"
        return self.kind


def _encode_label(raw: pd.Series) -> IntArray:
    values = raw.astype(str).str.strip()
    uniq = sorted(values.unique())
    numeric_like = all(_is_number(v) for v in uniq)
    if numeric_like:
        nums = sorted(float(v) for v in uniq)
        if not set(nums) <= {0.0, 1.0}:
            raise DataDomainError(f"label column must be binary 0/1, found values {uniq}")
        return values.astype(float).astype(np.int64).to_numpy()
    if len(uniq) != 2:
        raise DataDomainError(f"label column must have exactly two categories, found {uniq}")
    # deterministic convention: lexicographically larger category is the
    # positive class (">50K" > "<=50K" for census-style files)
    return (values == uniq[1]).astype(np.int64).to_numpy()


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _encode_protected(raw: pd.Series) -> tuple[IntArray, tuple[str, ...]]:
    values = raw.astype(str).str.strip()
    cats = tuple(sorted(values.unique()))
    lut = {c: i for i, c in enumerate(cats)}
    return values.map(lut).to_numpy(dtype=np.int64), cats


def _combine_codes(code_sets: list[tuple[IntArray, tuple[str, ...]]],
                   names: list[str]) -> tuple[IntArray, int, list[str]]:
    """Mixed-radix cross-product of several attribute codes.

    The combined codes are disjoint by construction: two rows share a code
    iff they agree on every listed attribute.
    """
    sizes = [len(cats) for _, cats in code_sets]
    combined = np.zeros(len(code_sets[0][0]), dtype=np.int64)
    for (codes, _), size in zip(code_sets, sizes):
        combined = combined * size + codes
    k_total = int(np.prod(sizes))
    labels = [""] * k_total
    for code in range(k_total):
        parts = []
        rem = code
        for (_, cats), size in zip(reversed(code_sets), reversed(sizes)):
            parts.append(cats[rem % size])
            rem //= size
        parts.reverse()
        labels[code] = "|".join(f"{n}={c}" for n, c in zip(names, parts))
    return combined, k_total, labels


def load_csv(path, schema: DatasetSchema) -> TabularDataset:
    """Load and preprocess a CSV file according to ``schema``.

    Raises SchemaError for missing columns, DataDomainError for non-binary
    labels, DataFormatError for empty/unreadable files.
    """
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"{path}: empty file") from exc
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise DataFormatError(f"{path}: {exc}") from exc
    if frame.empty:
        raise DataFormatError(f"{path}: no data rows")

    used = list(schema.feature_cols) + list(schema.protected_cols) + [schema.label_col]
    missing = [c for c in used if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    frame = frame[used]

    # drop-row is the only missing-value policy; literal "?" survives as a
    # category so census files keep their full row count
    frame = frame.replace(r"^\s*$", np.nan, regex=True).dropna(axis=0)
    if frame.empty:
        raise DataFormatError(f"{path}: all rows dropped (empty cells)")
    frame = frame.reset_index(drop=True)

    labels = _encode_label(frame[schema.label_col])

    protected_attrs: dict[str, tuple[IntArray, tuple[str, ...]]] = {}
    for col in schema.protected_cols:
        protected_attrs[col] = _encode_protected(frame[col])
    code_sets = [protected_attrs[c] for c in schema.protected_cols]
    if len(code_sets) == 1:
        protected, k_total = code_sets[0][0], len(code_sets[0][1])
        group_names = [f"{schema.protected_cols[0]}={c}" for c in code_sets[0][1]]
    else:
        protected, k_total, group_names = _combine_codes(code_sets, list(schema.protected_cols))
        counts = np.bincount(protected, minlength=k_total)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            raise DegenerateGroupError(
                f"{path}: attribute combinations with zero rows: "
                f"{[group_names[int(e)] for e in empty]}")

    blocks: list[np.ndarray] = []
    names: list[str] = []
    codecs: list[ColumnCodec] = []
    cursor = 0
    for col in schema.feature_cols:
        series = frame[col]
        numeric = pd.to_numeric(series, errors="coerce")
        if not numeric.isna().any():
            lo, hi = float(numeric.min()), float(numeric.max())
            span = hi - lo
            scaled = (numeric.to_numpy(dtype=np.float64) - lo) / span if span > 0 else np.zeros(len(frame))
            blocks.append(scaled[:, None])
            names.append(col)
            codecs.append(ColumnCodec(col, "numeric", cursor, cursor + 1, lo, hi))
            cursor += 1
        else:
            values = series.astype(str).str.strip()
            cats = tuple(sorted(values.unique()))
            onehot = np.zeros((len(frame), len(cats)), dtype=np.float64)
            lut = {c: i for i, c in enumerate(cats)}
            onehot[np.arange(len(frame)), values.map(lut).to_numpy()] = 1.0
            blocks.append(onehot)
            names.extend(f"{col}={c}" for c in cats)
            codecs.append(ColumnCodec(col, "categorical", cursor, cursor + len(cats), categories=cats))
            cursor += len(cats)

    return TabularDataset(
        features=np.hstack(blocks),
        protected=protected,
        labels=labels,
        n_groups=k_total,
        feature_names=names,
        group_names=group_names,
        codecs=codecs,
        protected_attrs=protected_attrs,
    )


def decode_categorical(ds: TabularDataset, column: str) -> list[str]:
    """Invert the one-hot block of ``column`` back to category strings."""
    for codec in ds.codecs:
        if codec.name == column and codec.kind == "categorical":
            block = ds.features[:, codec.start:codec.stop]
            return [codec.categories[i] for i in block.argmax(axis=1)]
    raise SchemaError(f"no categorical codec for column {column!r}")


def partition_by_group(ds: TabularDataset) -> GroupPartition:
    """Row indices per protected group; every declared group must be nonempty."""
    groups = []
    for k in range(ds.n_groups):
        idx = np.flatnonzero(ds.protected == k)
        if len(idx) == 0:
            raise DegenerateGroupError(
                f"group {k} ({ds.group_names[k] if k < len(ds.group_names) else k}) has no rows"
            )
        groups.append(idx)
    return GroupPartition(tuple(groups))


def cross_product_groups(ds: TabularDataset, attribute_cols: list[str]) -> TabularDataset:
    """Re-derive the protected codes from the cross-product of the listed
    attributes. A single attribute is the identity. Any attribute combination
    with zero rows is an error (the partition would be degenerate)."""
    if not attribute_cols:
        raise InvalidParameterError("attribute_cols must not be empty")
    for col in attribute_cols:
        if col not in ds.protected_attrs:
            raise SchemaError(f"{col!r} is not a protected attribute of this dataset")
    code_sets = [ds.protected_attrs[c] for c in attribute_cols]
    if len(code_sets) == 1:
        combined, k_total = code_sets[0][0], len(code_sets[0][1])
        names = [f"{attribute_cols[0]}={c}" for c in code_sets[0][1]]
    else:
        combined, k_total, names = _combine_codes(code_sets, list(attribute_cols))
    out = replace(ds, protected=combined, n_groups=k_total, group_names=names)
    counts = np.bincount(combined, minlength=k_total)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise DegenerateGroupError(
            f"attribute combinations with zero rows: {[names[int(e)] for e in empty]}"
        )
    return out


def event_subset(ds: TabularDataset, part: GroupPartition, k: int, event: FairnessEvent) -> IntArray:
    """Rows of group ``k`` satisfying the conditioning event."""
    if not 0 <= k < part.n_groups:
        raise InvalidParameterError(f"group id {k} out of range [0, {part.n_groups})")
    idx = part.groups[k]
    if event.kind == "none":
        out = idx
    elif event.kind == "positive-label":
        out = idx[ds.labels[idx] == 1]
    else:
        out = idx[ds.labels[idx] == event.label]
    if len(out) == 0:
        raise EmptyEventError(f"event {event.describe()!r} selects no rows in group {k}")
    return out


def subsample_major(ds: TabularDataset, rho: float, rng: RngStream) -> TabularDataset:
    """Downsample oversized groups so max group size / min group size ~= rho.

    Every group larger than floor(rho * smallest) is reduced to exactly that
    target by uniform sampling without replacement; smaller groups are kept
    intact. Intended for training splits only.
    """
    if rho < 1:
        raise InvalidParameterError(f"rho must be >= 1, got {rho}")
    part = partition_by_group(ds)
    target = math.floor(rho * min(part.sizes))
    if all(s <= target for s in part.sizes):
        return ds
    keep: list[IntArray] = []
    for k, idx in enumerate(part.groups):
        if len(idx) > target:
            chosen = rng.generator.choice(idx, size=target, replace=False)
            keep.append(np.sort(chosen))
        else:
            keep.append(idx)
    order = np.sort(np.concatenate(keep))
    return ds.take(order)


def poisson_batch(part: GroupPartition, k: int, q: float, rng: RngStream) -> IntArray:
    """Independently include each row of group ``k`` with probability q.

    The batch size is Binomial(n_k, q); an empty batch is a legal outcome.
    """
    if not 0 < q <= 1:
        raise InvalidParameterError(f"sampling probability must be in (0, 1], got {q}")
    idx = part.groups[k]
    mask = rng.generator.random(len(idx)) < q
    return idx[mask]


def train_test_split(ds: TabularDataset, test_fraction: float, rng: RngStream
                     ) -> tuple[TabularDataset, TabularDataset]:
    """Seeded split, stratified by (group, label) so every stratum keeps its
    proportion on both sides."""
    if not 0 < test_fraction < 1:
        raise InvalidParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    test_sel: list[IntArray] = []
    train_sel: list[IntArray] = []
    for k in range(ds.n_groups):
        for y in (0, 1):
            stratum = np.flatnonzero((ds.protected == k) & (ds.labels == y))
            if len(stratum) == 0:
                continue
            perm = rng.generator.permutation(stratum)
            n_test = int(len(stratum) * test_fraction)
            test_sel.append(perm[:n_test])
            train_sel.append(perm[n_test:])
    train_idx = np.sort(np.concatenate(train_sel))
    test_idx = np.sort(np.concatenate(test_sel))
    return ds.take(train_idx), ds.take(test_idx)
