"""Dataset/prediction ingestion, schema inference and discrete encoding."""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

MISSING = -1
OTHER_LABEL = "__OTHER__"

Value = Union[str, float, None]


class SchemaError(ValueError):
    pass


class IngestError(ValueError):
    pass


class RowError(IngestError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class RawDataset:
    """Feature columns (row-aligned), binary labels and feature kinds.

    Missing values are ``None``. Numeric columns hold floats.
    """

    columns: Dict[str, List[Value]]
    labels: np.ndarray
    kinds: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        n = self.labels.shape[0]
        if n < 1:
            raise IngestError("dataset has no rows")
        if not np.isin(self.labels, (0, 1)).all():
            raise IngestError("labels must be 0 or 1")
        for name, col in self.columns.items():
            if len(col) != n:
                raise IngestError(f"column {name!r} has {len(col)} values, expected {n}")
            self.kinds.setdefault(name, _infer_kind(col))

    @property
    def num_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_names(self) -> List[str]:
        return list(self.columns)


@dataclass
class PredictionSet:
    model_id: str
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise IngestError(f"{self.model_id}: scores must be finite")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise IngestError(f"{self.model_id}: scores must lie in [0, 1]")


@dataclass(frozen=True)
class CategoricalDomain:
    values: tuple  # retained raw values, most frequent first
    other: frozenset = frozenset()  # raw values folded into OTHER

    kind = "categorical"

    @property
    def has_other(self) -> bool:
        return bool(self.other)

    @property
    def size(self) -> int:
        return len(self.values) + (1 if self.other else 0)

    @property
    def other_id(self) -> Optional[int]:
        return len(self.values) if self.other else None

    def encode(self, value) -> int:
        if value is None:
            return MISSING
        value = str(value)
        try:
            return self._index[value]
        except KeyError:
            if self.other:
                return len(self.values)
            raise KeyError(value) from None

    @property
    def _index(self) -> Dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {str(v): i for i, v in enumerate(self.values)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def label(self, value_id: int) -> str:
        if self.other and value_id == len(self.values):
            return OTHER_LABEL
        return str(self.values[value_id])


@dataclass(frozen=True)
class NumericDomain:
    """Bins [edges[k], edges[k+1]) with the last bin closed at ``upper``."""

    edges: tuple  # strictly ascending lower edges
    upper: float

    kind = "numeric"

    @property
    def size(self) -> int:
        return len(self.edges)

    def encode(self, value) -> int:
        if value is None:
            return MISSING
        v = float(value)
        if math.isnan(v):
            raise ValueError("NaN")
        k = bisect_right(self.edges, v) - 1
        return min(max(k, 0), len(self.edges) - 1)

    def bounds(self, value_id: int):
        lo = self.edges[value_id]
        hi = self.edges[value_id + 1] if value_id + 1 < len(self.edges) else self.upper
        return lo, hi


Domain = Union[CategoricalDomain, NumericDomain]


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    domains: tuple

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def domain_sizes(self) -> List[int]:
        return [d.size for d in self.domains]


@dataclass
class EncodedDataset:
    """Immutable, row-aligned integer encoding; safe to share read-only."""

    schema: FeatureSchema
    codes: np.ndarray  # (N, M) int32, MISSING = -1
    labels: np.ndarray  # (N,) int8
    scores: np.ndarray  # (num_models, N) float64
    model_ids: tuple

    def __post_init__(self):
        for arr in (self.codes, self.labels, self.scores):
            arr.setflags(write=False)

    @property
    def num_rows(self) -> int:
        return int(self.labels.shape[0])

    def example(self, row: int) -> "EncodedExample":
        return EncodedExample(row, tuple(int(c) for c in self.codes[row]), int(self.labels[row]),
                              tuple(float(s) for s in self.scores[:, row]))

    def replicate(self, times: int) -> "EncodedDataset":
        return EncodedDataset(self.schema, np.tile(self.codes, (times, 1)), np.tile(self.labels, times),
                              np.tile(self.scores, (1, times)), self.model_ids)


@dataclass(frozen=True)
class EncodedExample:
    row: int
    values: tuple
    label: int
    scores: tuple


def _infer_kind(col: Sequence[Value]) -> str:
    seen = False
    for v in col:
        if v is None:
            continue
        seen = True
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            continue
        try:
            float(v)
        except (TypeError, ValueError):
            return "categorical"
    return "numeric" if seen else "categorical"


def top_j_categories(value_counts: Mapping, top_j: int) -> CategoricalDomain:
    """Keep the ``top_j`` most frequent values; ties go to the smaller value."""
    if not value_counts:
        raise SchemaError("no values to rank")
    if top_j < 1:
        raise ValueError("top_j must be >= 1")
    ranked = sorted(value_counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    kept = tuple(str(v) for v, _ in ranked[:top_j])
    rest = frozenset(str(v) for v, _ in ranked[top_j:])
    return CategoricalDomain(kept, rest)


def quantile_edges(values: Sequence[float], num_bins: int) -> NumericDomain:
    """Equal-frequency bins over sorted values with duplicate edges collapsed.

    Edge k (1 <= k < num_bins) is the value at 0-based sorted position
    ceil(k * n / num_bins), so bin k starts with that element.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    if n == 0:
        raise SchemaError("no values to bin")
    picks = [v[0]]
    for k in range(1, num_bins):
        pos = -(-k * n // num_bins)
        if pos < n:
            picks.append(v[pos])
    edges = tuple(float(x) for x in sorted(set(picks)))
    return NumericDomain(edges, float(v[-1]))


def infer_schema(dataset: RawDataset, top_j: int = 100, num_bins: int = 10) -> FeatureSchema:
    if top_j < 1 or num_bins < 1:
        raise ValueError("top_j and num_bins must be >= 1")
    domains = []
    for name, col in dataset.columns.items():
        present = [v for v in col if v is not None]
        if not present:
            raise SchemaError(f"feature {name!r} has no non-missing values")
        if dataset.kinds[name] == "numeric":
            nums = [float(v) for v in present]
            if any(math.isnan(x) for x in nums):
                nums = [x for x in nums if not math.isnan(x)]
                if not nums:
                    raise SchemaError(f"feature {name!r} has no non-missing values")
            domains.append(quantile_edges(nums, num_bins))
        else:
            domains.append(top_j_categories(Counter(str(v) for v in present), top_j))
    return FeatureSchema(tuple(dataset.columns), tuple(domains))


def encode(dataset: RawDataset, predictions: Sequence[PredictionSet], schema: FeatureSchema) -> EncodedDataset:
    n = dataset.num_rows
    for p in predictions:
        if p.scores.shape[0] != n:
            raise IngestError(f"{p.model_id}: {p.scores.shape[0]} predictions for {n} rows")
    codes = np.empty((n, len(schema)), dtype=np.int32)
    for j, (name, dom) in enumerate(zip(schema.names, schema.domains)):
        col = dataset.columns[name]
        for i, v in enumerate(col):
            try:
                codes[i, j] = dom.encode(v)
            except (KeyError, ValueError, TypeError) as exc:
                raise RowError(i, f"cannot encode {name}={v!r} ({exc})") from None
    scores = np.stack([p.scores for p in predictions]) if predictions else np.empty((0, n))
    return EncodedDataset(schema, codes, dataset.labels.copy(), scores,
                          tuple(p.model_id for p in predictions))


# -- file formats -----------------------------------------------------------

_MISSING_TOKENS = {"", "NA", "N/A", "null", "None"}


def load_dataset(path, label_column: str, kinds: Optional[Mapping[str, str]] = None,
                 delimiter: str = ",") -> RawDataset:
    """Read a delimited file with a header row.

    Column kinds come from ``kinds`` when given, else numeric iff every
    non-missing cell parses as a float.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestError(f"{path}: no label column {label_column!r}")
        rows = [r for r in reader if r]
    li = header.index(label_column)
    labels = []
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise RowError(i, f"expected {len(header)} fields, got {len(r)}")
        try:
            y = float(r[li])
        except ValueError:
            raise RowError(i, f"label {r[li]!r} is not 0/1") from None
        if y not in (0.0, 1.0):
            raise RowError(i, f"label {r[li]!r} is not 0/1")
        labels.append(int(y))
    columns: Dict[str, List[Value]] = {}
    kinds = dict(kinds or {})
    for j, name in enumerate(header):
        if j == li:
            continue
        raw = [None if r[j].strip() in _MISSING_TOKENS else r[j].strip() for r in rows]
        kind = kinds.get(name) or _infer_kind(raw)
        if kind == "numeric":
            col: List[Value] = []
            for i, v in enumerate(raw):
                if v is None:
                    col.append(None)
                    continue
                try:
                    x = float(v)
                except ValueError:
                    raise RowError(i, f"{name}={v!r} is not numeric") from None
                if math.isnan(x):
                    raise RowError(i, f"{name} is NaN")
                col.append(x)
            raw = col
        kinds[name] = kind
        columns[name] = raw
    return RawDataset(columns, np.array(labels, dtype=np.int8), kinds)


def load_predictions(path, num_rows: int, model_id: Optional[str] = None) -> PredictionSet:
    """Read a ``row_index,score`` file covering rows 0..num_rows-1 exactly once."""
    scores = np.full(num_rows, np.nan)
    seen = np.zeros(num_rows, dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"row_index", "score"} - set(reader.fieldnames):
            raise IngestError(f"{path}: expected columns row_index, score")
        for rec in reader:
            try:
                i = int(rec["row_index"])
                s = float(rec["score"])
            except (TypeError, ValueError):
                raise IngestError(f"{path}: bad record {rec}") from None
            if not 0 <= i < num_rows:
                raise IngestError(f"{path}: row_index {i} outside 0..{num_rows - 1}")
            if seen[i]:
                raise IngestError(f"{path}: duplicate row_index {i}")
            seen[i] = True
            scores[i] = s
    if not seen.all():
        raise IngestError(f"{path}: {int((~seen).sum())} of {num_rows} rows have no prediction")
    return PredictionSet(model_id or Path(path).stem, scores)
