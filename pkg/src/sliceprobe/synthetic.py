"""Synthetic datasets with known slice structure.

Every generator returns ``(RawDataset, PredictionSet)``. Features are
categorical with values ``"v0", "v1", ...``; the model is correct with
probability ``base_accuracy`` except inside planted slices, where accuracy is
lowered by ``drop``.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .schema import PredictionSet, RawDataset

Planted = Dict[str, str]  # feature name -> value


def _features(rng, n, num_features, cardinality, probs=None):
    cols = {}
    for j in range(num_features):
        card = cardinality[j] if isinstance(cardinality, (list, tuple)) else cardinality
        p = None if probs is None else probs[j]
        cols[f"f{j}"] = rng.choice(card, size=n, p=p)
    return cols


def _scores(rng, labels, correct):
    # correct predictions land on the label's side of 0.5
    margin = rng.uniform(0.0, 0.5, size=labels.size)
    right = np.where(labels == 1, 0.5 + margin, 0.5 - margin)
    wrong = np.where(labels == 1, 0.5 - margin, 0.5 + margin)
    return np.clip(np.where(correct, right, wrong), 0.0, 1.0)


def planted_mask(columns: Dict[str, Sequence[str]], planted: Planted) -> np.ndarray:
    n = len(next(iter(columns.values())))
    mask = np.ones(n, dtype=bool)
    for name, value in planted.items():
        mask &= np.asarray(columns[name]) == value
    return mask


def make_dataset(n: int = 2000, num_features: int = 5, cardinality=4,
                 planted: Sequence[Planted] = (), base_accuracy: float = 0.85,
                 drop: float = 0.45, seed: int = 0, probs=None,
                 numeric: Sequence[int] = ()) -> Tuple[RawDataset, PredictionSet]:
    """Random categorical features with planted low-accuracy slices.

    Columns listed in ``numeric`` are emitted as floats (the code plus
    uniform jitter inside [code, code + 1)), so quantile binning can recover
    them.
    """
    rng = np.random.default_rng(seed)
    codes = _features(rng, n, num_features, cardinality, probs)
    labels = rng.integers(0, 2, size=n)
    accuracy = np.full(n, base_accuracy)
    str_cols = {k: np.array([f"v{c}" for c in v], dtype=object) for k, v in codes.items()}
    for p in planted:
        accuracy[planted_mask(str_cols, p)] = base_accuracy - drop
    correct = rng.random(n) < accuracy
    columns = {}
    for j, (name, col) in enumerate(str_cols.items()):
        if j in numeric:
            columns[name] = list(codes[name] + rng.uniform(0.0, 1.0, size=n))
        else:
            columns[name] = list(col)
    raw = RawDataset(columns, labels)
    return raw, PredictionSet("model", _scores(rng, labels, correct))


def make_null(n: int = 2000, num_features: int = 5, cardinality=4, seed: int = 0,
              base_accuracy: float = 0.8) -> Tuple[RawDataset, PredictionSet]:
    """Model accuracy is the same everywhere; no slice is truly different."""
    return make_dataset(n, num_features, cardinality, (), base_accuracy, 0.0, seed)


def random_planted(rng, count: int, num_features: int, cardinality: int,
                   sizes: Sequence[int] = (2, 3)) -> List[Planted]:
    """Distinct random conjunctions of the given cross sizes."""
    out: List[Planted] = []
    seen = set()
    while len(out) < count:
        size = int(rng.choice(sizes))
        feats = sorted(rng.choice(num_features, size=size, replace=False))
        p = {f"f{f}": f"v{int(rng.integers(cardinality))}" for f in feats}
        key = tuple(sorted(p.items()))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def zipf_probs(cardinality: int, exponent: float = 1.2) -> np.ndarray:
    w = 1.0 / np.arange(1, cardinality + 1) ** exponent
    return w / w.sum()


def make_sparse(n: int = 2000, num_features: int = 6, cardinality: int = 12, seed: int = 0,
                exponent: float = 1.2) -> Tuple[RawDataset, PredictionSet]:
    """Skewed high-cardinality features, so many slices are small."""
    probs = [zipf_probs(cardinality, exponent)] * num_features
    return make_dataset(n, num_features, cardinality, (), 0.8, 0.0, seed, probs=probs)


def planted_predicate(schema, planted: Planted):
    """Translate a planted ``{feature: value}`` dict into a canonical predicate."""
    out = []
    for name, value in planted.items():
        f = schema.index(name)
        out.append((f, schema.domains[f].values.index(value)))
    return tuple(sorted(out))


def encode_all(raw: RawDataset, preds: Sequence[PredictionSet], top_j: int = 100,
               num_bins: int = 10, schema=None):
    from .schema import encode, infer_schema

    schema = schema or infer_schema(raw, top_j, num_bins)
    return encode(raw, list(preds), schema)


def write_csv(raw: RawDataset, preds: PredictionSet, data_path, pred_path,
              label_column: str = "label", baseline: Optional[PredictionSet] = None,
              baseline_path=None) -> None:
    import csv

    names = raw.feature_names
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [label_column])
        for i in range(raw.num_rows):
            w.writerow([("" if raw.columns[c][i] is None else raw.columns[c][i]) for c in names]
                       + [int(raw.labels[i])])
    for p, path in ((preds, pred_path), (baseline, baseline_path)):
        if p is None:
            continue
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["row_index", "score"])
            for i, s in enumerate(p.scores):
                w.writerow([i, repr(float(s))])
