"""Mergeable metric combiners for binary classification.

Every metric is reduced to a fixed-length vector of weighted sufficient
statistics. Accumulation is a weighted sum of per-example contributions, so
merging two partial accumulators is element-wise addition. The same layout is
used by the vectorized evaluator, which stores stats in arrays with a trailing
axis of length ``Metric.stat_size``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

LOG_LOSS_EPS = 1e-7


class MetricName(str, enum.Enum):
    ACCURACY = "accuracy"
    PRECISION = "precision"
    RECALL = "recall"
    F1 = "f1"
    AUC = "auc"
    LOG_LOSS = "log_loss"


_THRESHOLDED = {MetricName.ACCURACY, MetricName.PRECISION, MetricName.RECALL, MetricName.F1}

# confusion-cell column order for thresholded metrics
TP, FP, TN, FN = range(4)


@dataclass(frozen=True)
class Metric:
    """A metric kind plus its configuration.

    Two accumulators can only be merged when their ``Metric`` compares equal.
    """

    name: MetricName
    threshold: float = 0.5
    num_buckets: int = 128

    def __post_init__(self):
        object.__setattr__(self, "name", MetricName(self.name))
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.num_buckets < 2:
            raise ValueError(f"num_buckets must be >= 2, got {self.num_buckets}")

    @property
    def stat_size(self) -> int:
        if self.name in _THRESHOLDED:
            return 4
        if self.name is MetricName.AUC:
            return 2 * self.num_buckets
        return 2

    def row_stats(self, labels, scores) -> np.ndarray:
        """Per-example contribution at unit weight, shape ``(n, stat_size)``."""
        labels = np.asarray(labels)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size and (not np.all(np.isfinite(scores)) or scores.min() < 0.0 or scores.max() > 1.0):
            raise ValueError("scores must be finite and within [0, 1]")
        pos = labels == 1
        out = np.zeros((labels.shape[0], self.stat_size), dtype=np.float64)
        rows = np.arange(labels.shape[0])
        if self.name in _THRESHOLDED:
            pred = scores >= self.threshold
            cell = np.where(pred, np.where(pos, TP, FP), np.where(pos, FN, TN))
            out[rows, cell] = 1.0
        elif self.name is MetricName.AUC:
            bucket = np.minimum((scores * self.num_buckets).astype(np.int64), self.num_buckets - 1)
            # positives in [0, nb), negatives in [nb, 2nb)
            out[rows, bucket + np.where(pos, 0, self.num_buckets)] = 1.0
        else:
            s = np.clip(scores, LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS)
            out[:, 0] = -np.where(pos, np.log(s), np.log1p(-s))
            out[:, 1] = 1.0
        return out

    def extract_array(self, stats) -> np.ndarray:
        """Metric values for an array of stat vectors; NaN marks UNDEFINED."""
        stats = np.asarray(stats, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.name in _THRESHOLDED:
                tp, fp, tn, fn = (stats[..., i] for i in range(4))
                if self.name is MetricName.ACCURACY:
                    return _safe_div(tp + tn, tp + fp + tn + fn)
                precision = _safe_div(tp, tp + fp)
                recall = _safe_div(tp, tp + fn)
                if self.name is MetricName.PRECISION:
                    return precision
                if self.name is MetricName.RECALL:
                    return recall
                # 2PR/(P+R) rewritten on counts; 0 when TP == 0
                f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
                return np.where(np.isnan(precision) | np.isnan(recall), np.nan, f1)
            if self.name is MetricName.AUC:
                nb = self.num_buckets
                pos = stats[..., :nb]
                neg = stats[..., nb:]
                neg_below = np.cumsum(neg, axis=-1) - neg
                concordant = np.sum(pos * (neg_below + 0.5 * neg), axis=-1)
                return _safe_div(concordant, pos.sum(axis=-1) * neg.sum(axis=-1))
            return _safe_div(stats[..., 0], stats[..., 1])


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


class MetricAccumulator:
    """Weighted combiner state for one metric on one slice."""

    __slots__ = ("metric", "stats")

    def __init__(self, metric: Metric, stats: Optional[np.ndarray] = None):
        self.metric = metric
        if stats is None:
            stats = np.zeros(metric.stat_size, dtype=np.float64)
        self.stats = stats

    def add(self, label: int, score: float, weight: float = 1.0) -> "MetricAccumulator":
        if not math.isfinite(weight) or weight < 0:
            raise ValueError(f"weight must be finite and non-negative, got {weight}")
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"score outside [0, 1]: {score}")
        if weight:
            self.stats += weight * self.metric.row_stats([label], [score])[0]
        return self

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        if other.metric != self.metric:
            raise ValueError(f"cannot merge {self.metric} with {other.metric}")
        return MetricAccumulator(self.metric, self.stats + other.stats)

    def extract(self) -> Optional[float]:
        """Metric value, or None when undefined (zero denominator)."""
        value = float(self.metric.extract_array(self.stats))
        return None if math.isnan(value) else value

    def __repr__(self):
        return f"MetricAccumulator({self.metric.name.value}, stats={self.stats.tolist()})"


def acc_new(metric: Metric) -> MetricAccumulator:
    return MetricAccumulator(metric)


def acc_add(acc: MetricAccumulator, label: int, score: float, weight: float = 1.0) -> MetricAccumulator:
    return acc.add(label, score, weight)


def acc_merge(a: MetricAccumulator, b: MetricAccumulator) -> MetricAccumulator:
    return a.merge(b)


def extract(acc: MetricAccumulator) -> Optional[float]:
    return acc.extract()
