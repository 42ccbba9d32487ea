"""Sliced metric evaluation with Poisson-bootstrap replicates.

The pipeline shape is: match each example against the candidate predicates,
fan out one (predicate, label, score) contribution per match, reduce per
predicate and per replicate into metric accumulators, then form per-slice
metric differences.

Rows are split into fixed partitions. Each partition builds partial
accumulator stats independently; partials are merged by summation in
partition order. Partition boundaries depend only on the dataset size and the
metric, so results do not depend on the number of workers.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import sparse

from .lattice import OVERALL, Predicate
from .metrics import Metric
from .schema import EncodedDataset, EncodedExample

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Poisson(1) CDF, truncated where the remaining tail is below 2**-60
_POISSON1_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(20)])

_STATS_BUDGET_BYTES = 32 << 20


class DiffMode(str, enum.Enum):
    VS_OVERALL = "vs_overall"
    VS_BASELINE = "vs_baseline"


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def poisson_weights(seed: int, replicates, rows) -> np.ndarray:
    """Poisson(1) bootstrap counts, shape ``(len(replicates), len(rows))``.

    Each entry is a pure function of (seed, replicate, row): a counter-based
    hash is turned into a uniform and inverted through the Poisson(1) CDF.
    Replicate 0 is the unresampled data and always has weight 1.
    """
    reps = np.atleast_1d(np.asarray(replicates, dtype=np.uint64))
    rows = np.atleast_1d(np.asarray(rows, dtype=np.uint64))
    key = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(reps))
    with np.errstate(over="ignore"):
        h = _splitmix64(key[:, None] + _splitmix64(rows)[None, :] * _GOLDEN)
    u = (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    w = np.searchsorted(_POISSON1_CDF, u, side="right").astype(np.float64)
    w[reps == 0, :] = 1.0
    return w


def poisson_weight(seed: int, replicate: int, row: int) -> int:
    return int(poisson_weights(seed, [replicate], [row])[0, 0])


def extract_slice_keys(example: EncodedExample, candidates: Iterable[Predicate]) -> List[Predicate]:
    """Candidates whose every singleton matches the example (MISSING never matches)."""
    vals = example.values
    return [p for p in candidates if all(vals[f] == v for f, v in p)]


@dataclass
class EvaluationRequest:
    candidates: Sequence[Predicate]
    metric: Metric
    mode: DiffMode = DiffMode.VS_OVERALL
    replicates: int = 20
    seed: int = 0

    def __post_init__(self):
        self.mode = DiffMode(self.mode)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass
class SliceEvaluation:
    """Evaluation of one nonempty slice.

    ``deltas`` has one entry per replicate 1..B; NaN marks a replicate where
    either side of the difference was undefined.
    """

    predicate: Predicate
    size: int
    point_delta: Optional[float]
    deltas: np.ndarray
    metric: Optional[float]
    reference_metric: Optional[float]

    @property
    def usable_deltas(self) -> np.ndarray:
        return self.deltas[~np.isnan(self.deltas)]

    @property
    def dropped(self) -> int:
        return int(np.isnan(self.deltas).sum())

    @property
    def untestable(self) -> bool:
        return self.usable_deltas.size < 2


def _nan_to_none(x) -> Optional[float]:
    x = float(x)
    return None if math.isnan(x) else x


class SliceEvaluator:
    """Evaluates candidate sets against one encoded dataset.

    Model 0 of ``data`` is the model under test; in baseline mode model 1 is
    the baseline. Overall-slice replicate metrics are computed once.
    """

    def __init__(self, data: EncodedDataset, metric: Metric, mode=DiffMode.VS_OVERALL,
                 replicates: int = 20, seed: int = 0, workers: int = 1):
        self.data = data
        self.metric = metric
        self.mode = DiffMode(mode)
        self.replicates = int(replicates)
        self.seed = int(seed)
        self.workers = max(1, int(workers))
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        n_models = 2 if self.mode is DiffMode.VS_BASELINE else 1
        if data.scores.shape[0] < n_models:
            raise ValueError(f"{self.mode.value} needs {n_models} prediction set(s)")
        self._models = list(range(n_models))
        n = data.num_rows
        width = (self.replicates + 1) * metric.stat_size * 8
        rows_per_part = int(min(max(_STATS_BUDGET_BYTES // width, 256), 65536))
        self._parts = [(a, min(a + rows_per_part, n)) for a in range(0, n, rows_per_part)]
        self._block = max(64, _STATS_BUDGET_BYTES * 2 // width)
        self._row_stats = [metric.row_stats(data.labels, data.scores[m]) for m in self._models]
        overall = self._values([OVERALL])
        self.overall_values = [v[0] for v in overall]  # per model: (B+1,)
        self.evaluated_rows = 0

    # -- reduction -----------------------------------------------------------

    def _partial(self, candidates: Sequence[Predicate], part):
        """Partial stats for one row partition: sizes (C,), stats per model (C, B+1, D)."""
        start, stop = part
        codes = self.data.codes[start:stop]
        n = stop - start
        cache: Dict = {}

        def mask(s):
            m = cache.get(s)
            if m is None:
                m = cache[s] = codes[:, s[0]] == s[1]
            return m

        indptr = [0]
        chunks = []
        all_rows = np.arange(n)
        for pred in candidates:
            if not pred:
                idx = all_rows
            else:
                m = mask(pred[0])
                for s in pred[1:]:
                    m = m & mask(s)
                idx = np.flatnonzero(m)
            chunks.append(idx)
            indptr.append(indptr[-1] + idx.size)
        indices = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        incidence = sparse.csr_matrix(
            (np.ones(indices.size), indices, np.asarray(indptr)), shape=(len(candidates), n))
        sizes = np.diff(incidence.indptr)
        w = poisson_weights(self.seed, np.arange(self.replicates + 1), np.arange(start, stop))
        out = []
        D = self.metric.stat_size
        for m in self._models:
            rs = self._row_stats[m][start:stop]
            y = (w.T[:, :, None] * rs[:, None, :]).reshape(n, -1)
            out.append(np.asarray(incidence @ y).reshape(len(candidates), self.replicates + 1, D))
        return sizes, out

    def _reduce(self, candidates: Sequence[Predicate]):
        if self.workers > 1 and len(self._parts) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                partials = list(pool.map(lambda p: self._partial(candidates, p), self._parts))
        else:
            partials = [self._partial(candidates, p) for p in self._parts]
        sizes, stats = partials[0]
        sizes = sizes.copy()
        stats = [s.copy() for s in stats]
        for more_sizes, more_stats in partials[1:]:
            sizes += more_sizes
            for acc, extra in zip(stats, more_stats):
                acc += extra
        return sizes, stats

    def _values(self, candidates):
        _, stats = self._reduce(candidates)
        return [self.metric.extract_array(s) for s in stats]

    # -- public --------------------------------------------------------------

    def evaluate(self, candidates: Sequence[Predicate]) -> Dict[Predicate, SliceEvaluation]:
        """Evaluate candidates; slices matching no example are absent."""
        candidates = list(candidates)
        result: Dict[Predicate, SliceEvaluation] = {}
        self.evaluated_rows += len(candidates) * self.data.num_rows
        for lo in range(0, len(candidates), self._block):
            block = candidates[lo:lo + self._block]
            sizes, stats = self._reduce(block)
            vals = [self.metric.extract_array(s) for s in stats]
            if self.mode is DiffMode.VS_OVERALL:
                ref = np.broadcast_to(self.overall_values[0], vals[0].shape)
            else:
                ref = vals[1]
            delta = vals[0] - ref
            for i, pred in enumerate(block):
                if sizes[i] == 0:
                    continue
                result[pred] = SliceEvaluation(
                    predicate=pred,
                    size=int(sizes[i]),
                    point_delta=_nan_to_none(delta[i, 0]),
                    deltas=delta[i, 1:].copy(),
                    metric=_nan_to_none(vals[0][i, 0]),
                    reference_metric=_nan_to_none(ref[i, 0]),
                )
        return result

    def overall_evaluation(self) -> SliceEvaluation:
        return self.evaluate([OVERALL])[OVERALL]


def evaluate(data: EncodedDataset, request: EvaluationRequest, workers: int = 1) -> Dict[Predicate, SliceEvaluation]:
    ev = SliceEvaluator(data, request.metric, request.mode, request.replicates, request.seed, workers)
    return ev.evaluate(request.candidates)


def overall_evaluation(data: EncodedDataset, request: EvaluationRequest, workers: int = 1) -> SliceEvaluation:
    ev = SliceEvaluator(data, request.metric, request.mode, request.replicates, request.seed, workers)
    return ev.overall_evaluation()
