"""Slice search strategies: batch, iterative and priority.

All three share one evaluation round (:meth:`SliceSearch._round`) which tests
candidates, moves small slices to the too-small set, significant slices to the
significant set, and returns the rest as the next frontier.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
import random
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from .evaluator import DiffMode, SliceEvaluation, SliceEvaluator
from .lattice import (OVERALL, Predicate, PruneIndex, enumerate_layer, expand,
                      search_space_size, singletons)
from .metrics import Metric, MetricName
from .schema import EncodedDataset, FeatureSchema
from .stats import SliceStat, StandardError, WantedDirection, classify

log = logging.getLogger(__name__)

DEFAULT_K_FRACTION = 0.12


class Strategy(str, enum.Enum):
    BATCH = "batch"
    ITERATIVE = "iterative"
    PRIORITY = "priority"


class PriorityScore(str, enum.Enum):
    P_VALUE = "p_value"
    RANDOM = "random"
    BREADTH_FIRST = "breadth_first"


@dataclass
class SearchConfig:
    strategy: Strategy = Strategy.ITERATIVE
    max_cross_size: int = 3
    min_slice_size: int = 1
    alpha: float = 0.01
    replicates: int = 20
    k_per_iter: Optional[float] = None  # None: 12% of the batch search space
    iterations: int = 5
    seed: int = 0
    mode: DiffMode = DiffMode.VS_OVERALL
    metric: Metric = field(default_factory=lambda: Metric(MetricName.ACCURACY))
    direction: WantedDirection = WantedDirection.LOWER
    priority_score: PriorityScore = PriorityScore.P_VALUE
    expand_untestable: bool = False
    standard_error: StandardError = StandardError.REPLICATE_SD
    workers: int = 1

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.mode = DiffMode(self.mode)
        self.direction = WantedDirection(self.direction)
        self.priority_score = PriorityScore(self.priority_score)
        self.standard_error = StandardError(self.standard_error)
        if self.max_cross_size < 1:
            raise ValueError("max_cross_size must be >= 1")
        if self.min_slice_size < 1:
            raise ValueError("min_slice_size must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2 for a t-test")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.k_per_iter is not None and not self.k_per_iter >= 1:
            raise ValueError("k_per_iter must be >= 1")

    def resolved_k(self, schema: FeatureSchema) -> float:
        if self.k_per_iter is not None:
            return self.k_per_iter
        return max(1, math.ceil(DEFAULT_K_FRACTION * search_space_size(schema, self.max_cross_size)))


@dataclass
class SliceResult:
    evaluation: SliceEvaluation
    stat: SliceStat
    iteration: int

    @property
    def predicate(self) -> Predicate:
        return self.evaluation.predicate

    @property
    def size(self) -> int:
        return self.evaluation.size


@dataclass
class IterationRecord:
    iteration: int
    generated: int
    nonempty: int
    significant: int
    too_small: int
    cumulative_generated: int
    estimated_nonempty: Optional[float] = None


@dataclass
class SearchReport:
    strategy: Strategy
    significant: List[SliceResult]  # maximal, sorted
    all_significant: List[SliceResult]
    evaluated: Dict[Predicate, SliceResult]
    iterations: List[IterationRecord]
    overall: SliceEvaluation
    wall_seconds: float = 0.0
    cpu_seconds: float = 0.0

    @property
    def candidates_evaluated(self) -> int:
        return sum(r.generated for r in self.iterations)

    @property
    def significant_predicates(self) -> set:
        return {r.predicate for r in self.significant}


class NonEmptyRate:
    """Running nonempty/generated ratio per cross size."""

    def __init__(self):
        self.candidates_seen: Dict[int, int] = {}
        self.nonempty_seen: Dict[int, int] = {}

    def update(self, level: int, generated: int, nonempty: int) -> None:
        self.candidates_seen[level] = self.candidates_seen.get(level, 0) + generated
        self.nonempty_seen[level] = self.nonempty_seen.get(level, 0) + nonempty

    def rate(self, level: int) -> Optional[float]:
        seen = self.candidates_seen.get(level, 0)
        return self.nonempty_seen.get(level, 0) / seen if seen else None

    def lookup(self, level: int) -> float:
        """Rate at ``level``, falling back to smaller cross sizes, else 1.0."""
        if level < 1:
            raise ValueError("cross size must be >= 1")
        for lv in range(level, 0, -1):
            r = self.rate(lv)
            if r is not None:
                return r
        return 1.0


def rate_lookup(level: int, table: NonEmptyRate) -> float:
    return table.lookup(level)


def directional_p_value(stat: SliceStat, wanted: WantedDirection) -> float:
    """One-sided p-value toward the wanted direction (two-sided for ANY).

    Slices that deviate the wrong way get a large score, so they are expanded
    last instead of first.
    """
    if wanted is WantedDirection.ANY or not stat.testable:
        return stat.p_value
    if stat.direction.value == wanted.value:
        return stat.p_value / 2.0
    return 1.0 - stat.p_value / 2.0


def proper_ancestors(pred: Predicate):
    for r in range(len(pred)):
        yield from itertools.combinations(pred, r)


def maximal_filter(slices):
    """Drop every predicate that is a sub-slice of another one in the set.

    Accepts predicates or :class:`SliceResult` objects.
    """
    items = list(slices)
    preds = {getattr(s, "predicate", s) for s in items}
    return [s for s in items
            if not any(a in preds for a in proper_ancestors(getattr(s, "predicate", s)))]


def _order(results: List[SliceResult]) -> List[SliceResult]:
    return sorted(results, key=lambda r: (r.stat.p_value, -r.size, len(r.predicate), r.predicate))


class SliceSearch:
    def __init__(self, config: SearchConfig, data: EncodedDataset,
                 progress: Optional[Callable[[IterationRecord], None]] = None):
        self.config = config
        self.data = data
        self.schema = data.schema
        self.progress = progress
        self.evaluator = SliceEvaluator(data, config.metric, config.mode, config.replicates,
                                        config.seed, config.workers)
        self.singletons = singletons(self.schema)
        self.significant: Dict[Predicate, SliceResult] = {}
        self.too_small: Dict[Predicate, SliceResult] = {}
        self.pruned = PruneIndex()
        self.seen: set = set()
        self.evaluated: Dict[Predicate, SliceResult] = {}
        self.iterations: List[IterationRecord] = []
        self.rates = NonEmptyRate()

    # -- shared round --------------------------------------------------------

    def _round(self, candidates: List[Predicate], iteration: int,
               estimated: Optional[float] = None) -> List[SliceResult]:
        cfg = self.config
        for c in candidates:
            # pruning soundness: nothing generated may sit under S or E
            assert not self.pruned.covers(c), c
        evals = self.evaluator.evaluate(candidates)
        frontier: List[SliceResult] = []
        n_sig = n_small = 0
        for pred in candidates:
            ev = evals.get(pred)
            if ev is None:
                continue
            stat = classify(pred, ev.size, ev.point_delta, ev.usable_deltas, cfg.alpha,
                            cfg.direction, cfg.standard_error)
            res = SliceResult(ev, stat, iteration)
            self.evaluated[pred] = res
            if ev.size < cfg.min_slice_size:
                self.too_small[pred] = res
                self.pruned.add(pred)
                n_small += 1
            elif stat.significant:
                self.significant[pred] = res
                self.pruned.add(pred)
                n_sig += 1
            elif stat.testable or cfg.expand_untestable:
                frontier.append(res)
        levels: Dict[int, List[int]] = {}
        for pred in candidates:
            g_ne = levels.setdefault(len(pred), [0, 0])
            g_ne[0] += 1
            g_ne[1] += pred in evals
        for level, (g, ne) in levels.items():
            self.rates.update(level, g, ne)
        prev = self.iterations[-1].cumulative_generated if self.iterations else 0
        rec = IterationRecord(iteration, len(candidates), len(evals), n_sig, n_small,
                              prev + len(candidates), estimated)
        self.iterations.append(rec)
        log.debug("iteration %d: %d candidates, %d nonempty, %d significant",
                  iteration, rec.generated, rec.nonempty, rec.significant)
        if self.progress:
            self.progress(rec)
        return frontier

    # -- strategies ----------------------------------------------------------

    def run_batch(self) -> None:
        cands = [p for level in range(1, self.config.max_cross_size + 1)
                 for p in enumerate_layer(self.schema, level)]
        self.seen.update(cands)
        self._round(cands, 1)

    def run_iterative(self) -> None:
        frontier = [OVERALL]
        for level in range(1, self.config.max_cross_size + 1):
            cands: List[Predicate] = []
            for base in frontier:
                cands.extend(expand(base, self.singletons, self.pruned,
                                    self.config.max_cross_size, self.seen))
            if not cands:
                break
            frontier = [r.predicate for r in self._round(cands, level)]

    def _priority_key(self, res: SliceResult, rng: random.Random):
        score = self.config.priority_score
        if score is PriorityScore.P_VALUE:
            head = directional_p_value(res.stat, self.config.direction)
        elif score is PriorityScore.BREADTH_FIRST:
            head = len(res.predicate)
        else:
            head = rng.random()
        return (head, -res.size, res.predicate)

    def run_priority(self) -> None:
        cfg = self.config
        budget = cfg.resolved_k(self.schema)
        rng = random.Random(cfg.seed)
        queue: list = []
        for i in range(1, cfg.iterations + 1):
            if i == 1:
                cands = expand(OVERALL, self.singletons, self.pruned, cfg.max_cross_size, self.seen)
                estimated = None
            else:
                if not queue:
                    break
                cands = []
                k = 0.0
                while k < budget and queue:
                    *_, base = heapq.heappop(queue)
                    for c in expand(base, self.singletons, self.pruned, cfg.max_cross_size, self.seen):
                        cands.append(c)
                        k += self.rates.lookup(len(c))
                estimated = k
            if not cands:
                if i == 1:
                    break
                self.iterations.append(IterationRecord(
                    i, 0, 0, 0, 0, self.iterations[-1].cumulative_generated, estimated))
                continue
            for res in self._round(cands, i, estimated):
                heapq.heappush(queue, (*self._priority_key(res, rng), res.predicate))

    def run(self) -> SearchReport:
        t0, c0 = time.perf_counter(), time.process_time()
        strategy = self.config.strategy
        if strategy is Strategy.BATCH:
            self.run_batch()
        elif strategy is Strategy.ITERATIVE:
            self.run_iterative()
        else:
            self.run_priority()
        all_sig = list(self.significant.values())
        return SearchReport(
            strategy=strategy,
            significant=_order(maximal_filter(all_sig)),
            all_significant=_order(all_sig),
            evaluated=self.evaluated,
            iterations=self.iterations,
            overall=self.evaluator.overall_evaluation(),
            wall_seconds=time.perf_counter() - t0,
            cpu_seconds=time.process_time() - c0,
        )


def run_search(config: SearchConfig, data: EncodedDataset, progress=None) -> SearchReport:
    return SliceSearch(config, data, progress).run()


def run_batch(config: SearchConfig, data: EncodedDataset, progress=None) -> SearchReport:
    return run_search(replace(config, strategy=Strategy.BATCH), data, progress)


def run_iterative(config: SearchConfig, data: EncodedDataset, progress=None) -> SearchReport:
    return run_search(replace(config, strategy=Strategy.ITERATIVE), data, progress)


def run_priority(config: SearchConfig, data: EncodedDataset, progress=None) -> SearchReport:
    return run_search(replace(config, strategy=Strategy.PRIORITY), data, progress)
