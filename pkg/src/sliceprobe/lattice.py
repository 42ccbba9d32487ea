"""Canonical conjunctive predicates and candidate generation.

A singleton predicate is a ``(feature_id, value_id)`` pair. A predicate is a
tuple of singletons sorted by feature id with at most one singleton per
feature; the empty tuple is the always-true predicate of the overall slice.
Plain tuples keep predicates hashable and cheap to compare.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple

from .schema import OTHER_LABEL, CategoricalDomain, FeatureSchema, NumericDomain

Singleton = Tuple[int, int]
Predicate = Tuple[Singleton, ...]

OVERALL: Predicate = ()
CONFLICT = None

_AND = " AND "


def canonical(singletons: Iterable[Singleton]) -> Predicate:
    pred = tuple(sorted(set(singletons)))
    features = [f for f, _ in pred]
    if len(set(features)) != len(features):
        raise ValueError(f"more than one singleton per feature: {pred}")
    return pred


def conjoin(base: Predicate, s: Singleton) -> Optional[Predicate]:
    """``base AND s``, or ``CONFLICT`` when ``base`` already binds s's feature."""
    f = s[0]
    for i, (g, _) in enumerate(base):
        if g == f:
            return CONFLICT
        if g > f:
            return base[:i] + (s,) + base[i:]
    return base + (s,)


def is_subslice(child: Predicate, parent: Predicate) -> bool:
    """True iff every row matching ``child`` also matches ``parent`` by syntax."""
    if len(parent) > len(child):
        return False
    it = iter(child)
    return all(any(c == p for c in it) for p in parent)


def singletons(schema: FeatureSchema) -> List[Singleton]:
    return [(f, v) for f, size in enumerate(schema.domain_sizes) for v in range(size)]


def enumerate_layer(schema: FeatureSchema, level: int) -> Iterator[Predicate]:
    if level < 1:
        raise ValueError("cross size must be >= 1")
    sizes = schema.domain_sizes
    for feats in itertools.combinations(range(len(sizes)), level):
        for vals in itertools.product(*(range(sizes[f]) for f in feats)):
            yield tuple(zip(feats, vals))


def layer_size(schema: FeatureSchema, level: int) -> int:
    """Number of predicates in a layer: elementary symmetric sum of domain sizes."""
    e = [1] + [0] * level
    for s in schema.domain_sizes:
        for k in range(level, 0, -1):
            e[k] += e[k - 1] * s
    return e[level]


def search_space_size(schema: FeatureSchema, max_cross_size: int) -> int:
    return sum(layer_size(schema, level) for level in range(1, max_cross_size + 1))


class PruneIndex:
    """Members of the significant and too-small sets, keyed by first singleton.

    A candidate is pruned when it is a sub-slice (predicate superset) of any
    member. Only members whose first singleton appears in the candidate can
    qualify, so lookups touch at most ``len(candidate)`` buckets.
    """

    def __init__(self, members: Iterable[Predicate] = ()):
        self._by_first: Dict[Singleton, List[Predicate]] = {}
        self._members: Set[Predicate] = set()
        self._has_overall = False
        for m in members:
            self.add(m)

    def add(self, pred: Predicate) -> None:
        if pred in self._members:
            return
        self._members.add(pred)
        if not pred:
            self._has_overall = True
        else:
            self._by_first.setdefault(pred[0], []).append(pred)

    def __contains__(self, pred) -> bool:
        return pred in self._members

    def __len__(self):
        return len(self._members)

    def __iter__(self):
        return iter(self._members)

    def covers(self, candidate: Predicate) -> bool:
        """True iff ``candidate`` is a sub-slice of some member."""
        if self._has_overall:
            return True
        for s in candidate:
            for m in self._by_first.get(s, ()):
                if is_subslice(candidate, m):
                    return True
        return False


def expand(base: Predicate, schema_singletons: List[Singleton], prune: PruneIndex,
           max_cross_size: int, seen: Set[Predicate]) -> List[Predicate]:
    """One-singleton refinements of ``base`` that survive pruning and dedupe.

    Returned predicates are added to ``seen``.
    """
    if len(base) >= max_cross_size:
        return []
    out = []
    for s in schema_singletons:
        cand = conjoin(base, s)
        if cand is CONFLICT or cand in seen or prune.covers(cand):
            continue
        seen.add(cand)
        out.append(cand)
    return out


# -- rendering ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def render_singleton(schema: FeatureSchema, s: Singleton) -> str:
    f, v = s
    name, dom = schema.names[f], schema.domains[f]
    if isinstance(dom, NumericDomain):
        lo, hi = dom.bounds(v)
        close = "]" if v == dom.size - 1 else ")"
        return f"{name}∈[{_fmt(lo)},{_fmt(hi)}{close}"
    return f"{name}={dom.label(v)}"


def render(schema: FeatureSchema, pred: Predicate) -> str:
    if not pred:
        return "OVERALL"
    return _AND.join(render_singleton(schema, s) for s in pred)


def parse(schema: FeatureSchema, text: str) -> Predicate:
    """Inverse of :func:`render` for the given schema."""
    text = text.strip()
    if text == "OVERALL":
        return OVERALL
    out = []
    for part in text.split(_AND):
        if "∈[" in part:
            name, rng = part.split("∈[", 1)
            f = schema.index(name)
            dom = schema.domains[f]
            if not isinstance(dom, NumericDomain):
                raise ValueError(f"{name} is not numeric")
            lo = float(rng.split(",", 1)[0])
            try:
                v = dom.edges.index(lo)
            except ValueError:
                raise ValueError(f"no bin of {name} starts at {lo}") from None
        else:
            name, label = part.split("=", 1)
            f = schema.index(name)
            dom = schema.domains[f]
            if not isinstance(dom, CategoricalDomain):
                raise ValueError(f"{name} is not categorical")
            if label == OTHER_LABEL and dom.has_other:
                v = dom.other_id
            else:
                v = dom.values.index(label)
        out.append((f, v))
    return canonical(out)


def sort_key(pred: Predicate):
    return (len(pred), pred)


def ceil_fraction(total: int, fraction: float) -> int:
    return max(1, math.ceil(total * fraction))
