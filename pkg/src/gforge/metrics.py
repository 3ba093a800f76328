"""Span-matching criteria and precision/recall/F1 scoring.

Four criteria are supported: strict or soft span boundaries, each with or
without category agreement. Pairing is a maximum-cardinality one-to-one
bipartite matching, so scores do not depend on input order and are well
defined when one prediction overlaps several gold spans.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .corpus import Annotation, Category


class MixedDocuments(Exception):
    """Annotations from different documents were passed to one matching."""


class EmptyBatch(Exception):
    """An aggregate over documents was requested for an empty batch."""


class Boundary(Enum):
    STRICT = "strict"
    SOFT = "soft"


@dataclass(frozen=True)
class MatchMode:
    """One of the four evaluation criteria."""

    boundary: Boundary
    category_aware: bool

    @property
    def label(self) -> str:
        base = "Strict Match" if self.boundary is Boundary.STRICT else "Soft Match"
        return base if self.category_aware else f"{base} (w/o Category)"

    @property
    def key(self) -> str:
        """Stable identifier used in persisted records."""
        suffix = "" if self.category_aware else "_no_category"
        return f"{self.boundary.value}{suffix}"


STRICT = MatchMode(Boundary.STRICT, category_aware=True)
STRICT_NO_CATEGORY = MatchMode(Boundary.STRICT, category_aware=False)
SOFT = MatchMode(Boundary.SOFT, category_aware=True)
SOFT_NO_CATEGORY = MatchMode(Boundary.SOFT, category_aware=False)

#: Report column order: strict before soft, category-aware first.
ALL_MODES = (STRICT, STRICT_NO_CATEGORY, SOFT, SOFT_NO_CATEGORY)

_MODES_BY_KEY = {mode.key: mode for mode in ALL_MODES}


def mode_from_key(key: str) -> MatchMode:
    return _MODES_BY_KEY[key]


def spans_compatible(a: Annotation, b: Annotation, boundary: Boundary) -> bool:
    """Strict: identical offsets. Soft: overlap in >= 1 character position."""
    if boundary is Boundary.STRICT:
        return a.start == b.start and a.end == b.end
    return a.start < b.end and b.start < a.end


def compatible(a: Annotation, b: Annotation, mode: MatchMode) -> bool:
    if mode.category_aware and a.category is not b.category:
        return False
    return spans_compatible(a, b, mode.boundary)


@dataclass(frozen=True)
class PRF:
    """Precision/recall/F1 plus the counts they derive from.

    ``matched_pred`` and ``matched_gold`` coincide (the pair count) for
    any whole-set one-to-one matching; they differ only for per-category
    rows under a boundary-only matching, where matched predictions and
    matched gold spans of a category are attributed separately.
    """

    matched_pred: int
    matched_gold: int
    n_pred: int
    n_gold: int

    @classmethod
    def from_counts(cls, matched: int, n_pred: int, n_gold: int) -> "PRF":
        return cls(matched, matched, n_pred, n_gold)

    @property
    def matched(self) -> int:
        return self.matched_pred

    @property
    def precision(self) -> float:
        return self.matched_pred / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.matched_gold / self.n_gold if self.n_gold else 0.0

    @property
    def f1(self) -> float:
        if self.matched_pred == self.matched_gold:
            total = self.n_pred + self.n_gold
            return 2 * self.matched_pred / total if total else 0.0
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def micro_prf(parts: list[PRF]) -> PRF:
    """Micro-aggregate: sum the counts, then derive P/R/F1."""
    return PRF(
        matched_pred=sum(p.matched_pred for p in parts),
        matched_gold=sum(p.matched_gold for p in parts),
        n_pred=sum(p.n_pred for p in parts),
        n_gold=sum(p.n_gold for p in parts),
    )


def mean_document_f1(per_doc: list[PRF]) -> float:
    """Macro mean of per-document F1 values (the moderation gate value)."""
    if not per_doc:
        raise EmptyBatch("mean F1 over zero documents is undefined")
    return sum(p.f1 for p in per_doc) / len(per_doc)


@dataclass(frozen=True)
class MatchResult:
    """One-to-one pairing plus the unmatched residue.

    A span-compatible pair whose categories differ is one category
    mismatch, not a false positive plus a false negative; mismatches are
    populated only in category-aware modes.
    """

    pairs: tuple[tuple[Annotation, Annotation], ...]
    false_positives: tuple[Annotation, ...]
    false_negatives: tuple[Annotation, ...]
    category_mismatches: tuple[tuple[Annotation, Annotation], ...]

    @property
    def n_pred(self) -> int:
        return len(self.pairs) + len(self.false_positives) + len(self.category_mismatches)

    @property
    def n_gold(self) -> int:
        return len(self.pairs) + len(self.false_negatives) + len(self.category_mismatches)


def _hopcroft_karp(adjacency: list[list[int]], n_right: int) -> list[int]:
    """Maximum bipartite matching; returns match_left (right index or -1).

    Index-based adjacency keeps the result deterministic for a fixed
    input order: no sets, no hash iteration.
    """
    inf = float("inf")
    n_left = len(adjacency)
    match_left = [-1] * n_left
    match_right = [-1] * n_right
    dist = [0.0] * n_left

    def bfs() -> bool:
        queue: deque[int] = deque()
        for u in range(n_left):
            if match_left[u] == -1:
                dist[u] = 0.0
                queue.append(u)
            else:
                dist[u] = inf
        found = inf
        while queue:
            u = queue.popleft()
            if dist[u] >= found:
                continue
            for v in adjacency[u]:
                w = match_right[v]
                if w == -1:
                    found = min(found, dist[u] + 1)
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found != inf

    def dfs(u: int) -> bool:
        for v in adjacency[u]:
            w = match_right[v]
            if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                match_left[u] = v
                match_right[v] = u
                return True
        dist[u] = inf
        return False

    while bfs():
        for u in range(n_left):
            if match_left[u] == -1:
                dfs(u)
    return match_left


def _match_indices(
    pred: list[Annotation], gold: list[Annotation], mode: MatchMode
) -> tuple[list[tuple[int, int]], list[int], list[int], list[tuple[int, int]]]:
    """Match already-sorted lists; returns (pairs, fp, fn, mismatches) as indices."""
    adjacency = [
        [j for j, g in enumerate(gold) if compatible(p, g, mode)] for p in pred
    ]
    match_left = _hopcroft_karp(adjacency, len(gold))
    pairs = [(i, j) for i, j in enumerate(match_left) if j != -1]
    left_pred = [i for i, j in enumerate(match_left) if j == -1]
    taken = {j for _, j in pairs}
    left_gold = [j for j in range(len(gold)) if j not in taken]

    mismatches: list[tuple[int, int]] = []
    if mode.category_aware and left_pred and left_gold:
        # Any boundary-compatible leftover pair necessarily differs in
        # category, otherwise the first matching was not maximal.
        relaxed = [
            [
                k
                for k, j in enumerate(left_gold)
                if spans_compatible(pred[i], gold[j], mode.boundary)
            ]
            for i in left_pred
        ]
        second = _hopcroft_karp(relaxed, len(left_gold))
        mismatches = [
            (left_pred[i], left_gold[k]) for i, k in enumerate(second) if k != -1
        ]
        mismatched_pred = {i for i, _ in mismatches}
        mismatched_gold = {j for _, j in mismatches}
        left_pred = [i for i in left_pred if i not in mismatched_pred]
        left_gold = [j for j in left_gold if j not in mismatched_gold]

    return pairs, left_pred, left_gold, mismatches


def _check_same_document(pred: list[Annotation], gold: list[Annotation]) -> None:
    doc_ids = {a.doc_id for a in pred} | {a.doc_id for a in gold}
    if len(doc_ids) > 1:
        raise MixedDocuments(f"annotations span documents {sorted(doc_ids)}")


def _sorted(annotations: list[Annotation]) -> list[Annotation]:
    return sorted(annotations, key=lambda a: (*a.sort_key(), a.concept_id or ""))


def match_annotations(
    pred: list[Annotation], gold: list[Annotation], mode: MatchMode
) -> MatchResult:
    """Pair predictions with gold annotations under ``mode``.

    The pairing maximizes cardinality; in category-aware modes the
    leftovers are re-matched with the category constraint dropped and
    those extra pairs become category mismatches. Inputs are sorted by
    (start, end, category) first, which fixes tie-breaking.
    """
    _check_same_document(pred, gold)
    ps, gs = _sorted(pred), _sorted(gold)
    pairs, fp, fn, mismatches = _match_indices(ps, gs, mode)
    return MatchResult(
        pairs=tuple((ps[i], gs[j]) for i, j in pairs),
        false_positives=tuple(ps[i] for i in fp),
        false_negatives=tuple(gs[j] for j in fn),
        category_mismatches=tuple((ps[i], gs[j]) for i, j in mismatches),
    )


def score(result: MatchResult) -> PRF:
    """PRF over a MatchResult; category mismatches count as unmatched."""
    return PRF.from_counts(len(result.pairs), result.n_pred, result.n_gold)


def evaluate(pred: list[Annotation], gold: list[Annotation], mode: MatchMode) -> PRF:
    return score(match_annotations(pred, gold, mode))


def per_category_scores(
    pred: list[Annotation], gold: list[Annotation], mode: MatchMode
) -> dict[Category, PRF]:
    """One PRF per category.

    Category-aware: predictions and gold spans labeled with the category
    are matched against each other. Without category: one boundary-only
    matching runs over the full sets, and matched items are attributed to
    rows by their own label, precision by the prediction side and recall
    by the gold side.
    """
    _check_same_document(pred, gold)
    out: dict[Category, PRF] = {}
    if mode.category_aware:
        for cat in Category:
            pc = _sorted([a for a in pred if a.category is cat])
            gc = _sorted([a for a in gold if a.category is cat])
            pairs, _, _, _ = _match_indices(pc, gc, mode)
            out[cat] = PRF.from_counts(len(pairs), len(pc), len(gc))
        return out

    ps, gs = _sorted(pred), _sorted(gold)
    pairs, _, _, _ = _match_indices(ps, gs, mode)
    matched_pred_idx = {i for i, _ in pairs}
    matched_gold_idx = {j for _, j in pairs}
    for cat in Category:
        out[cat] = PRF(
            matched_pred=sum(
                1 for i in matched_pred_idx if ps[i].category is cat
            ),
            matched_gold=sum(
                1 for j in matched_gold_idx if gs[j].category is cat
            ),
            n_pred=sum(1 for a in ps if a.category is cat),
            n_gold=sum(1 for a in gs if a.category is cat),
        )
    return out
