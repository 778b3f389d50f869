"""Similarity, bidirectional nearest-neighbor search and alignment integration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from contea.errors import DanglingLinkError, DegenerateVectorError, OutputError, ParseError, PreconditionError


class Alignment(NamedTuple):
    e1: int
    e2: int
    score: float
    found_at: int


@dataclass(frozen=True)
class SimilarityMetric:
    kind: str = "csls"
    csls_k: int = 10

    def __post_init__(self):
        if self.kind not in ("cosine", "csls"):
            raise PreconditionError(f"unknown similarity {self.kind!r}")
        if self.csls_k < 1:
            raise PreconditionError("csls_k must be >= 1")


class TrustworthyAlignment:
    """Scored predicted pairs ``(kg1 id, kg2 id, score, found_at)``.

    Stored sorted by ``(e1, e2)``. Construction checks finiteness only;
    conflict-freedom is checked where it is a precondition.
    """

    def __init__(self, pairs=()):
        items = [Alignment(int(a), int(b), float(s), int(t)) for a, b, s, t in pairs]
        for p in items:
            if not math.isfinite(p.score):
                raise PreconditionError(f"non-finite score for pair {(p.e1, p.e2)}")
        self.pairs = tuple(sorted(items, key=lambda p: (p.e1, p.e2, p.found_at)))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __eq__(self, other):
        return isinstance(other, TrustworthyAlignment) and self.pairs == other.pairs

    def __repr__(self):
        return f"TrustworthyAlignment({len(self.pairs)} pairs)"

    def pair_set(self) -> set:
        return {(p.e1, p.e2) for p in self.pairs}

    def is_conflict_free(self) -> bool:
        left = [p.e1 for p in self.pairs]
        right = [p.e2 for p in self.pairs]
        return len(set(left)) == len(left) and len(set(right)) == len(right)


def _csls_k(k: int, n: int) -> int:
    # capped so that it stays below the candidate count where possible
    return max(1, min(k, n - 1))


def _mean_topk(values: np.ndarray, k: int, axis: int) -> np.ndarray:
    n = values.shape[axis]
    if k >= n:
        return values.mean(axis=axis)
    part = np.partition(values, n - k, axis=axis)
    top = part[n - k :] if axis == 0 else part[:, n - k :]
    return np.sort(top, axis=axis).mean(axis=axis)


def similarity(emb_a: np.ndarray, emb_b: np.ndarray, metric: SimilarityMetric) -> np.ndarray:
    """Cosine or CSLS similarity matrix of shape ``(len(emb_a), len(emb_b))``.

    For CSLS, ``k`` is capped at ``candidates - 1`` (and at least 1).
    """
    emb_a = np.atleast_2d(np.asarray(emb_a, dtype=np.float64))
    emb_b = np.atleast_2d(np.asarray(emb_b, dtype=np.float64))
    if emb_a.shape[0] < 1 or emb_b.shape[0] < 1:
        raise PreconditionError("similarity needs at least one row on each side")
    na = np.linalg.norm(emb_a, axis=1, keepdims=True)
    nb = np.linalg.norm(emb_b, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateVectorError("zero vector has no cosine similarity")
    cos = (emb_a / na) @ (emb_b / nb).T
    if metric.kind == "cosine":
        return cos
    r_b = _mean_topk(cos, _csls_k(metric.csls_k, cos.shape[1]), axis=1)
    r_a = _mean_topk(cos, _csls_k(metric.csls_k, cos.shape[0]), axis=0)
    return 2.0 * cos - r_b[:, None] - r_a[None, :]


def mutual_argmax(scores: np.ndarray):
    """Index pairs ``(i, j)`` that are each other's row/column argmax (first max wins)."""
    best_j = np.argmax(scores, axis=1)
    best_i = np.argmax(scores, axis=0)
    rows = np.flatnonzero(best_i[best_j] == np.arange(scores.shape[0]))
    return rows, best_j[rows]


def bidirectional_search(emb_a, emb_b, metric: SimilarityMetric, ids_a=None, ids_b=None, found_at: int = 0) -> TrustworthyAlignment:
    """Keep ``(a, b)`` only when each is the other's nearest neighbor.

    ``ids_a``/``ids_b`` name the rows (default: row positions); pass them in
    ascending order so that ties go to the lowest entity id.
    """
    scores = similarity(emb_a, emb_b, metric)
    ids_a = np.arange(scores.shape[0]) if ids_a is None else np.asarray(ids_a)
    ids_b = np.arange(scores.shape[1]) if ids_b is None else np.asarray(ids_b)
    rows, cols = mutual_argmax(scores)
    return TrustworthyAlignment(
        (ids_a[i], ids_b[j], scores[i, j], found_at) for i, j in zip(rows, cols)
    )


def integrate_alignment(old: TrustworthyAlignment, new: TrustworthyAlignment, delta=None) -> TrustworthyAlignment:
    """Merge new predictions into old ones, resolving conflicts by score.

    A pair survives unless it shares an entity with a differently-matched
    pair of higher score; on equal scores the old pair wins. Pairs present
    in both inputs keep their old record. Pairs between two new entities
    (see ``delta``) can never conflict with old pairs and are always kept.
    """
    if not old.is_conflict_free() or not new.is_conflict_free():
        raise PreconditionError("integrate_alignment inputs must be conflict-free")
    old_keys = {(p.e1, p.e2) for p in old}
    fresh = [p for p in new if (p.e1, p.e2) not in old_keys]
    old_by1 = {p.e1: p for p in old}
    old_by2 = {p.e2: p for p in old}
    beaten_old = set()
    kept_new = []
    for p in fresh:
        rivals = [q for q in (old_by1.get(p.e1), old_by2.get(p.e2)) if q is not None]
        if all(p.score > q.score for q in rivals):
            kept_new.append(p)
        for q in rivals:
            if p.score > q.score:
                beaten_old.add((q.e1, q.e2))
    survivors = [p for p in old if (p.e1, p.e2) not in beaten_old] + kept_new
    return TrustworthyAlignment(survivors)


def write_alignment(path, ta: TrustworthyAlignment, kg1=None, kg2=None) -> None:
    """TSV export ``entity1<TAB>entity2<TAB>score<TAB>found_at`` (names when KGs given)."""
    lines = []
    for p in ta:
        a = kg1.entity_names[p.e1] if kg1 is not None else str(p.e1)
        b = kg2.entity_names[p.e2] if kg2 is not None else str(p.e2)
        lines.append(f"{a}\t{b}\t{p.score!r}\t{p.found_at}\n")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def read_alignment(path, kg1=None, kg2=None) -> TrustworthyAlignment:
    path = Path(path)
    items = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(path, line_no, f"expected 4 tab-separated fields, got {len(parts)}")
        a, b, score, found_at = parts
        try:
            if kg1 is not None:
                i, j = kg1.entity_index[a], kg2.entity_index[b]
            else:
                i, j = int(a), int(b)
            items.append((i, j, float(score), int(found_at)))
        except KeyError as exc:
            raise DanglingLinkError(f"{path}:{line_no}: unknown entity {exc}") from None
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return TrustworthyAlignment(items)
