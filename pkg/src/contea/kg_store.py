"""Loading, indexing and growth validation of KG snapshot pairs.

Entity and relation names are opaque UTF-8 strings interned to dense integer
ids in first-occurrence order (head before tail, line by line). Alignment
pairs are stored as ``(kg1 local id, kg2 local id)``; the shared embedding
space places KG2 entity ``j`` at row ``kg1.num_entities + j``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from contea.errors import (
    DanglingLinkError,
    DatasetLayoutError,
    NonMonotonicGrowthError,
    ParseError,
    PreconditionError,
    RelationGrowthError,
    UnknownEntityError,
)

OUT = "out"
IN = "in"

TRIPLE_FILES = ("kg1_triples.tsv", "kg2_triples.tsv")
LINK_FILES = ("train_links.tsv", "valid_links.tsv", "test_links.tsv")


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """One KG at one timestamp.

    ``triples`` keeps file order (deduplicated) so that writing it back
    reproduces the same interning.
    """

    entity_names: tuple
    relation_names: tuple
    triples: tuple

    def __post_init__(self):
        n_ent, n_rel = len(self.entity_names), len(self.relation_names)
        for h, r, t in self.triples:
            if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
                raise PreconditionError(f"triple {(h, r, t)} references unknown ids")
        if len(set(self.triples)) != len(self.triples):
            raise PreconditionError("duplicate triples")

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @cached_property
    def entities(self) -> range:
        return range(self.num_entities)

    @cached_property
    def triple_set(self) -> frozenset:
        return frozenset(self.triples)

    @cached_property
    def triple_array(self) -> np.ndarray:
        if not self.triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(self.triples, dtype=np.int64)

    @cached_property
    def entity_index(self) -> dict:
        return {name: i for i, name in enumerate(self.entity_names)}

    @cached_property
    def relation_index(self) -> dict:
        return {name: i for i, name in enumerate(self.relation_names)}

    @cached_property
    def adjacency(self) -> tuple:
        adj = [[] for _ in range(self.num_entities)]
        for h, r, t in self.triples:
            adj[h].append((r, t, OUT))
            adj[t].append((r, h, IN))
        return tuple(tuple(sorted(items)) for items in adj)

    def degree(self, e: int) -> int:
        return len(self.adjacency[e])

    def named_triples(self) -> set:
        ents, rels = self.entity_names, self.relation_names
        return {(ents[h], rels[r], ents[t]) for h, r, t in self.triples}

    def to_tsv(self, path) -> None:
        ents, rels = self.entity_names, self.relation_names
        lines = [f"{ents[h]}\t{rels[r]}\t{ents[t]}\n" for h, r, t in self.triples]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)

    def same_structure(self, other: KnowledgeGraph) -> bool:
        return (
            self.entity_names == other.entity_names
            and self.relation_names == other.relation_names
            and self.triples == other.triples
        )


@dataclass(frozen=True, eq=False)
class SnapshotPair:
    t: int
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.t < 0:
            raise PreconditionError("timestamp must be non-negative")

    @property
    def n1(self) -> int:
        return self.kg1.num_entities

    @property
    def n2(self) -> int:
        return self.kg2.num_entities

    @property
    def num_entities(self) -> int:
        return self.n1 + self.n2

    @property
    def num_relations(self) -> int:
        return self.kg1.num_relations + self.kg2.num_relations

    def global1(self, e1):
        return e1

    def global2(self, e2):
        return self.n1 + e2 if isinstance(e2, int) else np.asarray(e2) + self.n1


@dataclass(frozen=True)
class GrowthDelta:
    """Entities and triples added between two consecutive snapshots (ids of the later one)."""

    new_entities_1: frozenset = frozenset()
    new_entities_2: frozenset = frozenset()
    new_triples_1: frozenset = frozenset()
    new_triples_2: frozenset = frozenset()

    def is_empty(self) -> bool:
        return not (self.new_entities_1 or self.new_entities_2 or self.new_triples_1 or self.new_triples_2)


@dataclass(frozen=True)
class AlignmentSets:
    seed: frozenset
    valid: frozenset
    test: frozenset

    def __post_init__(self):
        if self.seed & self.valid or self.seed & self.test or self.valid & self.test:
            raise PreconditionError("seed, valid and test alignment sets must be disjoint")


def neighbors(kg: KnowledgeGraph, e: int) -> tuple:
    """Incident triples of ``e`` as ``(relation, neighbor, direction)``, sorted."""
    if not isinstance(e, (int, np.integer)) or not 0 <= e < kg.num_entities:
        raise UnknownEntityError(f"unknown entity id {e!r}")
    return kg.adjacency[int(e)]


class _Vocab:
    def __init__(self, names=()):
        self.names = list(names)
        self.index = {n: i for i, n in enumerate(self.names)}

    def add(self, name: str) -> int:
        i = self.index.get(name)
        if i is None:
            i = self.index[name] = len(self.names)
            self.names.append(name)
        return i


def _read_rows(path: Path, width: int):
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, 0, f"not valid UTF-8 ({exc})") from None
    for line_no, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != width or not all(parts):
            raise ParseError(path, line_no, f"expected {width} tab-separated fields, got {len(parts)}")
        yield parts


def read_triples(path, base: KnowledgeGraph | None = None) -> KnowledgeGraph:
    path = Path(path)
    ents = _Vocab(base.entity_names if base else ())
    rels = _Vocab(base.relation_names if base else ())
    seen = set()
    ordered = []
    for h, r, t in _read_rows(path, 3):
        triple = (ents.add(h), rels.add(r), ents.add(t))
        if triple not in seen:
            seen.add(triple)
            ordered.append(triple)
    if base is not None:
        prefix = [tr for tr in base.triples if tr in seen]
        rest = [tr for tr in ordered if tr not in base.triple_set]
        ordered = prefix + rest
    return KnowledgeGraph(tuple(ents.names), tuple(rels.names), tuple(ordered))


def read_links(path, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> frozenset:
    path = Path(path)
    pairs = set()
    for e1, e2 in _read_rows(path, 2):
        i = kg1.entity_index.get(e1)
        j = kg2.entity_index.get(e2)
        if i is None or j is None:
            missing = e1 if i is None else e2
            raise DanglingLinkError(f"{path}: link references unknown entity {missing!r}")
        pairs.add((i, j))
    return frozenset(pairs)


def write_links(path, pairs, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> None:
    lines = [f"{kg1.entity_names[i]}\t{kg2.entity_names[j]}\n" for i, j in sorted(pairs)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


_T_DIR = re.compile(r"^t(\d+)$")


def load_snapshot(directory, base: SnapshotPair | None = None, t: int | None = None):
    """Load one snapshot directory into ``(SnapshotPair, AlignmentSets)``.

    With ``base`` (the previous snapshot), interning starts from the base
    vocabularies so that every old entity keeps its id.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetLayoutError(f"{directory} is not a directory")
    missing = [name for name in TRIPLE_FILES + LINK_FILES if not (directory / name).is_file()]
    if missing:
        raise DatasetLayoutError(f"{directory}: missing {', '.join(missing)}")
    if t is None:
        match = _T_DIR.match(directory.name)
        if match:
            t = int(match.group(1))
        else:
            t = base.t + 1 if base is not None else 0
    kg1 = read_triples(directory / TRIPLE_FILES[0], base.kg1 if base else None)
    kg2 = read_triples(directory / TRIPLE_FILES[1], base.kg2 if base else None)
    seed, valid, test = (read_links(directory / name, kg1, kg2) for name in LINK_FILES)
    return SnapshotPair(t, kg1, kg2), AlignmentSets(seed, valid, test)


def save_snapshot(directory, pair: SnapshotPair, aligns: AlignmentSets) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pair.kg1.to_tsv(directory / TRIPLE_FILES[0])
    pair.kg2.to_tsv(directory / TRIPLE_FILES[1])
    for name, pairs in zip(LINK_FILES, (aligns.seed, aligns.valid, aligns.test)):
        write_links(directory / name, pairs, pair.kg1, pair.kg2)


def snapshot_stats(pair: SnapshotPair, aligns: AlignmentSets) -> dict:
    """Per-snapshot sizes in the layout of a dataset statistics table."""
    return {
        "t": pair.t,
        "triples_1": len(pair.kg1.triples),
        "triples_2": len(pair.kg2.triples),
        "seed": len(aligns.seed),
        "valid": len(aligns.valid),
        "test": len(aligns.test),
    }


def _kg_growth(prev: KnowledgeGraph, nxt: KnowledgeGraph, side: str):
    if set(nxt.relation_names) - set(prev.relation_names):
        extra = sorted(set(nxt.relation_names) - set(prev.relation_names))
        raise RelationGrowthError(f"KG{side}: new relations {extra[:5]}")
    missing_ents = set(prev.entity_names) - set(nxt.entity_index)
    if missing_ents:
        raise NonMonotonicGrowthError(f"KG{side}: {len(missing_ents)} entities disappeared")
    prev_named = prev.named_triples()
    next_named = nxt.named_triples()
    if not prev_named <= next_named:
        raise NonMonotonicGrowthError(f"KG{side}: {len(prev_named - next_named)} triples disappeared")
    prev_names = set(prev.entity_names)
    new_entities = frozenset(i for i, n in enumerate(nxt.entity_names) if n not in prev_names)
    ents, rels = nxt.entity_names, nxt.relation_names
    new_triples = frozenset(
        (h, r, t) for h, r, t in nxt.triples if (ents[h], rels[r], ents[t]) not in prev_named
    )
    return new_entities, new_triples


def validate_growth(prev: SnapshotPair, nxt: SnapshotPair) -> GrowthDelta:
    """Check monotone growth between consecutive snapshots and return the difference."""
    if prev.t + 1 != nxt.t:
        raise PreconditionError(f"snapshots not consecutive: t={prev.t} then t={nxt.t}")
    e1, t1 = _kg_growth(prev.kg1, nxt.kg1, "1")
    e2, t2 = _kg_growth(prev.kg2, nxt.kg2, "2")
    return GrowthDelta(e1, e2, t1, t2)


def is_prefix_extension(prev: KnowledgeGraph, nxt: KnowledgeGraph) -> bool:
    """True if every old entity and relation keeps its id in ``nxt``."""
    k = prev.num_entities
    return (
        nxt.entity_names[:k] == prev.entity_names
        and nxt.relation_names[: prev.num_relations] == prev.relation_names
    )
