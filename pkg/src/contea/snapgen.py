"""Synthetic growing KG pairs with ground-truth alignment.

A preferential-attachment master graph with uniformly drawn relations is
split into two noisy views that share ``overlap_ratio`` of their entities.
The first snapshot is the subgraph induced by the earliest-arriving nodes;
later snapshots sample reserve triples touching the current graph (a fixed
fraction of the current size), then add every reserve triple whose two
endpoints are already present.
"""

from __future__ import annotations

import copy
import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from contea.errors import GenerationInfeasibleError, PreconditionError
from contea.kg_store import LINK_FILES, TRIPLE_FILES, AlignmentSets, KnowledgeGraph, SnapshotPair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenSpec:
    n_entities: int = 500
    n_relations: int = 20
    avg_degree: float = 6.0
    overlap_ratio: float = 0.8
    structural_noise: float = 0.1
    n_snapshots: int = 3
    growth_ratio: float = 0.2
    split: tuple = (0.2, 0.1, 0.7)
    initial_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < 2 or self.n_relations < 1 or self.n_snapshots < 1:
            raise PreconditionError("need n_entities >= 2, n_relations >= 1, n_snapshots >= 1")
        if not 0 < self.overlap_ratio <= 1:
            raise PreconditionError("overlap_ratio must be in (0, 1]")
        if not 0 <= self.structural_noise < 1:
            raise PreconditionError("structural_noise must be in [0, 1)")
        if not 0 < self.initial_fraction <= 1:
            raise PreconditionError("initial_fraction must be in (0, 1]")
        if self.growth_ratio <= 0:
            raise PreconditionError("growth_ratio must be positive")
        if len(self.split) != 3 or any(x < 0 for x in self.split) or not math.isclose(sum(self.split), 1.0):
            raise PreconditionError("split must be three non-negative ratios summing to 1")
        if self.avg_degree <= 0:
            raise PreconditionError("avg_degree must be positive")

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


@dataclass
class KGView:
    """One side of the synthetic pair: full triple pool plus the current snapshot."""

    prefix: str
    full: list  # all (h, r, t) name triples this KG can ever contain, sorted
    lines: list = field(default_factory=list)  # current triples in file order
    present: set = field(default_factory=set)
    entities: set = field(default_factory=set)

    def reserve(self) -> list:
        return [tr for tr in self.full if tr not in self.present]

    def add(self, triples) -> None:
        for tr in triples:
            self.lines.append(tr)
            self.present.add(tr)
            self.entities.add(tr[0])
            self.entities.add(tr[2])


@dataclass
class SynthState:
    t: int
    kg1: KGView
    kg2: KGView
    gold: dict  # master node -> (kg1 name, kg2 name)
    seed: list
    valid: list
    test: list
    rng: np.random.Generator

    def gold_present(self) -> list:
        return sorted(
            (a, b) for a, b in self.gold.values() if a in self.kg1.entities and b in self.kg2.entities
        )

    def to_snapshot(self):
        kgs = []
        for view in (self.kg1, self.kg2):
            ents, rels, triples = {}, {}, []
            for h, r, t in view.lines:
                triples.append((ents.setdefault(h, len(ents)), rels.setdefault(r, len(rels)),
                                ents.setdefault(t, len(ents))))
            kgs.append(KnowledgeGraph(tuple(ents), tuple(rels), tuple(triples)))
        kg1, kg2 = kgs

        def ids(pairs):
            return frozenset((kg1.entity_index[a], kg2.entity_index[b]) for a, b in pairs)

        pair = SnapshotPair(self.t, kg1, kg2)
        return pair, AlignmentSets(ids(self.seed), ids(self.valid), ids(self.test))


def split_counts(n: int, split) -> tuple:
    """Sizes of the seed/valid/test split of ``n`` gold pairs; test takes the remainder."""
    n_seed = round(split[0] * n)
    n_valid = min(round(split[1] * n), n - n_seed)
    return n_seed, n_valid, n - n_seed - n_valid


def _preferential_attachment(n_nodes: int, per_node: int, n_relations: int, rng) -> list:
    """Master triples over nodes 0..n-1; node i attaches to earlier nodes by degree + 1."""
    pool = []  # node repeated (degree + 1) times
    triples = []
    for node in range(n_nodes):
        if node > 0:
            k = min(per_node, node)
            targets = set()
            while len(targets) < k:
                targets.add(pool[int(rng.integers(len(pool)))])
            for target in sorted(targets):
                rel = int(rng.integers(n_relations))
                if rng.random() < 0.5:
                    triples.append((node, rel, target))
                else:
                    triples.append((target, rel, node))
                pool.append(target)
                pool.append(node)
        pool.append(node)
    return triples


def generate_base_pair(spec: GenSpec) -> SynthState:
    """Master graph, the two views, the first snapshot and the 2:1:7 gold split."""
    n = spec.n_entities
    per_node = max(1, round(spec.avg_degree / 2))
    if spec.avg_degree >= n - 1 or per_node >= n:
        raise GenerationInfeasibleError(f"avg_degree {spec.avg_degree} too high for {n} entities")
    rng = np.random.default_rng(spec.seed)
    shared = max(1, round(spec.overlap_ratio * n))
    exclusive = n - shared
    n_master = shared + 2 * exclusive
    # master node ids: [0, shared) shared, then KG1-only, then KG2-only; arrival order is random
    arrival = rng.permutation(n_master)
    rank = np.empty(n_master, dtype=np.int64)
    rank[arrival] = np.arange(n_master)
    master = _preferential_attachment(n_master, per_node, spec.n_relations, rng)
    master = [(int(arrival[h]), r, int(arrival[t])) for h, r, t in master]

    members = (
        set(range(shared)) | set(range(shared, shared + exclusive)),
        set(range(shared)) | set(range(shared + exclusive, n_master)),
    )
    views, names = [], []
    for side, member in enumerate(members, 1):
        codes = rng.permutation(n_master)
        name = {x: f"kg{side}/e{codes[x]:05d}" for x in member}
        kept = [tr for tr in master if tr[0] in member and tr[2] in member]
        if spec.structural_noise > 0:
            keep = rng.random(len(kept)) >= spec.structural_noise
            kept = [tr for tr, k in zip(kept, keep) if k]
        full = sorted({(name[h], f"kg{side}/r{r:03d}", name[t]) for h, r, t in kept})
        views.append(KGView(f"kg{side}", full))
        names.append(name)

    cutoff = math.ceil(spec.initial_fraction * n_master)
    for view, name in zip(views, names):
        early = {nm for x, nm in name.items() if rank[x] < cutoff}
        initial = [tr for tr in view.full if tr[0] in early and tr[2] in early]
        view.add(initial[i] for i in rng.permutation(len(initial)))
        # the relation vocabulary is fixed by the first snapshot
        rels = {r for _h, r, _t in initial}
        dropped = sum(tr[1] not in rels for tr in view.full)
        if dropped:
            log.debug("%s: dropping %d reserve triples with relations unseen at t=0", view.prefix, dropped)
            view.full = [tr for tr in view.full if tr[1] in rels]

    gold = {x: (names[0][x], names[1][x]) for x in range(shared)}
    state = SynthState(0, views[0], views[1], gold, [], [], [], rng)
    present = state.gold_present()
    present = [present[i] for i in rng.permutation(len(present))]
    n_seed, n_valid, _ = split_counts(len(present), spec.split)
    state.seed = sorted(present[:n_seed])
    state.valid = sorted(present[n_seed : n_seed + n_valid])
    state.test = sorted(present[n_seed + n_valid :])
    return state


def grow(state: SynthState, spec: GenSpec) -> SynthState:
    """Next snapshot: sampled growth, closure, then new gold pairs appended to the test set."""
    nxt = copy.deepcopy(state)
    nxt.t = state.t + 1
    rng = nxt.rng
    for view in (nxt.kg1, nxt.kg2):
        reserve = view.reserve()
        if not reserve:
            warnings.warn(f"{view.prefix}: reserve pool exhausted at t={nxt.t}", RuntimeWarning, stacklevel=2)
            continue
        touching = [tr for tr in reserve if tr[0] in view.entities or tr[2] in view.entities]
        want = math.ceil(spec.growth_ratio * len(view.lines))
        if len(touching) < want:
            warnings.warn(
                f"{view.prefix}: only {len(touching)} reserve triples available at t={nxt.t}, wanted {want}",
                RuntimeWarning, stacklevel=2,
            )
        picked = rng.choice(len(touching), size=min(want, len(touching)), replace=False)
        sampled = [touching[i] for i in sorted(picked)]
        view.add(sampled[i] for i in rng.permutation(len(sampled)))
        closure = [tr for tr in view.reserve() if tr[0] in view.entities and tr[2] in view.entities]
        view.add(closure[i] for i in rng.permutation(len(closure)))
    known = set(state.seed) | set(state.valid) | set(state.test)
    fresh = [p for p in nxt.gold_present() if p not in known]
    nxt.test = sorted(state.test + fresh)
    return nxt


def generate(spec: GenSpec) -> list:
    """All snapshots as ``(SnapshotPair, AlignmentSets)`` tuples."""
    state = generate_base_pair(spec)
    out = [state.to_snapshot()]
    for _ in range(1, spec.n_snapshots):
        state = grow(state, spec)
        out.append(state.to_snapshot())
    return out


def _write_lines(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines("\t".join(row) + "\n" for row in rows)


def write_benchmark(spec: GenSpec, out_dir) -> list:
    """Write ``snapshots/t0 ..`` plus ``genspec.txt``; returns the snapshot directories."""
    out_dir = Path(out_dir)
    (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
    (out_dir / "genspec.txt").write_text(spec.to_text(), encoding="utf-8")
    state = generate_base_pair(spec)
    dirs = []
    for t in range(spec.n_snapshots):
        if t > 0:
            state = grow(state, spec)
        d = out_dir / "snapshots" / f"t{t}"
        d.mkdir(parents=True, exist_ok=True)
        _write_lines(d / TRIPLE_FILES[0], state.kg1.lines)
        _write_lines(d / TRIPLE_FILES[1], state.kg2.lines)
        for fname, pairs in zip(LINK_FILES, (state.seed, state.valid, state.test)):
            _write_lines(d / fname, pairs)
        dirs.append(d)
    return dirs
