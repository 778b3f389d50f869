import os
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contea.errors import (
    DanglingLinkError,
    DatasetLayoutError,
    NonMonotonicGrowthError,
    ParseError,
    PreconditionError,
    RelationGrowthError,
    UnknownEntityError,
)
from contea.kg_store import (
    AlignmentSets,
    SnapshotPair,
    is_prefix_extension,
    load_snapshot,
    neighbors,
    read_triples,
    save_snapshot,
    snapshot_stats,
    validate_growth,
)

from conftest import FIXTURES, kg_from_named

MINI = FIXTURES / "mini_zh_en" / "snapshots"


def test_fixture_counts_are_exact():
    p0, a0 = load_snapshot(MINI / "t0")
    p1, a1 = load_snapshot(MINI / "t1", base=p0)
    assert snapshot_stats(p0, a0) == dict(t=0, triples_1=5, triples_2=6, seed=2, valid=1, test=3)
    assert snapshot_stats(p1, a1) == dict(t=1, triples_1=8, triples_2=8, seed=2, valid=1, test=5)
    delta = validate_growth(p0, p1)
    assert len(delta.new_triples_1) == 3
    assert len(delta.new_triples_2) == 2
    assert {p1.kg1.entity_names[e] for e in delta.new_entities_1} == {"京都", "广州"}
    assert {p1.kg2.entity_names[e] for e in delta.new_entities_2} == {"Guangzhou"}


def test_unicode_names_and_ids():
    pair, aligns = load_snapshot(MINI / "t0")
    kg1 = pair.kg1
    assert kg1.entity_names[0] == "北京"
    pairs = {(kg1.entity_names[a], pair.kg2.entity_names[b]) for a, b in aligns.seed}
    assert pairs == {("中国", "China"), ("日本", "Japan")}
    assert pair.global2(0) == pair.n1


def test_base_loading_keeps_old_ids():
    p0, _ = load_snapshot(MINI / "t0")
    p1, _ = load_snapshot(MINI / "t1", base=p0)
    assert is_prefix_extension(p0.kg1, p1.kg1)
    assert is_prefix_extension(p0.kg2, p1.kg2)
    assert p1.kg1.triples[: len(p0.kg1.triples)] == p0.kg1.triples
    # fresh load orders entities by first occurrence in t1's own file
    fresh, _ = load_snapshot(MINI / "t1")
    assert fresh.kg1.named_triples() == p1.kg1.named_triples()


def test_round_trip(tmp_path):
    p0, a0 = load_snapshot(MINI / "t0")
    save_snapshot(tmp_path / "t0", p0, a0)
    q0, b0 = load_snapshot(tmp_path / "t0")
    assert q0.kg1.same_structure(p0.kg1) and q0.kg2.same_structure(p0.kg2)
    assert b0 == a0


def test_parse_errors(tmp_path):
    d = tmp_path / "t0"
    d.mkdir()
    for name in ("kg1_triples.tsv", "kg2_triples.tsv", "train_links.tsv", "valid_links.tsv", "test_links.tsv"):
        (d / name).write_text("", encoding="utf-8")
    (d / "kg1_triples.tsv").write_text("a\tr\tb\n\na\tr\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_snapshot(d)
    assert info.value.line_no == 3
    (d / "kg1_triples.tsv").write_text("a\tr\tb\n", encoding="utf-8")
    (d / "kg2_triples.tsv").write_text("x\tr\ty\n", encoding="utf-8")
    (d / "test_links.tsv").write_text("a\tz\n", encoding="utf-8")
    with pytest.raises(DanglingLinkError):
        load_snapshot(d)
    (d / "test_links.tsv").unlink()
    with pytest.raises(DatasetLayoutError):
        load_snapshot(d)


def test_duplicate_triples_collapse(tmp_path):
    path = tmp_path / "kg.tsv"
    path.write_text("a\tr\tb\na\tr\tb\nb\tr\ta\n", encoding="utf-8")
    kg = read_triples(path)
    assert len(kg.triples) == 2
    assert kg.degree(0) == 2


def test_neighbors_both_directions():
    kg = kg_from_named([("a", "r", "b"), ("c", "s", "a")])
    assert neighbors(kg, 0) == ((0, 1, "out"), (1, 2, "in"))
    with pytest.raises(UnknownEntityError):
        neighbors(kg, 7)


def test_growth_violations():
    a = kg_from_named([("x", "r", "y"), ("y", "s", "z")])
    fewer = kg_from_named([("x", "r", "y")])
    more_rel = kg_from_named([("x", "r", "y"), ("y", "s", "z"), ("z", "q", "x")])
    p0 = SnapshotPair(0, a, a)
    with pytest.raises(NonMonotonicGrowthError):
        validate_growth(p0, SnapshotPair(1, fewer, a))
    with pytest.raises(RelationGrowthError):
        validate_growth(p0, SnapshotPair(1, a, more_rel))
    with pytest.raises(PreconditionError):
        validate_growth(p0, SnapshotPair(2, a, a))
    assert validate_growth(p0, SnapshotPair(1, a, a)).is_empty()


def test_alignment_sets_disjoint():
    with pytest.raises(PreconditionError):
        AlignmentSets(frozenset({(0, 0)}), frozenset({(0, 0)}), frozenset())


names = st.sampled_from(["a", "b", "c", "d", "日", "é"])
triples = st.lists(st.tuples(names, st.sampled_from(["r", "s"]), names), min_size=1, max_size=12)


@given(triples, triples)
def test_growth_delta_is_set_difference(old, extra):
    kg0 = kg_from_named(old)
    kg1 = kg_from_named(old + extra)
    # relations must stay fixed, so pin both vocabularies
    if set(kg1.relation_names) != set(kg0.relation_names):
        return
    delta = validate_growth(SnapshotPair(0, kg0, kg0), SnapshotPair(1, kg1, kg0))
    named = {(kg1.entity_names[h], kg1.relation_names[r], kg1.entity_names[t]) for h, r, t in delta.new_triples_1}
    assert named == kg1.named_triples() - kg0.named_triples()
    assert {kg1.entity_names[e] for e in delta.new_entities_1} == set(kg1.entity_names) - set(kg0.entity_names)
    assert not delta.new_triples_2


DBP_DIR = os.environ.get("CONTEA_DBP_DIR")


@pytest.mark.skipif(not DBP_DIR, reason="set CONTEA_DBP_DIR to a DBP_ZH-EN snapshot root")
def test_dbp_zh_en_statistics():
    root = Path(DBP_DIR)
    p0, a0 = load_snapshot(root / "t0")
    assert snapshot_stats(p0, a0) == dict(
        t=0, triples_1=70414, triples_2=95142, seed=3623, valid=1811, test=12682
    )
    p1, _ = load_snapshot(root / "t1", base=p0)
    assert len(validate_growth(p0, p1).new_triples_1) == 33568
