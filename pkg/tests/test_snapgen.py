import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contea.errors import GenerationInfeasibleError, PreconditionError
from contea.kg_store import is_prefix_extension, load_snapshot, snapshot_stats, validate_growth
from contea.snapgen import GenSpec, generate, split_counts, write_benchmark


def test_split_counts():
    assert split_counts(10, (0.2, 0.1, 0.7)) == (2, 1, 7)
    assert split_counts(0, (0.2, 0.1, 0.7)) == (0, 0, 0)
    assert sum(split_counts(37, (0.2, 0.1, 0.7))) == 37


@settings(max_examples=15)
@given(
    st.integers(20, 80),
    st.sampled_from([0.5, 0.8, 1.0]),
    st.sampled_from([0.0, 0.1, 0.3]),
    st.integers(1, 4),
    st.integers(0, 1000),
)
def test_every_snapshot_grows_monotonically(n, overlap, noise, snaps, seed):
    spec = GenSpec(n_entities=n, overlap_ratio=overlap, structural_noise=noise, n_snapshots=snaps,
                   n_relations=5, avg_degree=4.0, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        seq = generate(spec)
    assert len(seq) == snaps
    for (p0, a0), (p1, a1) in zip(seq, seq[1:]):
        validate_growth(p0, p1)
        assert is_prefix_extension(p0.kg1, p1.kg1) and is_prefix_extension(p0.kg2, p1.kg2)
        names = lambda p, pairs: {(p.kg1.entity_names[a], p.kg2.entity_names[b]) for a, b in pairs}
        assert names(p0, a0.seed) == names(p1, a1.seed)
        assert names(p0, a0.test) <= names(p1, a1.test)


def test_gold_pairs_are_true_counterparts():
    seq = generate(GenSpec(n_entities=60, n_snapshots=2, seed=3))
    for pair, aligns in seq:
        gold = aligns.seed | aligns.valid | aligns.test
        assert len({a for a, _ in gold}) == len(gold) == len({b for _, b in gold})


def test_deterministic_in_seed():
    a = generate(GenSpec(n_entities=50, seed=5))
    b = generate(GenSpec(n_entities=50, seed=5))
    c = generate(GenSpec(n_entities=50, seed=6))
    assert all(x[0].kg1.triples == y[0].kg1.triples and x[1] == y[1] for x, y in zip(a, b))
    assert a[0][0].kg1.triples != c[0][0].kg1.triples


def test_first_growth_step_meets_ratio():
    seq = generate(GenSpec(n_entities=300, n_snapshots=2, seed=1))
    sizes = [len(p.kg1.triples) for p, _ in seq]
    assert sizes[1] >= 1.2 * sizes[0]


def test_write_benchmark_round_trip(tmp_path):
    spec = GenSpec(n_entities=60, n_snapshots=3, seed=2)
    dirs = write_benchmark(spec, tmp_path)
    assert (tmp_path / "genspec.txt").read_text().startswith("n_entities=60")
    expected = generate(spec)
    prev = None
    for d, (pair, aligns) in zip(dirs, expected):
        loaded, la = load_snapshot(d, base=prev)
        assert loaded.kg1.named_triples() == pair.kg1.named_triples()
        assert loaded.kg1.entity_names == pair.kg1.entity_names
        assert snapshot_stats(loaded, la) == snapshot_stats(pair, aligns)
        if prev is not None:
            validate_growth(prev, loaded)
        prev = loaded


def test_invalid_specs():
    with pytest.raises(GenerationInfeasibleError):
        generate(GenSpec(n_entities=5, avg_degree=4.5))
    with pytest.raises(PreconditionError):
        GenSpec(overlap_ratio=0.0)
    with pytest.raises(PreconditionError):
        GenSpec(split=(0.5, 0.5, 0.5))


def test_exhausted_reserve_warns():
    spec = GenSpec(n_entities=20, n_snapshots=8, avg_degree=2.0, initial_fraction=0.9, seed=0)
    with pytest.warns(RuntimeWarning):
        generate(spec)
