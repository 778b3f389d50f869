import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from contea.config import RunConfig
from contea.kg_store import KnowledgeGraph, SnapshotPair

settings.register_profile(
    "contea", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "contea"))

FIXTURES = Path(__file__).parent / "fixtures"
SYNTHETIC_CONF = Path(__file__).parent.parent / "configs" / "synthetic.conf"


def kg_from_named(triples, entities=()):
    """KnowledgeGraph from name triples, interned in first-occurrence order."""
    ents, rels, ids = {}, {}, []
    for name in entities:
        ents.setdefault(name, len(ents))
    for h, r, t in triples:
        ids.append((ents.setdefault(h, len(ents)), rels.setdefault(r, len(rels)), ents.setdefault(t, len(ents))))
    return KnowledgeGraph(tuple(ents), tuple(rels), tuple(dict.fromkeys(ids)))


def random_kg(rng, n_entities, n_relations, n_triples, prefix="e"):
    triples = set()
    while len(triples) < n_triples:
        h, t = rng.integers(n_entities, size=2)
        triples.add((f"{prefix}{h}", f"r{rng.integers(n_relations)}", f"{prefix}{t}"))
    names = [f"{prefix}{i}" for i in range(n_entities)]
    return kg_from_named(sorted(triples), names)


def random_pair(seed=0, n=10, n_rel=3, n_triples=15, t=0):
    rng = np.random.default_rng(seed)
    return SnapshotPair(t, random_kg(rng, n, n_rel, n_triples, "a"), random_kg(rng, n, n_rel, n_triples, "b"))


def small_config(**kw):
    base = dict(dim=8, proxy_count=4, csls_k=3, lr=0.01, epochs=40, finetune_epochs=10, eval_every=5, patience=3)
    base.update(kw)
    return RunConfig(**base)


def synthetic_config(**kw):
    return RunConfig.from_file(SYNTHETIC_CONF).replace(**kw)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


def central_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


def elementwise_relative_error(analytic, numeric, floor=1e-8):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradient_errors(tag, state, pair, config, batch=None, ta_batch=None, h=1e-5):
    """Per-group ``(norm-wise, element-wise)`` relative errors against central differences."""
    from contea.encoder import PARAM_GROUPS
    from contea.objectives import gradient

    _, grads = gradient(tag, state, pair, config, batch, ta_batch)
    out = {}
    for g in PARAM_GROUPS:
        if g in state.frozen:
            continue
        numeric = central_difference(
            lambda: gradient(tag, state, pair, config, batch, ta_batch)[0].total, state.params[g], h
        )
        if g == "base_emb" and state.trainable_rows is not None:
            keep = np.zeros(len(numeric), dtype=bool)
            keep[state.trainable_rows] = True
            numeric[~keep] = 0.0
        out[g] = (relative_error(grads[g], numeric), elementwise_relative_error(grads[g], numeric))
    return out


def gradient_check(tag, state, pair, config, batch=None, ta_batch=None, h=1e-5):
    """Worst norm-wise relative error over the trainable groups for one loss tag."""
    return max(e for e, _ in gradient_errors(tag, state, pair, config, batch, ta_batch, h).values())


def csls_oracle(a, b, k):
    """CSLS by explicit loops over cosine similarities."""
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    na, nb = len(a), len(b)
    cos = [[float(np.dot(a[i], b[j])) for j in range(nb)] for i in range(na)]
    ka = max(1, min(k, nb - 1))
    kb = max(1, min(k, na - 1))
    r_a = [sum(sorted(cos[i], reverse=True)[:ka]) / ka for i in range(na)]
    r_b = [sum(sorted((cos[i][j] for i in range(na)), reverse=True)[:kb]) / kb for j in range(nb)]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            out[i, j] = 2 * cos[i][j] - r_a[i] - r_b[j]
    return out


def mutual_argmax_oracle(scores):
    """All (i, j) where j is the first row maximum of i and i the first column maximum of j."""
    pairs = set()
    n, m = scores.shape
    for i in range(n):
        j = max(range(m), key=lambda c: (scores[i, c], -c))
        col_best = max(range(n), key=lambda r: (scores[r, j], -r))
        if col_best == i:
            pairs.add((i, j))
    return pairs


def integrate_oracle(old, new):
    """Pairwise conflict resolution by enumeration: higher score wins, the older pair wins ties."""
    old = list(old)
    old_keys = {(p.e1, p.e2) for p in old}
    cands = [(p, True) for p in old] + [(p, False) for p in new if (p.e1, p.e2) not in old_keys]
    kept = []
    for p, p_old in cands:
        ok = True
        for q, q_old in cands:
            if (q.e1, q.e2) == (p.e1, p.e2) or (q.e1 != p.e1 and q.e2 != p.e2):
                continue
            if q.score > p.score or (q.score == p.score and q_old and not p_old):
                ok = False
                break
        if ok:
            kept.append(p)
    return sorted((p.e1, p.e2, p.score, p.found_at) for p in kept)


def random_ta(rng, n_left, n_right, size, found_at, levels=4):
    """Conflict-free alignment with coarse scores so that ties occur."""
    from contea.matcher import TrustworthyAlignment

    size = min(size, n_left, n_right)
    left = rng.choice(n_left, size, replace=False)
    right = rng.choice(n_right, size, replace=False)
    scores = rng.integers(levels, size=size) / levels
    return TrustworthyAlignment(
        (int(a), int(b), float(s), found_at) for a, b, s in zip(left, right, scores)
    )
