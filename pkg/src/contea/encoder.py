"""Two-stage subgraph encoder and inductive initialization of new entities.

Stage one is a two-layer relation-gated mean aggregator over each entity and
its relational neighbors (both directions, self term with an all-ones gate):

    m_e   = (h_e + sum_{(r, e') in N_e} h_e' * sigmoid(rel[r])) / (1 + |N_e|)
    h'_e  = tanh(W m_e + b)

Stage two attends over a small set of unit-norm proxy vectors:

    a_e = softmax(P h_e / sqrt(d)),  c_e = a_e P,  o_e = normalize([h_e ; c_e] Q)

All graph reductions use sparse matrices built once per snapshot from the
sorted adjacency, so the summation order never depends on file order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from contea.errors import EmptyGraphError, PreconditionError
from contea.kg_store import GrowthDelta, SnapshotPair, is_prefix_extension

log = logging.getLogger(__name__)

AGG1_GROUPS = ("agg1_w0", "agg1_b0", "agg1_w1", "agg1_b1")
PARAM_GROUPS = ("base_emb", "rel_emb") + AGG1_GROUPS + ("proxies", "proxy_proj")
N_LAYERS = 2


@dataclass
class EncoderState:
    """Encoder parameters for one snapshot pair.

    ``base_emb`` rows follow the shared id space: KG1 entities first, then
    KG2 entities offset by ``n1``. ``rel_emb`` likewise stacks KG1 relations
    before KG2 relations. ``trainable_rows`` restricts updates of
    ``base_emb`` to a subset of rows (None means all rows).
    """

    params: dict
    n1: int
    n2: int
    r1: int
    r2: int
    t: int = 0
    frozen: frozenset = frozenset()
    trainable_rows: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.params["base_emb"].shape[1]

    @property
    def proxy_count(self) -> int:
        return self.params["proxies"].shape[0]

    @property
    def frozen_mask(self) -> dict:
        return {g: g in self.frozen for g in PARAM_GROUPS}

    def __getitem__(self, group):
        return self.params[group]

    def copy(self) -> EncoderState:
        return EncoderState(
            {k: v.copy() for k, v in self.params.items()},
            self.n1, self.n2, self.r1, self.r2, self.t, self.frozen,
            None if self.trainable_rows is None else self.trainable_rows.copy(),
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    def equals(self, other: EncoderState) -> bool:
        """Bit-exact parameter equality."""
        return all(
            self.params[g].shape == other.params[g].shape
            and np.array_equal(self.params[g], other.params[g])
            for g in PARAM_GROUPS
        )


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray
    source: int
    n1: int = 0

    def kg1(self, ids) -> np.ndarray:
        return self.rows[np.asarray(ids, dtype=np.int64)]

    def kg2(self, ids) -> np.ndarray:
        return self.rows[self.n1 + np.asarray(ids, dtype=np.int64)]


@dataclass
class GraphIndex:
    """Edge arrays and aggregation matrices for one snapshot pair."""

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    inv_deg: np.ndarray  # 1 / (1 + |N_e|), shape (N, 1)
    agg: sp.csr_matrix  # N x E, entries inv_deg[dst]
    agg_t: sp.csr_matrix
    gather_src_t: sp.csr_matrix  # N x E incidence, scatters edge values to their source
    gather_rel_t: sp.csr_matrix  # R x E incidence
    num_entities: int
    num_relations: int
    extra: dict = field(default_factory=dict)


def _build_index(pair: SnapshotPair) -> GraphIndex:
    src, dst, rel = [], [], []
    offsets = ((pair.kg1, 0, 0), (pair.kg2, pair.n1, pair.kg1.num_relations))
    for kg, e_off, r_off in offsets:
        for e in range(kg.num_entities):
            for r, nb, _direction in kg.adjacency[e]:
                dst.append(e + e_off)
                src.append(nb + e_off)
                rel.append(r + r_off)
    n = pair.num_entities
    n_rel = pair.num_relations
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    rel = np.asarray(rel, dtype=np.int64)
    n_edges = len(src)
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    inv_deg = (1.0 / (1.0 + deg))[:, None]
    cols = np.arange(n_edges)
    agg = sp.csr_matrix((inv_deg[dst, 0], (dst, cols)), shape=(n, n_edges))
    ones = np.ones(n_edges)
    gather_src_t = sp.csr_matrix((ones, (src, cols)), shape=(n, n_edges))
    gather_rel_t = sp.csr_matrix((ones, (rel, cols)), shape=(max(n_rel, 1), n_edges))
    return GraphIndex(src, dst, rel, inv_deg, agg, agg.T.tocsr(), gather_src_t, gather_rel_t, n, n_rel)


def graph_index(pair: SnapshotPair) -> GraphIndex:
    idx = pair._cache.get("graph_index")
    if idx is None:
        idx = pair._cache["graph_index"] = _build_index(pair)
    return idx


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _uniform_unit(rng: np.random.Generator, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[-1])
    return _unit_rows(rng.uniform(-bound, bound, size=shape))


def init_parameters(pair: SnapshotPair, config, seed: int | None = None) -> EncoderState:
    """Fresh parameters for ``pair``; deterministic in ``seed``."""
    if pair.num_entities == 0:
        raise EmptyGraphError("snapshot pair has no entities")
    d, k = config.dim, config.proxy_count
    if d < 2 or k < 1:
        raise PreconditionError("need dim >= 2 and proxy_count >= 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {
        "base_emb": _uniform_unit(rng, (pair.num_entities, d)),
        "rel_emb": _uniform_unit(rng, (max(pair.num_relations, 1), d)),
    }
    for layer in range(N_LAYERS):
        params[f"agg1_w{layer}"] = np.eye(d) + rng.normal(0.0, 0.01, size=(d, d))
        params[f"agg1_b{layer}"] = np.zeros(d)
    params["proxies"] = _unit_rows(rng.normal(size=(k, d)))
    params["proxy_proj"] = np.vstack([np.eye(d), np.zeros((d, d))]) + rng.normal(0.0, 0.01, size=(2 * d, d))
    return EncoderState(
        params, pair.n1, pair.n2, pair.kg1.num_relations, pair.kg2.num_relations, t=pair.t
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _Cache:
    gates: np.ndarray
    hs: list  # h^0, h^1, h^2
    ms: list  # aggregated inputs per layer
    attn: np.ndarray
    context: np.ndarray
    joined: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray
    out: np.ndarray


def _check_cover(state: EncoderState, pair: SnapshotPair):
    if (state.n1, state.n2) != (pair.n1, pair.n2) or state.params["base_emb"].shape[0] != pair.num_entities:
        raise PreconditionError(
            f"encoder state covers ({state.n1}, {state.n2}) entities, snapshot has ({pair.n1}, {pair.n2})"
        )


def forward(state: EncoderState, pair: SnapshotPair) -> _Cache:
    _check_cover(state, pair)
    idx = graph_index(pair)
    p = state.params
    d = state.dim
    gates = _sigmoid(p["rel_emb"])
    edge_gate = gates[idx.rel]
    h = p["base_emb"]
    hs, ms = [h], []
    for layer in range(N_LAYERS):
        msg = h[idx.src] * edge_gate
        m = h * idx.inv_deg + idx.agg @ msg
        h = np.tanh(m @ p[f"agg1_w{layer}"].T + p[f"agg1_b{layer}"])
        ms.append(m)
        hs.append(h)
    proxies = p["proxies"]
    logits = (h @ proxies.T) / np.sqrt(d)
    logits -= logits.max(axis=1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=1, keepdims=True)
    context = attn @ proxies
    joined = np.hstack([h, context])
    pre = joined @ p["proxy_proj"]
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    out = pre / norms
    return _Cache(gates, hs, ms, attn, context, joined, pre, norms, out)


def backward(state: EncoderState, pair: SnapshotPair, cache: _Cache, d_out: np.ndarray, need_stage1=True) -> dict:
    """Gradients of a scalar loss w.r.t. all parameter groups given dL/d(output)."""
    idx = graph_index(pair)
    p = state.params
    d = state.dim
    grads = {}
    out, norms = cache.out, cache.norms
    d_pre = (d_out - out * np.sum(out * d_out, axis=1, keepdims=True)) / norms
    grads["proxy_proj"] = cache.joined.T @ d_pre
    d_joined = d_pre @ p["proxy_proj"].T
    d_h = d_joined[:, :d].copy()
    d_ctx = d_joined[:, d:]
    proxies = p["proxies"]
    attn = cache.attn
    d_attn = d_ctx @ proxies.T
    g_prox = attn.T @ d_ctx
    d_logits = attn * (d_attn - np.sum(attn * d_attn, axis=1, keepdims=True))
    d_logits /= np.sqrt(d)
    h2 = cache.hs[-1]
    d_h += d_logits @ proxies
    g_prox += d_logits.T @ h2
    grads["proxies"] = g_prox

    if not need_stage1:
        for g in ("base_emb", "rel_emb") + AGG1_GROUPS:
            grads[g] = np.zeros_like(p[g])
        return grads

    gates = cache.gates
    edge_gate = gates[idx.rel]
    d_edge_gate = np.zeros((len(idx.rel), d))
    for layer in reversed(range(N_LAYERS)):
        h_out = cache.hs[layer + 1]
        h_in = cache.hs[layer]
        d_z = d_h * (1.0 - h_out * h_out)
        grads[f"agg1_w{layer}"] = d_z.T @ cache.ms[layer]
        grads[f"agg1_b{layer}"] = d_z.sum(axis=0)
        d_m = d_z @ p[f"agg1_w{layer}"]
        d_msg = idx.agg_t @ d_m
        d_edge_gate += d_msg * h_in[idx.src]
        d_h = d_m * idx.inv_deg + idx.gather_src_t @ (d_msg * edge_gate)
    grads["base_emb"] = d_h
    d_gates = idx.gather_rel_t @ d_edge_gate
    grads["rel_emb"] = d_gates * gates * (1.0 - gates)
    return grads


def encode_all(state: EncoderState, pair: SnapshotPair) -> EmbeddingMatrix:
    """Unit-norm output representation of every entity of ``pair``."""
    return EmbeddingMatrix(forward(state, pair).out, pair.t, pair.n1)


def _distinct_neighbors(kg, e):
    return sorted({nb for _r, nb, _dir in kg.adjacency[e] if nb != e})


def init_new_entities(state: EncoderState, pair_next: SnapshotPair, delta: GrowthDelta, seed: int = 0) -> EncoderState:
    """Extend ``state`` to ``pair_next``; new base rows are the mean of seen neighbors.

    Old rows and all weights are copied unchanged. A new entity with no seen
    neighbor falls back to the mean over seen entities two hops away, then to
    a random unit row drawn from a generator keyed on ``seed`` and the row.
    """
    old_n = (state.n1, state.n2)
    kgs = (pair_next.kg1, pair_next.kg2)
    for side, (kg, n_old) in enumerate(zip(kgs, old_n), 1):
        if kg.num_entities < n_old:
            raise PreconditionError(f"KG{side} shrank from {n_old} to {kg.num_entities} entities")
    if (pair_next.kg1.num_relations, pair_next.kg2.num_relations) != (state.r1, state.r2):
        raise PreconditionError("relation vocabulary changed between snapshots")
    new_sets = (delta.new_entities_1, delta.new_entities_2)
    for side, (kg, n_old, new) in enumerate(zip(kgs, old_n, new_sets), 1):
        expected = set(range(n_old, kg.num_entities))
        if set(new) != expected:
            raise PreconditionError(
                f"KG{side}: new entities must be appended after the {n_old} old ones"
            )

    d = state.dim
    old_base = state.params["base_emb"]
    n1_new = pair_next.n1
    base = np.empty((pair_next.num_entities, d))
    base[: state.n1] = old_base[: state.n1]
    base[n1_new : n1_new + state.n2] = old_base[state.n1 :]

    offsets = (0, n1_new)
    for side, (kg, n_old, off) in enumerate(zip(kgs, old_n, offsets), 1):
        for e in range(n_old, kg.num_entities):
            seen = [nb for nb in _distinct_neighbors(kg, e) if nb < n_old]
            if not seen:
                frontier = set()
                for nb in _distinct_neighbors(kg, e):
                    frontier.update(x for x in _distinct_neighbors(kg, nb) if x < n_old)
                seen = sorted(frontier)
            if seen:
                base[off + e] = base[off + np.asarray(seen)].mean(axis=0)
            else:
                rng = np.random.default_rng([seed, pair_next.t, side, e])
                base[off + e] = _uniform_unit(rng, (1, d))[0]
                log.debug("KG%d entity %d has no seen neighbors within two hops", side, e)

    params = {k: v.copy() for k, v in state.params.items()}
    params["base_emb"] = base
    return EncoderState(
        params, pair_next.n1, pair_next.n2, state.r1, state.r2, pair_next.t, state.frozen, None
    )


def new_entity_rows(pair: SnapshotPair, delta: GrowthDelta) -> np.ndarray:
    rows = sorted(delta.new_entities_1) + [pair.n1 + e for e in sorted(delta.new_entities_2)]
    return np.asarray(rows, dtype=np.int64)


def check_extends(prev: SnapshotPair, nxt: SnapshotPair) -> None:
    for side, (a, b) in enumerate(((prev.kg1, nxt.kg1), (prev.kg2, nxt.kg2)), 1):
        if not is_prefix_extension(a, b):
            raise PreconditionError(f"KG{side} ids of snapshot t={nxt.t} do not extend t={prev.t}")


CHECKPOINT_FORMAT = "contea-encoder/1"


def save_state(path, state: EncoderState) -> None:
    """Write a checkpoint (numpy ``.npz``: format tag, layout metadata, one array per group)."""
    meta = np.asarray([state.n1, state.n2, state.r1, state.r2, state.t], dtype=np.int64)
    arrays = {f"param/{g}": state.params[g] for g in PARAM_GROUPS}
    arrays["format"] = np.asarray(CHECKPOINT_FORMAT)
    arrays["meta"] = meta
    arrays["frozen"] = np.asarray(sorted(state.frozen), dtype=str)
    if state.trainable_rows is not None:
        arrays["trainable_rows"] = np.asarray(state.trainable_rows, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path) -> EncoderState:
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != CHECKPOINT_FORMAT:
            raise PreconditionError(f"{path}: unsupported checkpoint format {fmt!r}")
        n1, n2, r1, r2, t = (int(x) for x in data["meta"])
        params = {g: data[f"param/{g}"].copy() for g in PARAM_GROUPS}
        frozen = frozenset(str(x) for x in data["frozen"])
        rows = data["trainable_rows"].copy() if "trainable_rows" in data.files else None
    return EncoderState(params, n1, n2, r1, r2, t, frozen, rows)
