"""Training losses and their analytic gradients.

* reconstruction: sum_e || x_e - mean_{e' in N_e} x_e' ||^2 over base rows,
  ``N_e`` being the distinct one-hop neighbors of ``e`` (itself excluded);
* alignment: log(1 + sum_i sum_{j != i} exp(gamma * (lam - s_ii + s_ij)))
  with ``s_ij`` the cosine between KG1 entity of pair i and KG2 entity of
  pair j (in-batch negatives);
* initial:  align + alpha * reconstruct
* finetune: align(ASA) + alpha * reconstruct + beta * align(TA)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from contea.encoder import AGG1_GROUPS, PARAM_GROUPS, EncoderState, backward, forward
from contea.errors import NumericalInstabilityError, PreconditionError
from contea.kg_store import SnapshotPair

log = logging.getLogger(__name__)

LOSS_TAGS = ("reconstruct", "align", "initial", "finetune")


@dataclass(frozen=True)
class Batch:
    """Aligned pairs ``(kg1 id, kg2 id)``; negatives come from the other pairs."""

    pairs: tuple = ()

    def __post_init__(self):
        pairs = tuple(sorted((int(a), int(b)) for a, b in self.pairs))
        if len(set(pairs)) != len(pairs):
            raise PreconditionError("batch pairs must be distinct")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class LossBreakdown:
    align: float
    reconstruct: float
    align_ta: float
    total: float


def compose_initial(align: float, reconstruct: float, alpha: float) -> LossBreakdown:
    return LossBreakdown(align, reconstruct, 0.0, align + alpha * reconstruct)


def compose_finetune(align: float, reconstruct: float, align_ta: float, alpha: float, beta: float) -> LossBreakdown:
    return LossBreakdown(align, reconstruct, align_ta, align + alpha * reconstruct + beta * align_ta)


def _recon_matrix(pair: SnapshotPair) -> sp.csr_matrix:
    cached = pair._cache.get("recon_matrix")
    if cached is not None:
        return cached
    rows, cols, vals = [], [], []
    for kg, off in ((pair.kg1, 0), (pair.kg2, pair.n1)):
        for e in range(kg.num_entities):
            nbs = sorted({nb for _r, nb, _d in kg.adjacency[e] if nb != e})
            for nb in nbs:
                rows.append(e + off)
                cols.append(nb + off)
                vals.append(1.0 / len(nbs))
    n = pair.num_entities
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    has_nb = np.zeros(n, dtype=bool)
    has_nb[np.asarray(rows, dtype=np.int64)] = True
    pair._cache["recon_matrix"] = (mat, mat.T.tocsr(), has_nb)
    return pair._cache["recon_matrix"]


def _recon_residual(base: np.ndarray, pair: SnapshotPair, entities=None):
    mat, mat_t, has_nb = _recon_matrix(pair)
    resid = base - mat @ base
    keep = has_nb.copy()
    if entities is not None:
        chosen = np.zeros_like(keep)
        chosen[np.asarray(list(entities), dtype=np.int64)] = True
        keep &= chosen
    resid[~keep] = 0.0
    return resid, mat_t


def reconstruction_loss(base, pair: SnapshotPair, entities=None) -> float:
    """Squared distance of each base row to the mean of its neighbors' rows.

    ``entities`` (global ids) restricts the outer sum; entities without
    neighbors contribute nothing.
    """
    base = getattr(base, "rows", base)
    resid, _ = _recon_residual(np.asarray(base, dtype=np.float64), pair, entities)
    return float(np.sum(resid * resid))


def reconstruction_grad(base: np.ndarray, pair: SnapshotPair, entities=None):
    resid, mat_t = _recon_residual(base, pair, entities)
    loss = float(np.sum(resid * resid))
    return loss, 2.0 * resid - 2.0 * (mat_t @ resid)


def _batch_rows(batch: Batch, n1: int):
    arr = np.asarray(batch.pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1] + n1


def logsumexp_alignment(sim: np.ndarray, gamma: float, lam: float):
    """Alignment loss from a ``(B, C)`` similarity block, ``C >= B``.

    Row ``i`` holds the KG1 entity of pair ``i``; column ``i`` is its
    positive and every other column a negative. Returns the loss and the
    per-term exponents.
    """
    sim = np.atleast_2d(np.asarray(sim, dtype=np.float64))
    b = sim.shape[0]
    pos = sim[np.arange(b), np.arange(b)]
    expo = gamma * (lam - pos[:, None] + sim)
    mask = np.ones(sim.shape, dtype=bool)
    mask[np.arange(b), np.arange(b)] = False
    # log(1 + sum exp) as a logsumexp with an explicit zero term
    loss = float(logsumexp(np.concatenate([[0.0], expo[mask]])))
    return loss, expo, mask


def _align_terms(out: np.ndarray, rows1, rows2, gamma: float, lam: float):
    a, b = out[rows1], out[rows2]
    loss, expo, mask = logsumexp_alignment(a @ b.T, gamma, lam)
    return loss, a, b, expo, mask


def alignment_loss(emb, batch: Batch, gamma: float, lam: float) -> float:
    """LogSumExp margin loss over in-batch negatives (0 for batches of size < 2)."""
    if gamma <= 0:
        raise PreconditionError("gamma must be positive")
    if len(batch) < 2:
        return 0.0
    rows1, rows2 = _batch_rows(batch, emb.n1)
    return _align_terms(emb.rows, rows1, rows2, gamma, lam)[0]


def alignment_grad(out: np.ndarray, n1: int, batch: Batch, gamma: float, lam: float):
    """Loss and dL/d(out) for the alignment loss on encoder outputs."""
    d_out = np.zeros_like(out)
    if len(batch) < 2:
        return 0.0, d_out
    rows1, rows2 = _batch_rows(batch, n1)
    loss, a, b, expo, mask = _align_terms(out, rows1, rows2, gamma, lam)
    w = np.where(mask, np.exp(expo - loss), 0.0)
    d_sim = gamma * w
    d_sim[np.diag_indices_from(d_sim)] = -gamma * w.sum(axis=1)
    np.add.at(d_out, rows1, d_sim @ b)
    np.add.at(d_out, rows2, d_sim.T @ a)
    return loss, d_out


def _as_batch(pairs) -> Batch:
    if pairs is None:
        return Batch(())
    return pairs if isinstance(pairs, Batch) else Batch(tuple(pairs))


def loss_initial(emb, pair: SnapshotPair, batch: Batch, config, base=None) -> LossBreakdown:
    """Initial-training loss. ``base`` defaults to ``emb`` when omitted."""
    align = alignment_loss(emb, _as_batch(batch), config.gamma, config.lam)
    rec = reconstruction_loss(emb.rows if base is None else base, pair)
    return compose_initial(align, rec, config.alpha)


def loss_finetune(emb, pair: SnapshotPair, asa_batch, ta_batch, config, base=None) -> LossBreakdown:
    asa_batch, ta_batch = _as_batch(asa_batch), _as_batch(ta_batch)
    if not asa_batch.pairs and not ta_batch.pairs:
        warnings.warn("no finetuning signal: empty ASA and TA batches", RuntimeWarning, stacklevel=2)
    align = alignment_loss(emb, asa_batch, config.gamma, config.lam)
    align_ta = alignment_loss(emb, ta_batch, config.gamma, config.lam)
    rec = reconstruction_loss(emb.rows if base is None else base, pair)
    return compose_finetune(align, rec, align_ta, config.alpha, config.beta)


def gradient(loss: str, state: EncoderState, pair: SnapshotPair, config, batch=None, ta_batch=None):
    """Loss breakdown and exact gradients for every parameter group.

    ``loss`` is one of ``reconstruct``, ``align``, ``initial`` (align +
    alpha * reconstruct) or ``finetune`` (``batch`` is the ASA batch, plus
    beta * align on ``ta_batch``). Frozen groups and base rows outside
    ``state.trainable_rows`` get zero gradient.
    """
    if loss not in LOSS_TAGS:
        raise ValueError(f"unknown loss {loss!r}")
    grads = {g: np.zeros_like(state.params[g]) for g in PARAM_GROUPS}
    if all(g in state.frozen for g in PARAM_GROUPS):
        return LossBreakdown(0.0, 0.0, 0.0, 0.0), grads

    batch, ta_batch = _as_batch(batch), _as_batch(ta_batch)
    align = align_ta = rec = 0.0
    d_out = None
    if loss in ("align", "initial", "finetune"):
        cache = forward(state, pair)
        align, d_out = alignment_grad(cache.out, pair.n1, batch, config.gamma, config.lam)
        if loss == "finetune" and config.beta and len(ta_batch) >= 2:
            align_ta, d_ta = alignment_grad(cache.out, pair.n1, ta_batch, config.gamma, config.lam)
            d_out += config.beta * d_ta
        elif loss == "finetune":
            align_ta = alignment_loss_rows(cache.out, pair.n1, ta_batch, config)
        stage1 = not {"base_emb", "rel_emb", *AGG1_GROUPS} <= state.frozen
        enc_grads = backward(state, pair, cache, d_out, need_stage1=stage1)
        for g in PARAM_GROUPS:
            grads[g] += enc_grads[g]
    if loss in ("reconstruct", "initial", "finetune"):
        rec, g_rec = reconstruction_grad(state.params["base_emb"], pair)
        scale = 1.0 if loss == "reconstruct" else config.alpha
        grads["base_emb"] += scale * g_rec

    if loss == "reconstruct":
        breakdown = LossBreakdown(0.0, rec, 0.0, rec)
    elif loss == "align":
        breakdown = LossBreakdown(align, 0.0, 0.0, align)
    elif loss == "initial":
        breakdown = compose_initial(align, rec, config.alpha)
    else:
        breakdown = compose_finetune(align, rec, align_ta, config.alpha, config.beta)

    for g in PARAM_GROUPS:
        if g in state.frozen:
            grads[g][...] = 0.0
    if state.trainable_rows is not None and "base_emb" not in state.frozen:
        keep = np.zeros(state.params["base_emb"].shape[0], dtype=bool)
        keep[state.trainable_rows] = True
        grads["base_emb"][~keep] = 0.0
    for g in PARAM_GROUPS:
        if not np.isfinite(grads[g]).all():
            raise NumericalInstabilityError(g)
    return breakdown, grads


def alignment_loss_rows(out: np.ndarray, n1: int, batch: Batch, config) -> float:
    if len(batch) < 2:
        return 0.0
    rows1, rows2 = _batch_rows(batch, n1)
    return _align_terms(out, rows1, rows2, config.gamma, config.lam)[0]
