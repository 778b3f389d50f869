"""Initial training and freeze-regime finetuning with Adam and early stopping."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from contea.encoder import (
    AGG1_GROUPS,
    PARAM_GROUPS,
    EncoderState,
    encode_all,
    init_new_entities,
    init_parameters,
    new_entity_rows,
)
from contea.errors import OutputError, PreconditionError, TrainingDivergedError
from contea.evalkit import evaluate
from contea.kg_store import AlignmentSets, GrowthDelta, SnapshotPair
from contea.matcher import SimilarityMetric, bidirectional_search
from contea.objectives import Batch, gradient

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "total_loss", "align_loss", "reconstruct_loss", "val_f1")
FINETUNE_FROZEN = frozenset(AGG1_GROUPS) | {"rel_emb"}


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    align_loss: float
    reconstruct_loss: float
    val_f1: float | None = None


@dataclass
class TrainedModel:
    state: EncoderState
    history: list = field(default_factory=list)
    stopped_epoch: int = 0
    wall_time_s: float = 0.0
    steps: int = 0

    def write_history(self, path) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(HISTORY_COLUMNS)
                for rec in self.history:
                    val = "NA" if rec.val_f1 is None else f"{rec.val_f1:.6f}"
                    writer.writerow([rec.epoch, repr(rec.total_loss), repr(rec.align_loss),
                                     repr(rec.reconstruct_loss), val])
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, state: EncoderState, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - self.beta1 ** t
        corr2 = 1.0 - self.beta2 ** t
        for g in PARAM_GROUPS:
            if g in state.frozen:
                continue
            grad = grads[g]
            m = self.m.setdefault(g, np.zeros_like(grad))
            v = self.v.setdefault(g, np.zeros_like(grad))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            param = state.params[g]
            if g == "base_emb" and state.trainable_rows is not None:
                rows = state.trainable_rows
                param[rows] -= update[rows]
            else:
                param -= update
        if "proxies" not in state.frozen:
            proxies = state.params["proxies"]
            proxies /= np.linalg.norm(proxies, axis=1, keepdims=True)


def metric_of(config) -> SimilarityMetric:
    return SimilarityMetric(config.metric, config.csls_k)


def validation_f1(state: EncoderState, pair: SnapshotPair, valid, config) -> float:
    """F1 of bidirectional search restricted to the entities of ``valid``."""
    if not valid:
        return 0.0
    left = sorted({a for a, _ in valid})
    right = sorted({b for _, b in valid})
    emb = encode_all(state, pair)
    found = bidirectional_search(emb.kg1(left), emb.kg2(right), metric_of(config), left, right)
    return evaluate(found, valid).f1


def _chunks(items, size):
    return [items[i : i + size] for i in range(0, len(items), size)]


def _optimize(state, pair, config, epochs, batch_plan, loss_tag, valid, rng):
    """Shared epoch loop. ``batch_plan(rng)`` yields ``(batch, ta_batch)`` per step."""
    start = time.perf_counter()
    opt = Adam(config.lr)
    history = []
    breakdown, _ = gradient(loss_tag, state, pair, config, *_first_batches(batch_plan, rng))
    best_f1 = validation_f1(state, pair, valid, config)
    history.append(EpochRecord(0, breakdown.total, breakdown.align, breakdown.reconstruct, best_f1))
    best_state = state.copy()
    bad_evals = 0
    steps = 0
    stopped = 0
    for epoch in range(1, epochs + 1):
        totals = np.zeros(3)
        n_batches = 0
        for batch, ta_batch in batch_plan(rng):
            breakdown, grads = gradient(loss_tag, state, pair, config, batch, ta_batch)
            if not math.isfinite(breakdown.total):
                raise TrainingDivergedError(epoch, breakdown.total)
            opt.step(state, grads)
            totals += (breakdown.total, breakdown.align + config.beta * breakdown.align_ta, breakdown.reconstruct)
            n_batches += 1
            steps += 1
        totals /= max(n_batches, 1)
        if not np.isfinite(totals).all() or not state.is_finite():
            raise TrainingDivergedError(epoch, totals[0])
        rec = EpochRecord(epoch, float(totals[0]), float(totals[1]), float(totals[2]))
        stopped = epoch
        if epoch % config.eval_every == 0 or epoch == epochs:
            rec.val_f1 = validation_f1(state, pair, valid, config)
            if rec.val_f1 > best_f1:
                best_f1, bad_evals = rec.val_f1, 0
                best_state = state.copy()
            else:
                if rec.val_f1 == best_f1:
                    best_state = state.copy()
                bad_evals += 1
            log.debug("epoch %d loss %.4f val_f1 %.4f", epoch, rec.total_loss, rec.val_f1)
        history.append(rec)
        if rec.val_f1 is not None and bad_evals > config.patience:
            break
    wall = max(time.perf_counter() - start, 1e-9)
    return TrainedModel(best_state, history, stopped, wall, steps)


def _first_batches(batch_plan, rng):
    # peek at a plan drawn from a throwaway generator so the real stream is untouched
    for batch, ta_batch in batch_plan(np.random.default_rng(0)):
        return batch, ta_batch
    return Batch(()), Batch(())


def train_initial(pair: SnapshotPair, aligns: AlignmentSets, config, seed: int | None = None) -> TrainedModel:
    """Train every parameter group from scratch on the seed alignment."""
    if not aligns.seed:
        raise PreconditionError("seed alignment is empty")
    seed = config.seed if seed is None else seed
    state = init_parameters(pair, config, seed)
    seeds = sorted(aligns.seed)

    def plan(rng):
        order = rng.permutation(len(seeds))
        shuffled = [seeds[i] for i in order]
        return [(Batch(tuple(chunk)), Batch(())) for chunk in _chunks(shuffled, config.batch_size)]

    rng = np.random.default_rng([seed, 1])
    model = _optimize(state, pair, config, config.epochs, plan, "initial", aligns.valid, rng)
    log.info("t=%d initial training: %d epochs, %.2fs", pair.t, model.stopped_epoch, model.wall_time_s)
    return model


def finetune_state(prev_state: EncoderState, pair_next: SnapshotPair, delta: GrowthDelta, seed: int = 0) -> EncoderState:
    """Inductive init plus the finetuning freeze regime."""
    state = init_new_entities(prev_state, pair_next, delta, seed)
    rows = new_entity_rows(pair_next, delta)
    state.frozen = FINETUNE_FROZEN | ({"base_emb"} if len(rows) == 0 else set())
    state.trainable_rows = rows
    return state


def finetune(model_prev: TrainedModel, pair_next: SnapshotPair, delta: GrowthDelta, asa, ta_top, config,
             valid=frozenset(), epochs: int | None = None) -> TrainedModel:
    """Finetune the cross-graph layer and new entity rows on ASA plus replayed TA pairs."""
    epochs = config.finetune_epochs if epochs is None else epochs
    state = finetune_state(model_prev.state, pair_next, delta, config.seed)
    asa = sorted(asa)
    ta = sorted((p[0], p[1]) for p in ta_top)
    if not asa and not ta and epochs > 0:
        warnings.warn("no finetuning signal: empty ASA and TA; reconstruction only", RuntimeWarning, stacklevel=2)

    def plan(rng):
        asa_order = [asa[i] for i in rng.permutation(len(asa))]
        ta_order = [ta[i] for i in rng.permutation(len(ta))]
        a_chunks = _chunks(asa_order, config.batch_size)
        t_chunks = _chunks(ta_order, config.batch_size)
        n = max(len(a_chunks), len(t_chunks), 1)
        return [
            (Batch(tuple(a_chunks[i]) if i < len(a_chunks) else ()),
             Batch(tuple(t_chunks[i]) if i < len(t_chunks) else ()))
            for i in range(n)
        ]

    rng = np.random.default_rng([config.seed, 2, pair_next.t])
    model = _optimize(state, pair_next, config, epochs, plan, "finetune", valid, rng)
    log.info("t=%d finetune: %d epochs, %.2fs", pair_next.t, model.stopped_epoch, model.wall_time_s)
    return model
