"""Snapshot-by-snapshot orchestration: train once, then grow, finetune and integrate.

Modes at t > 0:

* ``full``          inductive init, finetune on ASA + top-m TA, integrate
* ``no_ta``         as ``full`` without the replayed TA term
* ``no_ta_no_asa``  inductive init and search only (no gradient steps)
* ``retrain``       train from scratch on the snapshot, replace the TA set
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from contea.config import RunConfig
from contea.encoder import check_extends, encode_all, save_state
from contea.errors import ConteaError, SnapshotError
from contea.evalkit import Metrics, emit_report, evaluate, new_entity_recall
from contea.kg_store import AlignmentSets, GrowthDelta, SnapshotPair, load_snapshot, validate_growth
from contea.matcher import Alignment, TrustworthyAlignment, bidirectional_search, integrate_alignment, write_alignment
from contea.trainer import TrainedModel, finetune, metric_of, train_initial

log = logging.getLogger(__name__)


@dataclass
class SnapshotRecord:
    t: int
    mode: str
    metrics: Metrics
    wall_time_s: float
    train_time_s: float
    ta_size: int
    test_size: int
    asa_size: int = 0
    replayed_ta: int = 0
    grad_steps: int = 0


@dataclass
class RunRecord:
    mode: str
    snapshots: list = field(default_factory=list)

    def by_t(self, t: int) -> SnapshotRecord:
        return next(s for s in self.snapshots if s.t == t)

    def correct_counts(self) -> list:
        return [s.test_size * s.metrics.recall for s in self.snapshots]


def select_affected_seeds(seeds, delta: GrowthDelta) -> frozenset:
    """Seed pairs with an endpoint that occurs in a newly added triple of its KG."""
    touched1 = {e for h, _r, t in delta.new_triples_1 for e in (h, t)}
    touched2 = {e for h, _r, t in delta.new_triples_2 for e in (h, t)}
    return frozenset((a, b) for a, b in seeds if a in touched1 or b in touched2)


def select_top_ta(ta, m: int) -> tuple:
    """The ``m`` highest-scoring pairs, ties by ascending KG1 id."""
    if m < 0:
        raise ValueError("m must be non-negative")
    ranked = sorted(ta, key=lambda p: (-p.score, p.e1, p.e2))
    return tuple(ranked[:m])


def search_candidates(pair: SnapshotPair, aligns: AlignmentSets):
    """Entities eligible for prediction: everything not already in the seed or validation pairs."""
    known = aligns.seed | aligns.valid
    used1 = {a for a, _ in known}
    used2 = {b for _, b in known}
    left = [e for e in range(pair.n1) if e not in used1]
    right = [e for e in range(pair.n2) if e not in used2]
    return left, right


def predict(state, pair: SnapshotPair, aligns: AlignmentSets, config: RunConfig) -> TrustworthyAlignment:
    left, right = search_candidates(pair, aligns)
    if not left or not right:
        return TrustworthyAlignment()
    emb = encode_all(state, pair)
    return bidirectional_search(emb.kg1(left), emb.kg2(right), metric_of(config), left, right, found_at=pair.t)


@dataclass
class _Step:
    model: TrainedModel
    ta: TrustworthyAlignment
    asa_size: int = 0
    replayed: int = 0


def initial_step(pair, aligns, config, model: TrainedModel | None = None) -> _Step:
    if model is None:
        model = train_initial(pair, aligns, config)
    return _Step(model, predict(model.state, pair, aligns, config))


def continual_step(prev: _Step, pair, aligns, delta, config) -> _Step:
    mode = config.mode
    if mode == "retrain":
        model = train_initial(pair, aligns, config)
        return _Step(model, predict(model.state, pair, aligns, config))
    if mode == "no_ta_no_asa":
        asa, top, epochs = frozenset(), (), 0
    elif mode == "no_ta":
        asa, top, epochs = select_affected_seeds(aligns.seed, delta), (), None
        config = config.replace(beta=0.0)
    else:
        asa, top, epochs = select_affected_seeds(aligns.seed, delta), select_top_ta(prev.ta, config.m), None
    model = finetune(prev.model, pair, delta, asa, top, config, valid=aligns.valid, epochs=epochs)
    new_ta = predict(model.state, pair, aligns, config)
    ta = integrate_alignment(prev.ta, new_ta, delta)
    return _Step(model, ta, len(asa), len(top))


def _record(step: _Step, pair, aligns, config, new1, new2, wall) -> SnapshotRecord:
    m = evaluate(step.ta, aligns.test)
    ner = new_entity_recall(step.ta, aligns.test, (new1, new2))
    metrics = Metrics(m.precision, m.recall, m.f1, m.correct_count, ner)
    return SnapshotRecord(
        pair.t, config.mode, metrics, wall, step.model.wall_time_s, len(step.ta), len(aligns.test),
        step.asa_size, step.replayed, step.model.steps,
    )


def load_sequence(snapshot_dirs):
    """Load snapshots in order, each interned on top of the previous one."""
    loaded = []
    prev = None
    for i, d in enumerate(snapshot_dirs):
        try:
            pair, aligns = load_snapshot(d, base=prev[0] if prev else None, t=i if prev is None else prev[0].t + 1)
            delta = None
            if prev is not None:
                delta = validate_growth(prev[0], pair)
                check_extends(prev[0], pair)
        except ConteaError as exc:
            raise SnapshotError(i, exc) from exc
        loaded.append((pair, aligns, delta))
        prev = (pair, aligns)
    return loaded


def run_loaded(loaded, config: RunConfig, initial: TrainedModel | None = None, out_dir=None) -> RunRecord:
    """Run one mode over already-loaded snapshots; ``initial`` reuses a t=0 model."""
    record = RunRecord(config.mode)
    new1, new2 = set(), set()
    step = None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for i, (pair, aligns, delta) in enumerate(loaded):
        start = time.perf_counter()
        try:
            if step is None:
                step = initial_step(pair, aligns, config, initial)
            else:
                new1 |= delta.new_entities_1
                new2 |= delta.new_entities_2
                step = continual_step(step, pair, aligns, delta, config)
        except ConteaError as exc:
            raise SnapshotError(i, exc) from exc
        wall = time.perf_counter() - start
        snap = _record(step, pair, aligns, config, new1, new2, wall)
        record.snapshots.append(snap)
        log.info("t=%d mode=%s P=%.3f R=%.3f F1=%.3f |TA|=%d", pair.t, config.mode,
                 snap.metrics.precision, snap.metrics.recall, snap.metrics.f1, snap.ta_size)
        if out is not None:
            save_state(out / f"checkpoint_t{pair.t}.npz", step.model.state)
            step.model.write_history(out / f"history_t{pair.t}.csv")
            write_alignment(out / f"alignment_t{pair.t}.tsv", step.ta, pair.kg1, pair.kg2)
    if out is not None:
        emit_report(record, out)
        _write_manifest(out, config, loaded, record)
    return record


def _write_manifest(out: Path, config: RunConfig, loaded, record: RunRecord) -> None:
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    manifest = {
        "config": asdict(config),
        "snapshots": [
            {
                "t": pair.t,
                "checkpoint": f"checkpoint_t{pair.t}.npz",
                "alignment": f"alignment_t{pair.t}.tsv",
                "history": f"history_t{pair.t}.csv",
            }
            for pair, _a, _d in loaded
        ],
        "metrics": "metrics.csv",
        "growth": "growth.csv",
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(snapshot_dirs, config: RunConfig, out_dir=None, initial: TrainedModel | None = None) -> RunRecord:
    """Load, validate and process a snapshot sequence in the configured mode."""
    return run_loaded(load_sequence(snapshot_dirs), config, initial, out_dir)


def run_modes(snapshot_dirs, config: RunConfig, modes, out_dir=None) -> dict:
    """Run several modes that share one t=0 model; returns ``{mode: RunRecord}``."""
    loaded = load_sequence(snapshot_dirs)
    pair, aligns, _ = loaded[0]
    initial = train_initial(pair, aligns, config)
    records = {}
    for mode in modes:
        sub = None if out_dir is None else Path(out_dir) / mode
        records[mode] = run_loaded(loaded, config.replace(mode=mode), initial, sub)
    return records
