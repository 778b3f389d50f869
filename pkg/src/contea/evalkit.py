"""Precision/recall/F1 against gold pairs and CSV reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from contea.errors import EmptyGoldError, OutputError

METRICS_COLUMNS = (
    "snapshot", "mode", "precision", "recall", "f1", "new_entity_recall", "wall_time_s", "ta_size",
)
GROWTH_COLUMNS = ("snapshot", "correct_alignment_count")


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    correct_count: int
    new_entity_recall: float | None = None


def _pairs(predicted) -> set:
    if hasattr(predicted, "pair_set"):
        return predicted.pair_set()
    return {(int(p[0]), int(p[1])) for p in predicted}


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def evaluate(predicted, gold) -> Metrics:
    pred = _pairs(predicted)
    gold = _pairs(gold)
    if not gold:
        raise EmptyGoldError("gold alignment is empty")
    correct = len(pred & gold)
    precision = correct / len(pred) if pred else 0.0
    recall = correct / len(gold)
    return Metrics(precision, recall, f1_score(precision, recall), correct)


def new_entity_recall(predicted, gold, new_entities) -> float | None:
    """Recall restricted to pairs touching a new entity; None if no gold pair does.

    ``new_entities`` is ``(kg1 ids, kg2 ids)``.
    """
    new1, new2 = (set(s) for s in new_entities)

    def touches(p):
        return p[0] in new1 or p[1] in new2

    gold_new = {p for p in _pairs(gold) if touches(p)}
    if not gold_new:
        return None
    pred_new = {p for p in _pairs(predicted) if touches(p)}
    return len(pred_new & gold_new) / len(gold_new)


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def emit_report(record, out_dir) -> list:
    """Write ``metrics.csv`` and ``growth.csv`` for a run record; returns the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out_dir}: {exc}") from exc
    metric_rows, growth_rows = [], []
    for snap in record.snapshots:
        m = snap.metrics
        metric_rows.append([
            snap.t, snap.mode, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1),
            _fmt(m.new_entity_recall), _fmt(snap.wall_time_s), snap.ta_size,
        ])
        # |A_p^t| x recall, as used for the correct-alignment growth curve
        growth_rows.append([snap.t, _fmt(snap.test_size * m.recall)])
    paths = [out_dir / "metrics.csv", out_dir / "growth.csv"]
    _write_csv(paths[0], METRICS_COLUMNS, metric_rows)
    _write_csv(paths[1], GROWTH_COLUMNS, growth_rows)
    return paths
