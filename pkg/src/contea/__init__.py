"""Continual entity alignment over growing knowledge-graph snapshot pairs."""

from contea.config import RunConfig
from contea.errors import ConteaError
from contea.kg_store import (
    AlignmentSets,
    GrowthDelta,
    KnowledgeGraph,
    SnapshotPair,
    load_snapshot,
    neighbors,
    validate_growth,
)

__all__ = [
    "AlignmentSets",
    "ConteaError",
    "GrowthDelta",
    "KnowledgeGraph",
    "RunConfig",
    "SnapshotPair",
    "load_snapshot",
    "neighbors",
    "validate_growth",
]

__version__ = "0.1.0"
