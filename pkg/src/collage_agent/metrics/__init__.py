"""Structural (CKA) and rubric metrics plus batch aggregation."""

from .batch import BatchResult, EvalItem, batch_evaluate, load_external_scores, load_manifest
from .rubric import (
    RUBRIC_AXES,
    VERDICTS,
    RubricScores,
    TransferReport,
    parse_rubric,
    parse_transfer_report,
    score_reference_transfer,
    score_visual_quality,
)
from .structure import RelationMatrix, cka, grid_cka, join_grid, relation_matrix, split_grid

__all__ = [
    "BatchResult", "EvalItem", "RUBRIC_AXES", "RelationMatrix", "RubricScores", "TransferReport",
    "VERDICTS", "batch_evaluate", "cka", "grid_cka", "join_grid", "load_external_scores",
    "load_manifest", "parse_rubric", "parse_transfer_report", "relation_matrix",
    "score_reference_transfer", "score_visual_quality", "split_grid",
]
