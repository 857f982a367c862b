"""Attention-guided pruning of search-region and template tokens in one-stream trackers."""

from .budget import PruneEvent, PruningSchedule, budget_report, staged_schedule, token_schedule
from .ctem import PruneOptions, restore_and_pad
from .encoder import EncoderConfig, forward
from .layout import BBox, ForegroundBonus, Segment, SegmentLayout, TokenBatch, assemble_batch

__all__ = [
    "BBox",
    "EncoderConfig",
    "ForegroundBonus",
    "PruneEvent",
    "PruneOptions",
    "PruningSchedule",
    "Segment",
    "SegmentLayout",
    "TokenBatch",
    "assemble_batch",
    "budget_report",
    "forward",
    "restore_and_pad",
    "staged_schedule",
    "token_schedule",
]
