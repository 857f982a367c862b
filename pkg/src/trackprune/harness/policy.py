"""Inference-time policy: dynamic-template refresh and the position prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import hann_window


@dataclass
class DtUpdateState:
    frame_counter: int = 0
    update_interval: int = 25
    confidence_threshold: float = 0.7

    def __post_init__(self):
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0, 1]")


def dt_update_decision(state: DtUpdateState, frame_index: int, confidence: float) -> bool:
    """Whether to replace the dynamic template at ``frame_index`` (1-based).

    Fires on multiples of the interval when confidence strictly exceeds
    the threshold. The state's frame counter advances on every call.
    """
    if frame_index < 1:
        raise ValueError("frame_index is 1-based")
    state.frame_counter += 1
    return frame_index % state.update_interval == 0 and confidence > state.confidence_threshold


def hanning_penalty(score_map) -> np.ndarray:
    m = np.asarray(score_map, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("score map must be 2-D")
    return m * np.outer(hann_window(m.shape[0]), hann_window(m.shape[1]))
