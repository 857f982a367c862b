"""Candidate / template elimination: attention-guided token pruning.

Scores come from the attention row whose query is the static template's
center token, restricted to the columns of the segment being pruned and
renormalized. The text token's row can be added on top, and static
template scores can receive a bounding-box foreground bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layout import ForegroundBonus, Segment, SegmentLayout, TokenBatch, center_index
from .numerics import keep_count, topk_indices

PRUNABLE = (Segment.SR, Segment.DT, Segment.ST)


@dataclass(frozen=True)
class ImportanceScores:
    segment: Segment
    scores: np.ndarray
    head_count: int
    # original grid index of each scored token, aligned with ``scores``
    original_index: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        o = np.asarray(self.original_index, dtype=np.int64)
        if s.shape != o.shape or s.ndim != 1:
            raise ValueError("scores and original_index must be aligned 1-D arrays")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "original_index", o)

    def replace(self, scores) -> "ImportanceScores":
        return ImportanceScores(self.segment, scores, self.head_count, self.original_index)


@dataclass(frozen=True)
class PruneDecision:
    segment: Segment
    kept_original_indices: np.ndarray
    dropped_original_indices: np.ndarray
    layer: int = 0

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "segment": self.segment.name,
            "kept": [int(i) for i in self.kept_original_indices],
            "dropped": [int(i) for i in self.dropped_original_indices],
        }


@dataclass(frozen=True)
class PruneOptions:
    """Ranking extras: ST foreground bonus and text-guided targets."""

    bonus: ForegroundBonus | None = None
    text_targets: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        targets = frozenset(Segment.parse(s) for s in self.text_targets)
        if Segment.TEXT in targets:
            raise ValueError("the text token cannot be a text-guidance target")
        object.__setattr__(self, "text_targets", targets)


def _as_stack(attn) -> np.ndarray:
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"attention stack must be (heads, N, N), got {a.shape}")
    return a


def _row_scores(attn, batch: TokenBatch, query_pos: int, target: Segment) -> ImportanceScores:
    a = _as_stack(attn)
    if a.shape[1] != len(batch):
        raise ValueError(f"attention covers {a.shape[1]} tokens, batch has {len(batch)}")
    cols = batch.positions(target)
    rows = a[:, query_pos, cols]
    rows = rows / rows.sum(axis=1, keepdims=True)
    return ImportanceScores(target, rows.mean(axis=0), a.shape[0], batch.original_index[cols])


def score_segment(attn, batch: TokenBatch, layout: SegmentLayout, target: Segment) -> ImportanceScores:
    """Head-averaged attention of the ST center token over ``target``'s tokens."""
    target = Segment.parse(target)
    if target not in PRUNABLE:
        raise ValueError(f"segment {target.name} is not prunable")
    q = batch.position_of(Segment.ST, center_index(layout.tmpl_grid))
    if q is None:
        raise ValueError("static template center token is missing from the batch")
    return _row_scores(attn, batch, q, target)


def text_scores(attn, batch: TokenBatch, target: Segment) -> ImportanceScores:
    """Same as :func:`score_segment` but queried by the text token."""
    pos = batch.positions(Segment.TEXT)
    if pos.size != 1:
        raise ValueError("text-guided scoring needs exactly one text token")
    return _row_scores(attn, batch, int(pos[0]), Segment.parse(target))


def fuse_text(base: ImportanceScores, text_attn_row) -> ImportanceScores:
    t = text_attn_row.scores if isinstance(text_attn_row, ImportanceScores) else np.asarray(text_attn_row, dtype=np.float64)
    if t.shape != base.scores.shape:
        raise ValueError(f"text row length {t.shape} != score length {base.scores.shape}")
    return base.replace(base.scores + t)


def apply_bonus(base: ImportanceScores, bonus: ForegroundBonus | None) -> ImportanceScores:
    if bonus is None or not bonus.active:
        return base
    if base.segment != Segment.ST:
        raise ValueError("foreground bonus only applies to static template scores")
    return base.replace(base.scores + bonus.weight * bonus.values[base.original_index])


def prune(
    batch: TokenBatch,
    scores: ImportanceScores,
    keep_ratio: float,
    *,
    center: int | None = None,
    layer: int = 0,
) -> tuple[TokenBatch, PruneDecision]:
    """Keep the ``ceil(keep_ratio * n)`` best-scored tokens of one segment.

    For the static template, ``center`` (an original index) is always kept
    and the remaining slots go to the top scores among the other tokens.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    seg = scores.segment
    pos = batch.positions(seg)
    orig = batch.original_index[pos]
    if not np.array_equal(orig, scores.original_index):
        raise ValueError("scores are not aligned with the batch's current tokens")
    n = pos.size
    k = keep_count(n, keep_ratio)

    if seg == Segment.ST:
        if center is None:
            raise ValueError("static template pruning needs the center token index")
        hit = np.flatnonzero(orig == center)
        if hit.size == 0:
            raise ValueError("static template center token is missing from the batch")
        c = int(hit[0])
        others = np.delete(np.arange(n), c)
        chosen = others[topk_indices(scores.scores[others], k - 1)]
        local = np.sort(np.append(chosen, c))
    else:
        local = topk_indices(scores.scores, k)

    keep_mask = np.ones(len(batch), dtype=bool)
    keep_mask[pos] = False
    keep_mask[pos[local]] = True
    dropped = np.setdiff1d(orig, orig[local])
    decision = PruneDecision(seg, np.sort(orig[local]), np.sort(dropped), layer)
    return batch.select(np.flatnonzero(keep_mask)), decision


def eliminate(
    attn,
    batch: TokenBatch,
    layout: SegmentLayout,
    target: Segment,
    keep_ratio: float,
    options: PruneOptions = PruneOptions(),
    *,
    layer: int = 0,
) -> tuple[TokenBatch, PruneDecision]:
    """Score, fuse, add bonus and prune one segment; ``attn`` must match ``batch``."""
    target = Segment.parse(target)
    s = score_segment(attn, batch, layout, target)
    if target in options.text_targets and batch.count(Segment.TEXT):
        s = fuse_text(s, text_scores(attn, batch, target))
    if target == Segment.ST:
        s = apply_bonus(s, options.bonus)
    center = center_index(layout.tmpl_grid) if target == Segment.ST else None
    return prune(batch, s, keep_ratio, center=center, layer=layer)


def restore_and_pad(batch: TokenBatch, layout: SegmentLayout) -> np.ndarray:
    """Scatter surviving SR tokens back onto the full SR grid, zeros elsewhere."""
    orig = batch.indices(Segment.SR)
    if orig.size == 0:
        raise ValueError("batch has no search-region tokens")
    if np.unique(orig).size != orig.size:
        raise ValueError("duplicate search-region indices")
    if orig.max() >= layout.n_sr:
        raise ValueError("search-region index outside the layout grid")
    out = np.zeros((layout.n_sr, batch.embed_dim))
    out[orig] = batch.segment_features(Segment.SR)
    return out
