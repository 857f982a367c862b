"""Small one-stream transformer encoder with scheduled token elimination.

The encoder is a plain pre-norm transformer over the whole joint sequence.
It exists to exercise the pruning logic end to end (traces, kept indices,
restored search-region features), not to track anything: weights are
seeded random unless loaded from fixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .budget import EVENT_ORDER, LayerCounts, PruneEvent, PruningSchedule
from .ctem import PruneDecision, PruneOptions, eliminate, restore_and_pad
from .layout import Segment, SegmentLayout, TokenBatch
from .numerics import matmul, softmax_rows

LN_EPS = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    embed_dim: int
    num_heads: int
    mlp_ratio: float = 4.0
    weight_seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def hidden_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @classmethod
    def preset(cls, name: str, **overrides) -> "EncoderConfig":
        try:
            params = dict(ENCODER_PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown encoder preset {name!r}") from None
        params.update(overrides)
        return cls(**params)


ENCODER_PRESETS = {
    "ostrack256": dict(num_layers=12, embed_dim=768, num_heads=12),
    "ostrack384": dict(num_layers=12, embed_dim=768, num_heads=12),
    # depth of the 24-layer hierarchical backbone; width of its main stage
    "sutrack224": dict(num_layers=24, embed_dim=512, num_heads=8),
    "sutrack384": dict(num_layers=24, embed_dim=512, num_heads=8),
}


@dataclass(frozen=True)
class LayerWeights:
    w_qkv: np.ndarray = field(repr=False)
    w_out: np.ndarray = field(repr=False)
    w_fc1: np.ndarray = field(repr=False)
    w_fc2: np.ndarray = field(repr=False)


def init_weights(config: EncoderConfig) -> list[LayerWeights]:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, no biases."""
    rng = np.random.default_rng(config.weight_seed)
    d, h = config.embed_dim, config.hidden_dim

    def u(fan_in, fan_out):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    return [LayerWeights(u(d, 3 * d), u(d, d), u(d, h), u(h, d)) for _ in range(config.num_layers)]


def layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def joint_attention(x: np.ndarray, weights: LayerWeights, num_heads: int) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head self-attention over the whole joint sequence.

    Returns the concatenated per-head context (before the output
    projection) and the (heads, N, N) attention stack.
    """
    n, d = x.shape
    if weights.w_qkv.shape != (d, 3 * d):
        raise ValueError(f"qkv weights {weights.w_qkv.shape} do not match embed dim {d}")
    if n == 0:
        raise ValueError("cannot attend over an empty sequence")
    hd = d // num_heads
    qkv = matmul(x, weights.w_qkv)
    q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
    scale = 1.0 / math.sqrt(hd)
    attn = np.empty((num_heads, n, n))
    ctx = np.empty((n, d))
    for head in range(num_heads):
        sl = slice(head * hd, (head + 1) * hd)
        logits = matmul(q[:, sl], k[:, sl].T) * scale
        attn[head] = softmax_rows(logits)
        ctx[:, sl] = matmul(attn[head], v[:, sl])
    return ctx, attn


def encoder_layer(x: np.ndarray, weights: LayerWeights, num_heads: int) -> tuple[np.ndarray, np.ndarray]:
    ctx, attn = joint_attention(layer_norm(x), weights, num_heads)
    x = x + matmul(ctx, weights.w_out)
    x = x + matmul(gelu(matmul(layer_norm(x), weights.w_fc1)), weights.w_fc2)
    return x, attn


@dataclass(frozen=True)
class LayerTrace:
    layer_index: int
    tokens_processed: int
    counts: LayerCounts
    prune_events: list[PruneDecision] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "layer": self.layer_index,
            "tokens_processed": self.tokens_processed,
            "counts": self.counts._asdict(),
            "prune_events": [d.to_dict() for d in self.prune_events],
        }


class ForwardResult(NamedTuple):
    restored: np.ndarray
    traces: list[LayerTrace]
    batch: TokenBatch


def drop_tokens(batch: TokenBatch, decision: PruneDecision) -> TokenBatch:
    gone = (batch.segment_tag == decision.segment) & np.isin(
        batch.original_index, decision.dropped_original_indices
    )
    return batch.select(np.flatnonzero(~gone))


def _events(schedule, num_layers: int) -> list[PruneEvent]:
    if isinstance(schedule, PruningSchedule):
        events = schedule.events()
    else:
        events = [PruneEvent(int(e[0]), Segment.parse(e[1]), float(e[2])) for e in schedule]
        events.sort(key=lambda e: (e.layer, EVENT_ORDER.index(e.segment) if e.segment in EVENT_ORDER else -1))
    for e in events:
        if e.segment == Segment.TEXT:
            raise ValueError("the text token is never pruned")
        if not 1 <= e.layer <= num_layers:
            raise ValueError(f"prune event at layer {e.layer} outside 1..{num_layers}")
    return events


def _counts(batch: TokenBatch) -> LayerCounts:
    return LayerCounts(*(batch.count(s) for s in (Segment.SR, Segment.ST, Segment.DT, Segment.TEXT)))


def forward(
    config: EncoderConfig,
    batch: TokenBatch,
    layout: SegmentLayout,
    schedule: PruningSchedule | Sequence[PruneEvent] = PruningSchedule(),
    options: PruneOptions = PruneOptions(),
    weights: Sequence[LayerWeights] | None = None,
) -> ForwardResult:
    """Run every layer, pruning after each layer that has scheduled events.

    All events of a layer are scored on that layer's attention map and
    applied in CE, DTE, STE order.
    """
    if batch.embed_dim != config.embed_dim:
        raise ValueError(f"batch width {batch.embed_dim} != encoder embed_dim {config.embed_dim}")
    events = _events(schedule, config.num_layers)
    if weights is None:
        weights = init_weights(config)
    if len(weights) != config.num_layers:
        raise ValueError(f"got {len(weights)} layer weights for {config.num_layers} layers")

    traces = []
    for layer, w in enumerate(weights, start=1):
        counts = _counts(batch)
        out, attn = encoder_layer(batch.features, w, config.num_heads)
        layer_batch = batch.with_features(out)
        batch = layer_batch
        decisions = []
        for e in (e for e in events if e.layer == layer):
            _, dec = eliminate(attn, layer_batch, layout, e.segment, e.keep_ratio, options, layer=layer)
            batch = drop_tokens(batch, dec)
            decisions.append(dec)
        traces.append(LayerTrace(layer, len(layer_batch), counts, decisions))
    return ForwardResult(restore_and_pad(batch, layout), traces, batch)
