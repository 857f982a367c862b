"""Reference paths that check the pruning engine without sharing its logic.

``masked_forward`` never removes rows. Dropped tokens stay in the sequence
but their keys get a -inf logit, so they stop influencing anyone; ranking
is done from scratch over the still-alive columns. Physically pruning a
token and masking it out must give the same surviving features.
"""

from __future__ import annotations

import math

import numpy as np

from .budget import PruningSchedule
from .ctem import PruneOptions
from .layout import Segment, SegmentLayout, TokenBatch, center_index
from .numerics import exact_ratio, matmul


def _ln(x):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + 1e-6)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _masked_softmax(logits, alive):
    z = np.where(alive[None, :], logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _rank(candidates, scores, k):
    # (score desc, original index asc)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return {candidates[i] for i in order[:k]}


def masked_forward(config, batch: TokenBatch, layout: SegmentLayout, schedule: PruningSchedule,
                   options: PruneOptions, weights):
    """Returns (features of every original token, alive mask, kept sets per event)."""
    x = np.array(batch.features, dtype=np.float64)
    tags = batch.segment_tag
    orig = batch.original_index
    alive = np.ones(len(batch), dtype=bool)
    d, nh = config.embed_dim, config.num_heads
    hd = d // nh
    center_pos = int(np.flatnonzero((tags == Segment.ST) & (orig == center_index(layout.tmpl_grid)))[0])
    text_pos = np.flatnonzero(tags == Segment.TEXT)
    events = schedule.events()
    kept_log = []

    for layer, w in enumerate(weights, start=1):
        h = _ln(x)
        qkv = matmul(h, w.w_qkv)
        attn = np.empty((nh, len(x), len(x)))
        ctx = np.empty_like(x)
        for head in range(nh):
            sl = slice(head * hd, (head + 1) * hd)
            logits = matmul(qkv[:, sl], qkv[:, d:][:, sl].T) / math.sqrt(hd)
            attn[head] = _masked_softmax(logits, alive)
            ctx[:, sl] = matmul(attn[head], qkv[:, 2 * d :][:, sl])
        x = x + matmul(ctx, w.w_out)
        x = x + matmul(_gelu(matmul(_ln(x), w.w_fc1)), w.w_fc2)

        alive_before = alive.copy()
        for e in (e for e in events if e.layer == layer):
            cols = np.flatnonzero((tags == e.segment) & alive_before)

            def row(q):
                r = attn[:, q, cols]
                return (r / r.sum(axis=1, keepdims=True)).mean(axis=0)

            s = row(center_pos)
            if e.segment in options.text_targets and text_pos.size:
                s = s + row(int(text_pos[0]))
            cand = [int(i) for i in orig[cols]]
            if e.segment == Segment.ST and options.bonus is not None and options.bonus.active:
                s = s + options.bonus.weight * options.bonus.values[cand]
            k = math.ceil(exact_ratio(e.keep_ratio) * len(cand))
            if e.segment == Segment.ST:
                c = center_index(layout.tmpl_grid)
                rest = [i for i, o in enumerate(cand) if o != c]
                kept = {c} | _rank([cand[i] for i in rest], [s[i] for i in rest], k - 1)
            else:
                kept = _rank(cand, list(s), k)
            for p, o in zip(cols, cand):
                if o not in kept:
                    alive[p] = False
            kept_log.append((layer, e.segment, sorted(kept)))
    return x, alive, kept_log
