"""Closed-form token counts and MAC estimates for a pruning schedule.

Nothing here runs the encoder; the per-layer counts are derived directly
from the schedule, which lets the encoder traces be checked against them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import NamedTuple, Sequence

from .layout import Segment, SegmentLayout
from .numerics import ROUNDING_MODES, keep_count

# co-located events fire in this order
EVENT_ORDER = (Segment.SR, Segment.DT, Segment.ST)


class PruneEvent(NamedTuple):
    layer: int
    segment: Segment
    keep_ratio: float


@dataclass(frozen=True)
class PruningSchedule:
    """Layers (1-based) after which each segment is pruned, and keep ratios."""

    ce_layers: tuple[int, ...] = ()
    dte_layers: tuple[int, ...] = ()
    ste_layers: tuple[int, ...] = ()
    keep_ratio_sr: float = 0.7
    keep_ratio_dt: float = 0.7
    keep_ratio_st: float = 0.7

    def __post_init__(self):
        for name in ("ce_layers", "dte_layers", "ste_layers"):
            layers = tuple(sorted(int(v) for v in getattr(self, name)))
            if len(set(layers)) != len(layers):
                raise ValueError(f"{name} repeats a layer")
            object.__setattr__(self, name, layers)
        for name in ("keep_ratio_sr", "keep_ratio_dt", "keep_ratio_st"):
            r = float(getattr(self, name))
            if not 0.0 < r <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {r}")
            object.__setattr__(self, name, r)

    def layers_for(self, seg: Segment) -> tuple[int, ...]:
        return {Segment.SR: self.ce_layers, Segment.DT: self.dte_layers, Segment.ST: self.ste_layers}[seg]

    def ratio_for(self, seg: Segment) -> float:
        return {Segment.SR: self.keep_ratio_sr, Segment.DT: self.keep_ratio_dt, Segment.ST: self.keep_ratio_st}[seg]

    def events(self) -> list[PruneEvent]:
        evs = [PruneEvent(l, seg, self.ratio_for(seg)) for seg in EVENT_ORDER for l in self.layers_for(seg)]
        return sorted(evs, key=lambda e: (e.layer, EVENT_ORDER.index(e.segment)))

    def stage_layers(self) -> list[int]:
        return sorted({e.layer for e in self.events()})

    def validate(self, num_layers: int) -> None:
        for e in self.events():
            if not 1 <= e.layer <= num_layers:
                raise ValueError(f"{e.segment.name} prune at layer {e.layer} outside 1..{num_layers}")

    @property
    def is_empty(self) -> bool:
        return not (self.ce_layers or self.dte_layers or self.ste_layers)

    def to_dict(self) -> dict:
        return {
            "ce_layers": list(self.ce_layers),
            "dte_layers": list(self.dte_layers),
            "ste_layers": list(self.ste_layers),
            "keep_ratio_sr": self.keep_ratio_sr,
            "keep_ratio_dt": self.keep_ratio_dt,
            "keep_ratio_st": self.keep_ratio_st,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruningSchedule":
        return cls(**{k: (tuple(v) if k.endswith("_layers") else v) for k, v in d.items()})


# Ratios are the unique grid solutions reproducing the reported final token counts
RGB_KEEP = dict(keep_ratio_sr=0.7, keep_ratio_dt=0.7, keep_ratio_st=0.7)
UNIFIED_KEEP = dict(keep_ratio_sr=0.7, keep_ratio_dt=0.6, keep_ratio_st=0.6)

RGB_CE, RGB_DTE = (3, 6, 9), (4, 7, 10)
UNIFIED_CE, UNIFIED_DTE = (6, 12, 18), (9, 15, 21)


def staged_schedule(family: str, stages: Sequence[str] = ("ce", "dte", "ste")) -> PruningSchedule:
    """Default schedule of a model family with only ``stages`` switched on.

    ``family`` is ``"rgb"`` (12-layer) or ``"unified"`` (24-layer); STE
    shares the DTE layers.
    """
    if family == "rgb":
        ce, dte, keep = RGB_CE, RGB_DTE, RGB_KEEP
    elif family == "unified":
        ce, dte, keep = UNIFIED_CE, UNIFIED_DTE, UNIFIED_KEEP
    else:
        raise ValueError(f"unknown family {family!r}")
    stages = set(stages)
    if stages - {"ce", "dte", "ste"}:
        raise ValueError(f"unknown stages {sorted(stages)}")
    return PruningSchedule(
        ce_layers=ce if "ce" in stages else (),
        dte_layers=dte if "dte" in stages else (),
        ste_layers=dte if "ste" in stages else (),
        **keep,
    )


class LayerCounts(NamedTuple):
    sr: int
    st: int
    dt: int
    text: int = 0

    @property
    def vision(self) -> int:
        return self.sr + self.st + self.dt

    @property
    def total(self) -> int:
        return self.vision + self.text


def token_schedule(layout: SegmentLayout, num_layers: int, schedule: PruningSchedule) -> list[LayerCounts]:
    """Token counts entering each layer; a prune at layer L shows up from L+1."""
    schedule.validate(num_layers)
    cur = {Segment.SR: layout.n_sr, Segment.ST: layout.n_st, Segment.DT: layout.n_dt}
    by_layer: dict[int, list[PruneEvent]] = {}
    for e in schedule.events():
        by_layer.setdefault(e.layer, []).append(e)
    out = []
    for layer in range(1, num_layers + 1):
        out.append(LayerCounts(cur[Segment.SR], cur[Segment.ST], cur[Segment.DT], layout.n_text))
        for e in by_layer.get(layer, ()):
            cur[e.segment] = keep_count(cur[e.segment], e.keep_ratio)
    return out


def final_counts(layout: SegmentLayout, num_layers: int, schedule: PruningSchedule) -> LayerCounts:
    """Counts leaving the last layer (what the tracking head receives)."""
    counts = token_schedule(layout, num_layers, schedule)[-1]
    cur = counts._asdict()
    for e in schedule.events():
        if e.layer == num_layers:
            key = e.segment.name.lower()
            cur[key] = keep_count(cur[key], e.keep_ratio)
    return LayerCounts(**cur)


def avg_and_cmp(per_layer: Sequence[int]) -> tuple[float, int]:
    if not per_layer:
        raise ValueError("need at least one layer")
    return sum(per_layer) / len(per_layer), int(per_layer[-1])


def report_round(value: float, decimals: int = 0) -> Decimal:
    """Round half-up to the precision the tables are printed at."""
    q = Decimal(1).scaleb(-decimals)
    return Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP)


def estimate_macs(per_layer_tokens: Sequence[int], embed_dim: int, mlp_ratio: float = 4.0) -> float:
    """Multiply-accumulates of the encoder layers.

    Per layer: QKV and output projections 4*N*d^2, MLP 2*mlp_ratio*N*d^2,
    attention scores and weighted values 2*N^2*d.
    """
    if embed_dim < 1 or mlp_ratio <= 0:
        raise ValueError("embed_dim and mlp_ratio must be positive")
    d = float(embed_dim)
    linear = 4.0 + 2.0 * mlp_ratio
    return float(sum(linear * n * d * d + 2.0 * n * n * d for n in per_layer_tokens))


@dataclass(frozen=True)
class BudgetReport:
    per_layer: list[LayerCounts] = field(repr=False)
    avg_vis_tok: float
    cmp_vis_tok: int
    macs_total: float
    macs_baseline: float

    @property
    def per_layer_tokens(self) -> list[int]:
        return [c.vision for c in self.per_layer]

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.macs_total / self.macs_baseline)

    def summary(self) -> dict:
        return {
            "avg_vis_tok": self.avg_vis_tok,
            "cmp_vis_tok": self.cmp_vis_tok,
            "macs_total": self.macs_total,
            "macs_baseline": self.macs_baseline,
            "reduction_pct": self.reduction_pct,
        }


def budget_report(
    layout: SegmentLayout,
    num_layers: int,
    schedule: PruningSchedule,
    embed_dim: int | None = None,
    mlp_ratio: float = 4.0,
) -> BudgetReport:
    d = embed_dim or layout.embed_dim
    counts = token_schedule(layout, num_layers, schedule)
    avg, cmp_ = avg_and_cmp([c.vision for c in counts])
    base = [layout.n_total] * num_layers
    return BudgetReport(
        per_layer=counts,
        avg_vis_tok=avg,
        cmp_vis_tok=cmp_,
        macs_total=estimate_macs([c.total for c in counts], d, mlp_ratio),
        macs_baseline=estimate_macs(base, d, mlp_ratio),
    )


CALIBRATION_RATIOS = tuple(round(0.50 + 0.05 * i, 2) for i in range(9)) + (1.0,)


def calibrate_keep_ratios(
    layout: SegmentLayout,
    num_layers: int,
    event_layers: Sequence[int],
    target_cmp: int,
    segment: Segment = Segment.SR,
    ratios: Sequence[float] = CALIBRATION_RATIOS,
    roundings: Sequence[str] = ROUNDING_MODES,
) -> list[tuple[float, str]]:
    """Every (ratio, rounding) on the grid whose final count hits ``target_cmp``.

    An empty list means no grid point matches.
    """
    segment = Segment.parse(segment)
    for l in event_layers:
        if not 1 <= l <= num_layers:
            raise ValueError(f"event layer {l} outside 1..{num_layers}")
    start = layout.count(segment)
    hits = []
    for ratio, mode in itertools.product(ratios, roundings):
        n = start
        for _ in event_layers:
            n = keep_count(n, ratio, mode)
        if n == target_cmp:
            hits.append((ratio, mode))
    return hits
