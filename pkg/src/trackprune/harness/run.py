"""Report emission for the ``schedule`` and ``forward`` commands."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..budget import budget_report, estimate_macs, report_round
from ..encoder import ForwardResult, forward
from ..layout import Segment, SegmentLayout
from .config import RunConfig, build_inputs
from .fixtures import write_fixture, write_pgm

SCHEDULE_FIELDS = [
    "kind", "layer", "sr", "st", "dt", "text", "vision", "total", "macs",
    "avg_vis_tok", "cmp_vis_tok", "macs_total", "macs_baseline", "reduction_pct",
]


def run_schedule(cfg: RunConfig, out_dir: Path) -> dict:
    cfg.validate()
    lay, enc = cfg.layout, cfg.encoder
    rep = budget_report(lay, enc.num_layers, cfg.schedule, enc.embed_dim, enc.mlp_ratio)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "schedule.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCHEDULE_FIELDS, lineterminator="\n")
        w.writeheader()
        for i, c in enumerate(rep.per_layer, start=1):
            w.writerow({
                "kind": "layer", "layer": i, "sr": c.sr, "st": c.st, "dt": c.dt, "text": c.text,
                "vision": c.vision, "total": c.total,
                "macs": f"{estimate_macs([c.total], enc.embed_dim, enc.mlp_ratio):.0f}",
            })
        w.writerow({
            "kind": "summary",
            "avg_vis_tok": f"{rep.avg_vis_tok:.4f}",
            "cmp_vis_tok": rep.cmp_vis_tok,
            "macs_total": f"{rep.macs_total:.0f}",
            "macs_baseline": f"{rep.macs_baseline:.0f}",
            "reduction_pct": f"{rep.reduction_pct:.4f}",
        })
    summary = {
        "avg_vis_tok": rep.avg_vis_tok,
        "avg_vis_tok_reported": str(report_round(rep.avg_vis_tok)),
        "avg_vis_tok_1dp": str(report_round(rep.avg_vis_tok, 1)),
        "cmp_vis_tok": rep.cmp_vis_tok,
        "macs_total_g": rep.macs_total / 1e9,
        "macs_baseline_g": rep.macs_baseline / 1e9,
        "reduction_pct": rep.reduction_pct,
    }
    (out_dir / "config.json").write_text(cfg.to_json())
    return summary


def stage_masks(result: ForwardResult, layout: SegmentLayout) -> list[tuple[int, np.ndarray]]:
    """One keep-mask image per prune stage (layer with any prune event).

    Layout mirrors the usual visualization: search region on top, static
    template bottom-left, dynamic template bottom-right. Kept = 255.
    """
    alive = {seg: np.full(layout.count(seg), 255, dtype=np.uint8) for seg in (Segment.SR, Segment.ST, Segment.DT)}

    def compose():
        sr = alive[Segment.SR].reshape(layout.sr_grid)
        st = alive[Segment.ST].reshape(layout.tmpl_grid)
        dt = alive[Segment.DT].reshape(layout.tmpl_grid)
        width = max(sr.shape[1], st.shape[1] + dt.shape[1])
        img = np.zeros((sr.shape[0] + st.shape[0], width), dtype=np.uint8)
        img[: sr.shape[0], : sr.shape[1]] = sr
        img[sr.shape[0] :, : st.shape[1]] = st
        img[sr.shape[0] :, st.shape[1] : st.shape[1] + dt.shape[1]] = dt
        return img

    stages = []
    for tr in result.traces:
        if not tr.prune_events:
            continue
        for dec in tr.prune_events:
            alive[dec.segment][dec.dropped_original_indices] = 0
        stages.append((tr.layer_index, compose()))
    if not stages:
        stages.append((0, compose()))
    return stages


def run_forward(cfg: RunConfig, out_dir: Path, masks_only: bool = False) -> ForwardResult:
    cfg.validate()
    batch = build_inputs(cfg)
    result = forward(cfg.encoder, batch, cfg.layout, cfg.schedule, cfg.prune_options())
    out_dir.mkdir(parents=True, exist_ok=True)

    mask_dir = out_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    for stale in mask_dir.glob("*.pgm"):
        stale.unlink()
    # an unpruned run gets a single stage-0 mask of the untouched grids
    first = 0 if cfg.schedule.is_empty else 1
    for n, (layer, img) in enumerate(stage_masks(result, cfg.layout), start=first):
        write_pgm(mask_dir / f"stage_{n:02d}_layer_{layer:02d}.pgm", img)
    if masks_only:
        return result

    (out_dir / "config.json").write_text(cfg.to_json())
    trace = {
        "layers": [t.to_dict() for t in result.traces],
        "final_counts": {s.name: result.batch.count(s) for s in Segment},
    }
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=1) + "\n")
    with open(out_dir / "kept_indices.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "layer", "segment", "n_kept", "kept_original_indices"])
        stage = 0
        for t in result.traces:
            if t.prune_events:
                stage += 1
            for d in t.prune_events:
                w.writerow([stage, t.layer_index, d.segment.name, d.kept_original_indices.size,
                            " ".join(str(int(i)) for i in d.kept_original_indices)])
    write_fixture(out_dir / "restored_sr.utpf", result.restored)
    return result
