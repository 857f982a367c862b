"""Sweep the keep ratio for each stage combination and report token budgets.

Shows how compressed token counts and MACs fall as keep ratios shrink and
as SR, dynamic-template and static-template elimination are switched on in
turn. Optionally runs the small-width encoder to confirm the traced counts
match the closed form.

    python scripts/progressive_pruning.py --preset ostrack256 [--run-encoder]
"""

import dataclasses

import click
import numpy as np

from trackprune.budget import PruningSchedule, budget_report, staged_schedule
from trackprune.encoder import EncoderConfig, forward
from trackprune.layout import SegmentLayout, assemble_batch

FAMILY = {"ostrack256": "rgb", "ostrack384": "rgb", "sutrack224": "unified", "sutrack384": "unified"}
STAGES = [("ce",), ("ce", "dte"), ("ce", "dte", "ste")]


def _traced(preset, sch, seed):
    lay = dataclasses.replace(SegmentLayout.preset(preset), embed_dim=8)
    enc = EncoderConfig.preset(preset, embed_dim=8, num_heads=2, weight_seed=seed)
    rng = np.random.default_rng(seed)
    text = rng.standard_normal((1, 8)) if lay.n_text else None
    b = assemble_batch(lay, *(rng.standard_normal((n, 8)) for n in (lay.n_sr, lay.n_st, lay.n_dt)), text)
    return [t.counts.vision for t in forward(enc, b, lay, sch).traces]


@click.command()
@click.option("--preset", type=click.Choice(sorted(FAMILY)), default="ostrack256", show_default=True)
@click.option("--ratios", default="1.0,0.9,0.8,0.7,0.6,0.5", show_default=True,
              help="Keep ratios applied to every pruned segment.")
@click.option("--run-encoder", is_flag=True, help="Cross-check each row against an encoder trace.")
@click.option("--seed", default=0, show_default=True)
def main(preset, ratios, run_encoder, seed):
    lay, enc = SegmentLayout.preset(preset), EncoderConfig.preset(preset)
    click.echo(f"{preset}: {lay.n_vision} vision tokens, {enc.num_layers} layers")
    click.echo(f"{'stages':<12} {'keep':>5} {'avg':>7} {'cmp':>5} {'GMACs':>7} {'saved%':>7}" + ("  trace" if run_encoder else ""))
    for stages in STAGES:
        base = staged_schedule(FAMILY[preset], stages)
        for r in (float(v) for v in ratios.split(",")):
            sch = PruningSchedule(base.ce_layers, base.dte_layers, base.ste_layers, r, r, r)
            rep = budget_report(lay, enc.num_layers, sch, enc.embed_dim)
            line = (f"{'+'.join(stages):<12} {r:>5.2f} {rep.avg_vis_tok:>7.1f} {rep.cmp_vis_tok:>5} "
                    f"{rep.macs_total / 1e9:>7.2f} {rep.reduction_pct:>7.2f}")
            if run_encoder:
                line += "  " + ("ok" if _traced(preset, sch, seed) == rep.per_layer_tokens else "MISMATCH")
            click.echo(line)


if __name__ == "__main__":
    main()
