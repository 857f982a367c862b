"""Command line entry point: ``trackprune <command>``."""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from ..budget import calibrate_keep_ratios
from ..encoder import EncoderConfig
from ..layout import Segment, SegmentLayout
from .config import PRESETS, RunConfig
from .run import run_forward, run_schedule
from .verify import format_table, run_all


def _resolve(presets, configs, seed, no_prune, out) -> list[tuple[RunConfig, Path]]:
    named = [(p, RunConfig.preset(p)) for p in presets]
    named += [(Path(c).stem, RunConfig.load(c)) for c in configs]
    if not named:
        raise click.UsageError("give --preset or --config")
    jobs = []
    for name, cfg in named:
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed, encoder=dataclasses.replace(cfg.encoder, weight_seed=seed))
        if no_prune:
            cfg = cfg.with_no_prune()
        if len(named) == 1:
            out_dir = Path(out) if out else Path(cfg.io.out_dir)
        else:
            out_dir = Path(out or "out") / name
        jobs.append((cfg.validate(), out_dir))
    return jobs


def _work(command: str, cfg_dict: dict, out_dir: str):
    cfg = RunConfig.from_dict(cfg_dict)
    if command == "schedule":
        return run_schedule(cfg, Path(out_dir))
    res = run_forward(cfg, Path(out_dir), masks_only=command == "prune-viz")
    return {
        "layers": len(res.traces),
        "tokens_processed": [t.tokens_processed for t in res.traces],
        "final_sr": int(res.batch.count(Segment.SR)),
    }


def _dispatch(command, presets, configs, seed, no_prune, out, jobs):
    try:
        work = _resolve(presets, configs, seed, no_prune, out)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    args = [(command, cfg.to_dict(), str(d)) for cfg, d in work]
    try:
        if jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_work, *zip(*args)))
        else:
            results = [_work(*a) for a in args]
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    for (_, _, d), res in zip(args, results):
        click.echo(f"{d}: {json.dumps(res, sort_keys=True)}")


def run_options(f):
    f = click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
                     help="Evaluate several configs in parallel.")(f)
    f = click.option("--no-prune", is_flag=True, help="Drop every prune event from the schedule.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")(f)
    f = click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1),
                     help="Seed for input embeddings and encoder weights.")(f)
    f = click.option("--config", "configs", multiple=True, type=click.Path(exists=True, dir_okay=False),
                     help="JSON run config (repeatable).")(f)
    f = click.option("--preset", "presets", multiple=True, type=click.Choice(PRESETS),
                     help="Named configuration (repeatable).")(f)
    return f


@click.group()
def main():
    """Unified token pruning for one-stream trackers: budgets, traces, checks."""


@main.command()
@run_options
def schedule(presets, configs, seed, out, no_prune, jobs):
    """Write per-layer token counts and MAC estimates (schedule.csv)."""
    _dispatch("schedule", presets, configs, seed, no_prune, out, jobs)


@main.command()
@run_options
def forward(presets, configs, seed, out, no_prune, jobs):
    """Run the encoder; write traces, kept indices, restored SR and masks."""
    _dispatch("forward", presets, configs, seed, no_prune, out, jobs)


@main.command("prune-viz")
@run_options
def prune_viz(presets, configs, seed, out, no_prune, jobs):
    """Run the encoder and write only the per-stage keep masks (PGM)."""
    _dispatch("prune-viz", presets, configs, seed, no_prune, out, jobs)


@main.command()
@click.option("--keep-ratio-sr", type=float, default=None,
              help="Override the SR keep ratio in the table checks (negative control).")
def verify(keep_ratio_sr):
    """Run every acceptance check; exit 1 if any fails."""
    rows = run_all(keep_ratio_sr)
    click.echo(format_table(rows))
    failed = [r for r in rows if not r.passed]
    if failed:
        click.echo(f"{len(failed)} check(s) failed:", err=True)
        for r in failed:
            click.echo(f"  [{r.criterion}] {r.name}: expected {r.expected}, got {r.observed}", err=True)
        sys.exit(1)
    click.echo(f"all {len(rows)} checks passed")


@main.command()
@click.option("--preset", required=True, type=click.Choice(sorted({p.split("-")[0] for p in PRESETS})),
              help="Token geometry and depth.")
@click.option("--segment", type=click.Choice(["sr", "dt", "st"]), default="sr", show_default=True)
@click.option("--layers", required=True, help="Comma-separated prune layers, e.g. 3,6,9.")
@click.option("--target", type=int, required=True, help="Final token count to hit.")
def calibrate(preset, segment, layers, target):
    """Grid-search keep ratio and rounding that reach a final token count."""
    try:
        event_layers = [int(v) for v in layers.split(",") if v.strip()]
        lay = SegmentLayout.preset(preset)
        hits = calibrate_keep_ratios(lay, EncoderConfig.preset(preset).num_layers, event_layers, target,
                                     Segment.parse(segment))
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    if not hits:
        click.echo("no (ratio, rounding) on the grid reaches the target")
    for ratio, mode in hits:
        click.echo(f"{ratio:.2f} {mode}")


if __name__ == "__main__":
    main()
