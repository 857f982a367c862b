"""Simulate the per-frame inference policy on a synthetic confidence trace.

Reports which frames refresh the dynamic template and shows the position
prior applied to a flat response map.

    python scripts/inference_policy_demo.py --frames 300 --seed 1
"""

import click
import numpy as np

from trackprune.harness.policy import DtUpdateState, dt_update_decision, hanning_penalty


@click.command()
@click.option("--frames", default=300, show_default=True)
@click.option("--interval", default=25, show_default=True)
@click.option("--threshold", default=0.7, show_default=True)
@click.option("--map-size", default=16, show_default=True, help="Side of the response map.")
@click.option("--seed", default=0, show_default=True)
def main(frames, interval, threshold, map_size, seed):
    rng = np.random.default_rng(seed)
    # confidence drifts around 0.7 so both outcomes show up at update frames
    conf = np.clip(0.7 + np.cumsum(rng.normal(0, 0.03, frames)), 0, 1)
    state = DtUpdateState(update_interval=interval, confidence_threshold=threshold)
    updates, skipped = [], []
    for f in range(1, frames + 1):
        if dt_update_decision(state, f, float(conf[f - 1])):
            updates.append(f)
        elif f % interval == 0:
            skipped.append(f)
    click.echo(f"frames seen: {state.frame_counter}")
    click.echo(f"template refreshed at: {updates}")
    click.echo(f"skipped (low confidence): {skipped}")

    resp = hanning_penalty(np.ones((map_size, map_size)) + rng.uniform(0, 0.2, (map_size, map_size)))
    peak = np.unravel_index(np.argmax(resp), resp.shape)
    click.echo(f"peak of penalized {map_size}x{map_size} map at {tuple(int(v) for v in peak)}")


if __name__ == "__main__":
    main()
