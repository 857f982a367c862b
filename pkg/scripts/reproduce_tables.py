"""Print the token-accounting and MAC tables for both model families.

    python scripts/reproduce_tables.py [--csv out.csv]
"""

import csv

import click

from trackprune.budget import PruningSchedule, budget_report, report_round, staged_schedule
from trackprune.encoder import EncoderConfig
from trackprune.layout import SegmentLayout

STAGES = [(), ("ce",), ("ce", "dte"), ("ce", "dte", "ste")]
LOCATIONS = {
    "rgb": [((3, 6, 9), (3, 6, 9)), ((3, 6, 9), (4, 7, 10)), ((3, 6, 9), (2, 5, 8)),
            ((2, 5, 8), (3, 6, 9)), ((4, 7, 10), (3, 6, 9))],
    "unified": [((6, 12, 18), (6, 12, 18)), ((6, 12, 18), (9, 15, 21)), ((6, 12, 18), (3, 9, 15)),
                ((3, 9, 15), (6, 12, 18)), ((9, 15, 21), (6, 12, 18))],
}
MODELS = [("ostrack256", "rgb"), ("ostrack384", "rgb"), ("sutrack224", "unified"), ("sutrack384", "unified")]


def rows():
    for preset, family in MODELS:
        lay, enc = SegmentLayout.preset(preset), EncoderConfig.preset(preset)
        for stages in STAGES:
            yield preset, "+".join(stages) or "none", budget_report(
                lay, enc.num_layers, staged_schedule(family, stages), enc.embed_dim)
        keep = staged_schedule(family, ())
        for ce, dte in LOCATIONS[family]:
            sch = PruningSchedule(ce, dte, (), keep.keep_ratio_sr, keep.keep_ratio_dt, keep.keep_ratio_st)
            yield preset, f"ce@{','.join(map(str, ce))} dte@{','.join(map(str, dte))}", budget_report(
                lay, enc.num_layers, sch, enc.embed_dim)


@click.command()
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Also write the rows as CSV.")
def main(csv_path):
    fields = ["preset", "schedule", "avg_vis_tok", "avg_1dp", "cmp_vis_tok", "gmacs", "gmacs_base", "reduction_pct"]
    table = []
    for preset, name, rep in rows():
        table.append([preset, name, str(report_round(rep.avg_vis_tok)), str(report_round(rep.avg_vis_tok, 1)),
                      rep.cmp_vis_tok, f"{rep.macs_total / 1e9:.2f}", f"{rep.macs_baseline / 1e9:.2f}",
                      f"{rep.reduction_pct:.2f}"])
    widths = [max(len(str(r[i])) for r in table + [fields]) for i in range(len(fields))]
    for r in [fields] + table:
        click.echo("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            w.writerows(table)


if __name__ == "__main__":
    main()
