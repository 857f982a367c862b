"""Acceptance checks run by ``trackprune verify``.

Each criterion returns one :class:`Check` row per expected value so a
failing run shows exactly which number drifted.
"""

from __future__ import annotations

import dataclasses
import filecmp
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..budget import (
    PruningSchedule,
    RGB_CE,
    UNIFIED_DTE,
    avg_and_cmp,
    budget_report,
    calibrate_keep_ratios,
    estimate_macs,
    report_round,
    staged_schedule,
    token_schedule,
)
from ..ctem import ImportanceScores, PruneOptions, eliminate, fuse_text, prune, score_segment
from ..encoder import EncoderConfig, encoder_layer, forward, init_weights
from ..layout import (
    BBox,
    ForegroundBonus,
    Segment,
    SegmentLayout,
    TokenBatch,
    assemble_batch,
    build_mask,
    center_index,
    patch_bonus,
)
from ..numerics import softmax_rows, topk_indices
from ..oracles import masked_forward
from .config import RunConfig
from .policy import DtUpdateState, dt_update_decision
from .run import run_forward

# (stages switched on, reported avg, reported cmp)
RGB_STAGE_ROWS = [(("ce",), "291", 217), (("ce", "dte"), "271", 176), (("ce", "dte", "ste"), "252", 135)]
UNIFIED_STAGE_ROWS = [(("ce",), "223", 166), (("ce", "dte"), "206", 128), (("ce", "dte", "ste"), "188", 90)]
# location ablations: (ce layers, dte layers, reported avg)
RGB_LOCATION_ROWS = [
    ((3, 6, 9), (3, 6, 9), "267.8"),
    ((3, 6, 9), (4, 7, 10), "271.2"),
    ((3, 6, 9), (2, 5, 8), "264.3"),
    ((2, 5, 8), (3, 6, 9), "253.8"),
    ((4, 7, 10), (3, 6, 9), "281.7"),
]
UNIFIED_LOCATION_ROWS = [
    ((6, 12, 18), (6, 12, 18), "201"),
    ((6, 12, 18), (9, 15, 21), "206"),
    ((6, 12, 18), (3, 9, 15), "196"),
    ((3, 9, 15), (6, 12, 18), "185"),
    ((9, 15, 21), (6, 12, 18), "217"),
]
REPORTED_MAC_REDUCTION_PCT = 100.0 * (1.0 - 23.8 / 34.5)


@dataclass
class Check:
    criterion: int
    name: str
    expected: str
    observed: str
    passed: bool


def _with_sr(schedule: PruningSchedule, keep_ratio_sr: float | None) -> PruningSchedule:
    if keep_ratio_sr is None:
        return schedule
    return dataclasses.replace(schedule, keep_ratio_sr=keep_ratio_sr)


def _table_rows(crit, family, preset, num_layers, staged, located, located_decimals, keep_ratio_sr):
    lay = SegmentLayout.preset(preset)
    rows = []
    for stages, avg_exp, cmp_exp in staged:
        sch = _with_sr(staged_schedule(family, stages), keep_ratio_sr)
        avg, cmp_ = avg_and_cmp([c.vision for c in token_schedule(lay, num_layers, sch)])
        obs = (str(report_round(avg)), cmp_)
        rows.append(Check(crit, f"{preset} +{'+'.join(stages)}", f"({avg_exp}, {cmp_exp})",
                          f"({obs[0]}, {obs[1]})", obs == (avg_exp, cmp_exp)))
    keep = staged_schedule(family, ())
    for ce, dte, avg_exp in located:
        sch = _with_sr(dataclasses.replace(keep, ce_layers=ce, dte_layers=dte), keep_ratio_sr)
        avg, _ = avg_and_cmp([c.vision for c in token_schedule(lay, num_layers, sch)])
        obs = str(report_round(avg, located_decimals))
        rows.append(Check(crit, f"{preset} CE{list(ce)} DTE{list(dte)} avg", avg_exp, obs, obs == avg_exp))
    return rows


def _timed(crit, rows, t0, limit=1.0):
    dt = time.perf_counter() - t0
    rows.append(Check(crit, "runtime", f"< {limit:.1f} s", f"{dt:.3f} s", dt < limit))
    return rows


def check_rgb_tables(keep_ratio_sr=None):
    t0 = time.perf_counter()
    rows = _table_rows(1, "rgb", "ostrack256", 12, RGB_STAGE_ROWS, RGB_LOCATION_ROWS, 1, keep_ratio_sr)
    sch = _with_sr(staged_schedule("rgb", ("ce", "dte")), keep_ratio_sr)
    avg, _ = avg_and_cmp([c.vision for c in token_schedule(SegmentLayout.preset("ostrack256"), 12, sch)])
    rows.append(Check(1, "ostrack256 +ce+dte avg (1 dp)", "271.2", str(report_round(avg, 1)),
                      str(report_round(avg, 1)) == "271.2"))
    return _timed(1, rows, t0)


def check_unified_tables(keep_ratio_sr=None):
    t0 = time.perf_counter()
    rows = _table_rows(2, "unified", "sutrack224", 24, UNIFIED_STAGE_ROWS, UNIFIED_LOCATION_ROWS, 0, keep_ratio_sr)
    lay = SegmentLayout.preset("sutrack224")
    for ce, dte, _ in UNIFIED_LOCATION_ROWS:
        sch = _with_sr(dataclasses.replace(staged_schedule("unified", ()), ce_layers=ce, dte_layers=dte), keep_ratio_sr)
        _, cmp_ = avg_and_cmp([c.vision for c in token_schedule(lay, 24, sch)])
        rows.append(Check(2, f"sutrack224 CE{list(ce)} DTE{list(dte)} cmp", "128", str(cmp_), cmp_ == 128))
    return _timed(2, rows, t0)


def check_calibration():
    t0 = time.perf_counter()
    sr = calibrate_keep_ratios(SegmentLayout.preset("ostrack256"), 12, RGB_CE, 89, Segment.SR)
    dt = calibrate_keep_ratios(SegmentLayout.preset("sutrack224"), 24, UNIFIED_DTE, 11, Segment.DT)
    rows = [
        Check(3, "ostrack256 SR -> 89", "[(0.7, 'ceil')]", str(sr), sr == [(0.7, "ceil")]),
        Check(3, "sutrack224 DT -> 11", "contains (0.6, 'ceil')", str(dt), (0.6, "ceil") in dt),
    ]
    return _timed(3, rows, t0)


def check_macs(keep_ratio_sr=None):
    t0 = time.perf_counter()
    base = estimate_macs([384] * 12, 768)
    rows = [Check(4, "baseline MACs (N=384, d=768, 12 layers)", "35.33e9 +/- 0.1%",
                  f"{base / 1e9:.4f}e9", abs(base - 35.33e9) <= 0.001 * 35.33e9)]
    lay = SegmentLayout.preset("ostrack256")
    rep = budget_report(lay, 12, _with_sr(staged_schedule("rgb"), keep_ratio_sr), 768)
    rows.append(Check(4, "ostrack256-utp MAC reduction", f"{REPORTED_MAC_REDUCTION_PCT:.1f}% +/- 5 pp",
                      f"{rep.reduction_pct:.2f}% ({rep.macs_total / 1e9:.2f}G of {rep.macs_baseline / 1e9:.2f}G)",
                      abs(rep.reduction_pct - REPORTED_MAC_REDUCTION_PCT) <= 5.0))
    return _timed(4, rows, t0)


def random_instance(rng: np.random.Generator, text: bool | None = None):
    """A small random (layout, config, batch, schedule, options) instance.

    Total token count stays within 6..24.
    """
    while True:
        sr_grid = (int(rng.integers(1, 4)), int(rng.integers(2, 5)))
        tmpl_grid = (int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        has_text = bool(rng.integers(0, 2)) if text is None else text
        n = sr_grid[0] * sr_grid[1] + 2 * tmpl_grid[0] * tmpl_grid[1] + int(has_text)
        if 6 <= n <= 24:
            break
    heads = int(rng.integers(1, 5))
    dim = heads * int(rng.integers(2, 5))
    layers = int(rng.integers(2, 5))
    lay = SegmentLayout(sr_grid, tmpl_grid, 4, dim, int(has_text))
    cfg = EncoderConfig(layers, dim, heads, mlp_ratio=2.0, weight_seed=int(rng.integers(2**31)))
    batch = assemble_batch(
        lay,
        rng.standard_normal((lay.n_sr, dim)),
        rng.standard_normal((lay.n_st, dim)),
        rng.standard_normal((lay.n_dt, dim)),
        rng.standard_normal((1, dim)) if has_text else None,
    )
    sch = random_schedule(rng, layers)
    bonus = None
    if tmpl_grid[0] == tmpl_grid[1]:
        side = lay.template_side
        w, h = int(rng.integers(1, side + 1)), int(rng.integers(1, side + 1))
        box = BBox(int(rng.integers(0, side - w + 1)), int(rng.integers(0, side - h + 1)), w, h)
        bonus = ForegroundBonus.from_bbox(box, lay, ["full", "soft", "all"][int(rng.integers(3))], float(rng.uniform(0, 2)))
    targets = frozenset(s for s in (Segment.SR, Segment.DT, Segment.ST) if has_text and rng.integers(2))
    return lay, cfg, batch, sch, PruneOptions(bonus, targets)


def random_schedule(rng: np.random.Generator, num_layers: int) -> PruningSchedule:
    def layers():
        return tuple(sorted(int(x) for x in rng.choice(np.arange(1, num_layers + 1),
                                                           size=int(rng.integers(0, num_layers + 1)), replace=False)))

    ratios = rng.choice([0.3, 0.5, 0.55, 0.6, 0.7, 0.75, 0.9, 1.0], size=3)
    return PruningSchedule(layers(), layers(), layers(), *map(float, ratios))


def check_mask_equivalence(n_instances=100, seed=0):
    rng = np.random.default_rng(seed)
    worst, kept_mismatch = 0.0, 0
    for _ in range(n_instances):
        lay, cfg, batch, sch, opt = random_instance(rng)
        w = init_weights(cfg)
        res = forward(cfg, batch, lay, sch, opt, w)
        x, alive, log = masked_forward(cfg, batch, lay, sch, opt, w)
        phys = [(d.layer, d.segment, [int(i) for i in d.kept_original_indices]) for t in res.traces for d in t.prune_events]
        if phys != log or alive.sum() != len(res.batch):
            kept_mismatch += 1
            continue
        worst = max(worst, float(np.abs(x[alive] - res.batch.features).max()))
    return [
        Check(5, f"kept sets agree ({n_instances} instances)", "0 mismatches", str(kept_mismatch), kept_mismatch == 0),
        Check(5, "surviving features, physical vs masked", "<= 1e-9", f"{worst:.3e}", worst <= 1e-9),
    ]


def check_trace_budget(n_schedules=100, seed=1):
    rng = np.random.default_rng(seed)
    rows = []
    for preset in ("ostrack256", "sutrack224"):
        lay0 = SegmentLayout.preset(preset)
        lay = dataclasses.replace(lay0, embed_dim=4)
        num_layers = EncoderConfig.preset(preset).num_layers
        cfg = EncoderConfig(num_layers, 4, 1, mlp_ratio=1.0, weight_seed=7)
        w = init_weights(cfg)
        batch = assemble_batch(
            lay, rng.standard_normal((lay.n_sr, 4)), rng.standard_normal((lay.n_st, 4)),
            rng.standard_normal((lay.n_dt, 4)), rng.standard_normal((1, 4)) if lay.n_text else None,
        )
        bad = 0
        for _ in range(n_schedules):
            sch = random_schedule(rng, num_layers)
            res = forward(cfg, batch, lay, sch, PruneOptions(), w)
            expect = token_schedule(lay, num_layers, sch)
            if [t.counts for t in res.traces] != expect or [t.tokens_processed for t in res.traces] != [c.total for c in expect]:
                bad += 1
        rows.append(Check(6, f"{preset} geometry, {n_schedules} random schedules", "0 mismatches", str(bad), bad == 0))
    return rows


def check_ctem_properties(n=1000, seed=2):
    rng = np.random.default_rng(seed)
    rows = []
    worst = max(abs(softmax_rows(rng.normal(0, 10, (4, int(rng.integers(1, 40))))).sum(axis=1) - 1).max()
                for _ in range(n))
    rows.append(Check(7, f"softmax row sums ({n} matrices)", "|sum-1| <= 1e-12", f"{worst:.2e}", worst <= 1e-12))

    tie_bad = mono_bad = 0
    for _ in range(n):
        m = int(rng.integers(1, 30))
        s = rng.integers(0, 5, size=m).astype(float)  # many ties
        k = int(rng.integers(0, m + 1))
        got = topk_indices(s, k)
        want = sorted(sorted(range(m), key=lambda i: (-s[i], i))[:k])
        tie_bad += list(got) != want
        f = np.exp(s) * 3.0 + 1.0
        mono_bad += not np.array_equal(topk_indices(f, k), got)
    rows.append(Check(7, f"top-k tie-break ({n} vectors)", "0 failures", str(tie_bad), tie_bad == 0))
    rows.append(Check(7, f"top-k monotone invariance ({n} vectors)", "0 failures", str(mono_bad), mono_bad == 0))

    center_bad = 0
    for _ in range(n):
        g = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        nt = g[0] * g[1]
        c = center_index(g)
        batch = TokenBatch(np.zeros((nt, 1)), np.full(nt, int(Segment.ST)), np.arange(nt))
        sc = ImportanceScores(Segment.ST, rng.standard_normal(nt), 1, np.arange(nt))
        _, dec = prune(batch, sc, float(rng.uniform(0.01, 1.0)), center=c)
        center_bad += c not in dec.kept_original_indices
    rows.append(Check(7, f"ST center retained ({n} prunes)", "100%", f"{100 * (n - center_bad) / n:.1f}%", center_bad == 0))

    order_bad = mass_bad = 0
    for _ in range(n):
        p = int(rng.choice([4, 8, 16]))
        side = p * int(rng.integers(1, 9))
        w, h = int(rng.integers(1, side + 1)), int(rng.integers(1, side + 1))
        box = BBox(int(rng.integers(0, side - w + 1)), int(rng.integers(0, side - h + 1)), w, h)
        mask = build_mask(box, side)
        full, soft, all_ = (patch_bonus(mask, p, m) for m in ("full", "soft", "all"))
        order_bad += not (np.all(full <= soft) and np.all(soft <= all_))
        mass_bad += float((soft * p * p).sum()) != float(w * h)
    rows.append(Check(7, f"bonus full <= soft <= all ({n} boxes)", "0 failures", str(order_bad), order_bad == 0))
    rows.append(Check(7, "soft-bonus pixel mass conservation", "exact", f"{mass_bad} failures", mass_bad == 0))
    return rows


def check_text_guidance(n=50, seed=3):
    rng = np.random.default_rng(seed)
    ident_bad = step_bad = fwd_bad = 0
    for _ in range(n):
        lay, cfg, batch, _, _ = random_instance(rng, text=True)
        w = init_weights(cfg)
        out, attn = encoder_layer(batch.features, w[0], cfg.num_heads)
        b = batch.with_features(out)
        base = score_segment(attn, b, lay, Segment.SR)
        ident_bad += not np.array_equal(fuse_text(base, np.zeros_like(base.scores)).scores, base.scores)
        ratios = rng.choice([0.5, 0.6, 0.7], size=3)
        for seg, r in zip((Segment.SR, Segment.ST), ratios):
            _, off = eliminate(attn, b, lay, seg, float(r), PruneOptions())
            _, on = eliminate(attn, b, lay, seg, float(r), PruneOptions(text_targets={"DT"}))
            step_bad += not np.array_equal(off.kept_original_indices, on.kept_original_indices)
        # forward-level: all events at one layer share that layer's attention
        layer = int(rng.integers(1, cfg.num_layers + 1))
        sch = PruningSchedule((layer,), (layer,), (layer,), *map(float, ratios))
        r_off = forward(cfg, batch, lay, sch, PruneOptions(), w)
        r_on = forward(cfg, batch, lay, sch, PruneOptions(text_targets={"DT"}), w)
        for t_off, t_on in zip(r_off.traces, r_on.traces):
            for d_off, d_on in zip(t_off.prune_events, t_on.prune_events):
                if d_off.segment != Segment.DT and not np.array_equal(d_off.kept_original_indices, d_on.kept_original_indices):
                    fwd_bad += 1
    return [
        Check(8, f"zero text row is identity ({n} instances)", "0 failures", str(ident_bad), ident_bad == 0),
        Check(8, "DT-only text: SR/ST decisions per CTEM step", "bitwise unchanged", f"{step_bad} diffs", step_bad == 0),
        Check(8, "DT-only text: SR/ST decisions in forward", "bitwise unchanged", f"{fwd_bad} diffs", fwd_bad == 0),
    ]


def _small_forward_config() -> RunConfig:
    cfg = RunConfig.preset("ostrack256-utp")
    return dataclasses.replace(
        cfg,
        layout=dataclasses.replace(cfg.layout, embed_dim=32),
        encoder=dataclasses.replace(cfg.encoder, embed_dim=32, num_heads=4),
        seed=11,
    )


def check_determinism():
    cfg = _small_forward_config()
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a"), Path(tmp, "b")
        run_forward(cfg, a)
        run_forward(cfg, b)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        same = [filecmp.cmp(a / f, b / f, shallow=False) for f in files]
        kinds = sorted({f.suffix for f in files})
    return [Check(9, "two seeded forward runs", "byte-identical", f"{sum(same)}/{len(same)} files equal ({', '.join(kinds)})",
                  all(same) and {".json", ".csv", ".utpf", ".pgm"} <= set(kinds))]


def check_dt_policy():
    bad = 0
    for conf in (0.69, 0.70, 0.71):
        state = DtUpdateState()
        for frame in range(1, 1001):
            bad += dt_update_decision(state, frame, conf) != (frame % 25 == 0 and conf > 0.7)
        bad += state.frame_counter != 1000
    return [Check(10, "frames 1..1000 x conf {0.69, 0.70, 0.71}", "0 mismatches", str(bad), bad == 0)]


def run_all(keep_ratio_sr: float | None = None) -> list[Check]:
    rows = []
    rows += check_rgb_tables(keep_ratio_sr)
    rows += check_unified_tables(keep_ratio_sr)
    rows += check_calibration()
    rows += check_macs(keep_ratio_sr)
    rows += check_mask_equivalence()
    rows += check_trace_budget()
    rows += check_ctem_properties()
    rows += check_text_guidance()
    rows += check_determinism()
    rows += check_dt_policy()
    return rows


def format_table(rows: list[Check]) -> str:
    w_name = max(len(r.name) for r in rows)
    w_exp = max(len(r.expected) for r in rows)
    lines = [f"{'#':>2}  {'check':<{w_name}}  {'expected':<{w_exp}}  observed"]
    for r in rows:
        flag = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.criterion:>2}  {r.name:<{w_name}}  {r.expected:<{w_exp}}  {r.observed}  {flag}")
    return "\n".join(lines)
