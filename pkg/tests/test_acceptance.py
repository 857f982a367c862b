"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (visible with or without ``-s``)
and then asserts. Reported figures are written out as literals here rather
than imported, so the checks in ``trackprune.harness.verify`` are compared
against an independent copy.
"""

import math
import time
from decimal import Decimal

import numpy as np
import pytest

from trackprune.budget import (
    PruningSchedule,
    avg_and_cmp,
    budget_report,
    calibrate_keep_ratios,
    estimate_macs,
    report_round,
    staged_schedule,
    token_schedule,
)
from trackprune.harness import verify
from trackprune.harness.policy import DtUpdateState, dt_update_decision
from trackprune.layout import Segment, SegmentLayout


@pytest.fixture
def report(capsys):
    def emit(criterion, title, checks, extra_ok=True, detail=""):
        failed = [c for c in checks if not c.passed]
        ok = extra_ok and not failed
        why = "; ".join(f"{c.name}: expected {c.expected}, got {c.observed}" for c in failed)
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {title}"
                  + (f" ({detail})" if detail else "") + (f" -- {why}" if why else ""))
        assert ok, why or detail
    return emit


def _avg(preset, layers, sch, decimals=0):
    avg, cmp_ = avg_and_cmp([c.vision for c in token_schedule(SegmentLayout.preset(preset), layers, sch)])
    return report_round(avg, decimals), cmp_


def test_criterion_01_rgb_token_tables(report):
    t0 = time.perf_counter()
    got = [_avg("ostrack256", 12, staged_schedule("rgb", s)) for s in (["ce"], ["ce", "dte"], ["ce", "dte", "ste"])]
    ok = got == [(Decimal(291), 217), (Decimal(271), 176), (Decimal(252), 135)]
    ok &= _avg("ostrack256", 12, staged_schedule("rgb", ["ce", "dte"]), 1)[0] == Decimal("271.2")
    base = staged_schedule("rgb", ())
    located = [((3, 6, 9), (3, 6, 9)), ((3, 6, 9), (4, 7, 10)), ((3, 6, 9), (2, 5, 8)),
               ((2, 5, 8), (3, 6, 9)), ((4, 7, 10), (3, 6, 9))]
    avgs = [str(_avg("ostrack256", 12, PruningSchedule(ce, dte, (), **_ratios(base)), 1)[0]) for ce, dte in located]
    ok &= avgs == ["267.8", "271.2", "264.3", "253.8", "281.7"]
    checks = verify.check_rgb_tables()
    elapsed = time.perf_counter() - t0
    report(1, "RGB token tables", checks, ok and elapsed < 1.0, f"{_fmt(got)}, located {avgs}, {elapsed:.3f}s")


def _fmt(pairs):
    return ", ".join(f"({a}, {c})" for a, c in pairs)


def _ratios(sch):
    return dict(keep_ratio_sr=sch.keep_ratio_sr, keep_ratio_dt=sch.keep_ratio_dt, keep_ratio_st=sch.keep_ratio_st)


def test_criterion_02_unified_token_tables(report):
    t0 = time.perf_counter()
    got = [_avg("sutrack224", 24, staged_schedule("unified", s)) for s in (["ce"], ["ce", "dte"], ["ce", "dte", "ste"])]
    ok = got == [(Decimal(223), 166), (Decimal(206), 128), (Decimal(188), 90)]
    base = staged_schedule("unified", ())
    located = [((6, 12, 18), (6, 12, 18)), ((6, 12, 18), (9, 15, 21)), ((6, 12, 18), (3, 9, 15)),
               ((3, 9, 15), (6, 12, 18)), ((9, 15, 21), (6, 12, 18))]
    rows = [_avg("sutrack224", 24, PruningSchedule(ce, dte, (), **_ratios(base))) for ce, dte in located]
    ok &= [(str(a), c) for a, c in rows] == [("201", 128), ("206", 128), ("196", 128), ("185", 128), ("217", 128)]
    checks = verify.check_unified_tables()
    elapsed = time.perf_counter() - t0
    report(2, "unified token tables", checks, ok and elapsed < 1.0, f"{_fmt(got)}, located {[str(a) for a, _ in rows]}, {elapsed:.3f}s")


def test_criterion_03_calibration(report):
    t0 = time.perf_counter()
    sr = calibrate_keep_ratios(SegmentLayout.preset("ostrack256"), 12, [3, 6, 9], 89, Segment.SR)
    dt = calibrate_keep_ratios(SegmentLayout.preset("sutrack224"), 24, [9, 15, 21], 11, Segment.DT)
    ok = sr == [(0.7, "ceil")] and (0.6, "ceil") in dt
    checks = verify.check_calibration()
    elapsed = time.perf_counter() - t0
    report(3, "keep-ratio calibration", checks, ok and elapsed < 1.0, f"SR {sr}, DT {dt}, {elapsed:.3f}s")


def test_criterion_04_mac_trend(report):
    t0 = time.perf_counter()
    base = estimate_macs([384] * 12, 768)
    ok = math.isclose(base, 35.33e9, rel_tol=1e-3)
    rep = budget_report(SegmentLayout.preset("ostrack256"), 12, staged_schedule("rgb"))
    reported = 100 * (1 - 23.8 / 34.5)
    ok &= abs(rep.reduction_pct - reported) <= 5.0
    checks = verify.check_macs()
    elapsed = time.perf_counter() - t0
    report(4, "MAC reduction trend", checks, ok and elapsed < 1.0,
           f"baseline {base / 1e9:.3f}G, reduction {rep.reduction_pct:.2f}% vs {reported:.1f}%, {elapsed:.3f}s")


def test_criterion_05_mask_equivalence(report):
    checks = verify.check_mask_equivalence(n_instances=100)
    report(5, "physical pruning == -inf masking", checks, detail=checks[-1].observed)


def test_criterion_06_trace_budget(report):
    checks = verify.check_trace_budget(n_schedules=100)
    report(6, "forward traces == closed-form counts", checks, detail=", ".join(c.observed for c in checks))


def test_criterion_07_ctem_properties(report):
    checks = verify.check_ctem_properties(n=1000)
    report(7, "CTEM unit properties", checks, detail=f"{len(checks)} property groups")


def test_criterion_08_text_guidance(report):
    checks = verify.check_text_guidance(n=50)
    report(8, "DT-only text guidance leaves SR/ST alone", checks, detail=", ".join(c.observed for c in checks))


def test_criterion_09_determinism(report):
    checks = verify.check_determinism()
    report(9, "byte-identical forward outputs", checks, detail=checks[0].observed)


def test_criterion_10_dt_policy(report):
    bad = 0
    for conf in (0.69, 0.70, 0.71):
        state = DtUpdateState()
        fired = [f for f in range(1, 1001) if dt_update_decision(state, f, conf)]
        bad += fired != (list(range(25, 1001, 25)) if conf > 0.7 else [])
    checks = verify.check_dt_policy()
    report(10, "dynamic-template update rule", checks, bad == 0, f"{bad} sweep mismatches")


def test_verify_fails_on_perturbed_ratio():
    # negative control: a different SR keep ratio must break the token tables
    rows = verify.check_rgb_tables(0.8) + verify.check_unified_tables(0.8) + verify.check_macs(0.8)
    assert sum(not r.passed for r in rows) >= 10
    assert np.all([r.passed for r in verify.check_calibration()])
