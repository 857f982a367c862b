import csv
import dataclasses
import json

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given
from hypothesis import strategies as st

from trackprune.harness.cli import main
from trackprune.harness.config import PRESETS, BonusConfig, IOConfig, RunConfig, build_inputs
from trackprune.harness.fixtures import read_fixture, read_pgm, write_fixture, write_pgm
from trackprune.harness.policy import DtUpdateState, dt_update_decision, hanning_penalty
from trackprune.layout import Segment


def small_config(name="ostrack256-utp", **io):
    cfg = RunConfig.preset(name)
    return dataclasses.replace(
        cfg,
        layout=dataclasses.replace(cfg.layout, embed_dim=16),
        encoder=dataclasses.replace(cfg.encoder, embed_dim=16, num_heads=2),
        seed=5,
        io=IOConfig(**io),
    )


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(small_config().to_json())
    return p


class TestHanning:
    def test_ones_3x3(self):
        out = hanning_penalty(np.ones((3, 3)))
        assert out[1, 1] == 1.0
        np.testing.assert_allclose(out[[0, 0, 2, 2, 0, 1, 2, 1], [0, 2, 0, 2, 1, 0, 1, 2]], 0.0, atol=1e-15)

    def test_single_cell(self):
        assert hanning_penalty([[0.37]]).tolist() == [[0.37]]

    def test_peak_at_center(self):
        assert np.unravel_index(np.argmax(hanning_penalty(np.ones((5, 5)))), (5, 5)) == (2, 2)

    def test_not_2d(self):
        with pytest.raises(ValueError):
            hanning_penalty(np.ones(3))


class TestDtPolicy:
    @pytest.mark.parametrize("frame,conf,want", [(25, 0.71, True), (25, 0.70, False), (25, 0.69, False), (24, 0.99, False), (50, 0.9, True)])
    def test_decision(self, frame, conf, want):
        assert dt_update_decision(DtUpdateState(), frame, conf) is want

    def test_counter_advances(self):
        s = DtUpdateState()
        for f in range(1, 8):
            dt_update_decision(s, f, 0.5)
        assert s.frame_counter == 7

    def test_invalid(self):
        with pytest.raises(ValueError):
            DtUpdateState(update_interval=0)
        with pytest.raises(ValueError):
            dt_update_decision(DtUpdateState(), 0, 0.9)


class TestFixtures:
    def test_round_trip(self, tmp_path):
        m = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
        write_fixture(tmp_path / "a.utpf", m)
        got = read_fixture(tmp_path / "a.utpf")
        assert got.dtype == np.float64 and np.array_equal(got, m.astype(np.float64))

    def test_header(self, tmp_path):
        write_fixture(tmp_path / "a.utpf", np.zeros((2, 3)))
        raw = (tmp_path / "a.utpf").read_bytes()
        assert raw[:4] == b"UTPF" and raw[4:12] == bytes([2, 0, 0, 0, 3, 0, 0, 0]) and len(raw) == 12 + 24

    def test_bad_magic(self, tmp_path):
        (tmp_path / "b.utpf").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(ValueError, match="magic"):
            read_fixture(tmp_path / "b.utpf")

    def test_truncated(self, tmp_path):
        write_fixture(tmp_path / "c.utpf", np.ones((2, 2)))
        (tmp_path / "c.utpf").write_bytes((tmp_path / "c.utpf").read_bytes()[:-1])
        with pytest.raises(ValueError):
            read_fixture(tmp_path / "c.utpf")

    def test_pgm(self, tmp_path):
        img = np.array([[0, 255, 10], [1, 2, 3]], dtype=np.uint8)
        write_pgm(tmp_path / "m.pgm", img)
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
        assert np.array_equal(read_pgm(tmp_path / "m.pgm"), img)


class TestConfig:
    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_round_trip(self, name):
        cfg = RunConfig.preset(name).validate()
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_text_presets(self):
        assert RunConfig.preset("sutrack224-utp").text_guidance == ("DT",)
        assert RunConfig.preset("ostrack256-utp").text_guidance == ()

    @given(st.integers(0, 2**32), st.sampled_from(["off", "full", "soft", "all"]), st.floats(0, 4),
           st.lists(st.sampled_from(["sr", "st", "dt"]), max_size=3))
    def test_round_trip_hypothesis(self, seed, mode, beta, targets):
        cfg = dataclasses.replace(RunConfig.preset("sutrack224-ce"), seed=seed,
                                  bonus=BonusConfig(mode, beta, [8, 8, 32, 40]), text_guidance=tuple(targets))
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_rejects(self):
        d = RunConfig.preset("ostrack256").to_dict()
        with pytest.raises(ValueError):
            RunConfig.from_dict({**d, "extra": 1})
        d["encoder"]["embed_dim"] = 512
        d["encoder"]["num_heads"] = 8
        with pytest.raises(ValueError):
            RunConfig.from_dict(d).validate()
        with pytest.raises(ValueError):
            dataclasses.replace(RunConfig.preset("ostrack256"), text_guidance=("DT",)).validate()

    def test_inputs_seeded(self):
        a, b = build_inputs(small_config()), build_inputs(small_config())
        assert a.features.tobytes() == b.features.tobytes() and len(a) == 384

    def test_inputs_from_fixture(self, tmp_path):
        sr = np.random.default_rng(0).standard_normal((256, 16)).astype(np.float32)
        write_fixture(tmp_path / "sr.utpf", sr)
        b = build_inputs(small_config(sr_fixture=str(tmp_path / "sr.utpf")))
        assert np.array_equal(b.segment_features(Segment.SR), sr.astype(np.float64))

    def test_fixture_shape_checked(self, tmp_path):
        write_fixture(tmp_path / "sr.utpf", np.zeros((10, 16)))
        with pytest.raises(ValueError, match="shape"):
            build_inputs(small_config(sr_fixture=str(tmp_path / "sr.utpf")))

    def test_dummy_text(self):
        b = build_inputs(small_config("sutrack224-utp"))
        assert b.count(Segment.TEXT) == 1
        with pytest.raises(ValueError):
            build_inputs(small_config("sutrack224-utp", dummy_text=False))


class TestCli:
    def test_schedule(self, tmp_path):
        r = CliRunner().invoke(main, ["schedule", "--preset", "ostrack256-utp", "--out", str(tmp_path)])
        assert r.exit_code == 0, r.output
        rows = list(csv.DictReader(open(tmp_path / "schedule.csv")))
        assert [int(row["vision"]) for row in rows[:-1]] == [384, 384, 384, 308, 270, 270, 216, 190, 190, 153, 135, 135]
        assert rows[-1]["kind"] == "summary" and rows[-1]["cmp_vis_tok"] == "135"
        assert json.loads(r.output.split(": ", 1)[1])["avg_vis_tok_reported"] == "252"

    def test_schedule_no_prune(self, tmp_path):
        r = CliRunner().invoke(main, ["schedule", "--preset", "ostrack256-utp", "--no-prune", "--out", str(tmp_path)])
        assert r.exit_code == 0
        assert json.loads(r.output.split(": ", 1)[1])["cmp_vis_tok"] == 384

    def test_forward_byte_identical(self, tmp_path, cfg_file):
        run = CliRunner()
        for d in ("a", "b"):
            assert run.invoke(main, ["forward", "--config", str(cfg_file), "--out", str(tmp_path / d)]).exit_code == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert {f.name for f in files} >= {"trace.json", "kept_indices.csv", "restored_sr.utpf", "config.json"}
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert read_fixture(tmp_path / "a" / "restored_sr.utpf").shape == (256, 16)

    def test_prune_viz_masks(self, tmp_path, cfg_file):
        r = CliRunner().invoke(main, ["prune-viz", "--config", str(cfg_file), "--out", str(tmp_path)])
        assert r.exit_code == 0
        masks = sorted((tmp_path / "masks").glob("*.pgm"))
        assert len(masks) == 6
        last = read_pgm(masks[-1])
        assert last.shape == (16 + 8, 16) and set(np.unique(last)) <= {0, 255}
        # final SR area keeps 89 of 256 patches
        assert np.count_nonzero(last[:16] == 255) == 89

    def test_no_prune_white(self, tmp_path, cfg_file):
        r = CliRunner().invoke(main, ["prune-viz", "--config", str(cfg_file), "--no-prune", "--out", str(tmp_path)])
        assert r.exit_code == 0
        masks = list((tmp_path / "masks").glob("*.pgm"))
        assert len(masks) == 1 and np.all(read_pgm(masks[0]) == 255)

    def test_bad_fixture_exit(self, tmp_path):
        write_fixture(tmp_path / "sr.utpf", np.zeros((3, 16)))
        p = tmp_path / "c.json"
        p.write_text(small_config(sr_fixture=str(tmp_path / "sr.utpf")).to_json())
        r = CliRunner().invoke(main, ["forward", "--config", str(p), "--out", str(tmp_path / "o")])
        assert r.exit_code != 0 and "shape" in r.output

    def test_invalid_config_exit(self, tmp_path):
        d = small_config().to_dict()
        d["schedule"]["ce_layers"] = [40]
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(d))
        r = CliRunner().invoke(main, ["schedule", "--config", str(p), "--out", str(tmp_path / "o")])
        assert r.exit_code != 0

    def test_jobs(self, tmp_path):
        r = CliRunner().invoke(main, ["schedule", "--preset", "ostrack256-ce", "--preset", "sutrack224-utp",
                                      "--jobs", "2", "--out", str(tmp_path)])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "ostrack256-ce" / "schedule.csv").exists()
        assert (tmp_path / "sutrack224-utp" / "schedule.csv").exists()

    def test_calibrate(self):
        r = CliRunner().invoke(main, ["calibrate", "--preset", "ostrack256", "--layers", "3,6,9", "--target", "89"])
        assert r.exit_code == 0 and r.output.split() == ["0.70", "ceil"]
        r = CliRunner().invoke(main, ["calibrate", "--preset", "sutrack224", "--segment", "dt",
                                      "--layers", "9,15,21", "--target", "11"])
        assert r.output.split() == ["0.60", "ceil"]

    @pytest.mark.slow
    def test_verify_negative_control(self):
        r = CliRunner().invoke(main, ["verify", "--keep-ratio-sr", "0.8"])
        assert r.exit_code == 1
