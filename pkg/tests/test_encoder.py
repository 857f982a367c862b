import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackprune.budget import PruneEvent, PruningSchedule, staged_schedule, token_schedule
from trackprune.ctem import PruneOptions
from trackprune.encoder import EncoderConfig, LayerWeights, forward, init_weights, joint_attention
from trackprune.harness.verify import random_instance
from trackprune.layout import Segment, SegmentLayout, assemble_batch, center_index
from trackprune.oracles import masked_forward


def _weights(d, w_qkv):
    return LayerWeights(np.asarray(w_qkv, dtype=float), np.eye(d), np.zeros((d, d)), np.zeros((d, d)))


def _instance(layout, layers=3, heads=2, dim=4, seed=0, text=False):
    rng = np.random.default_rng(seed)
    lay = SegmentLayout(layout.sr_grid, layout.tmpl_grid, layout.patch_size, dim, layout.n_text)
    cfg = EncoderConfig(layers, dim, heads, mlp_ratio=2.0, weight_seed=seed)
    txt = rng.standard_normal(dim) if lay.n_text else None
    b = assemble_batch(lay, *(rng.standard_normal((n, dim)) for n in (lay.n_sr, lay.n_st, lay.n_dt)), txt)
    return lay, cfg, b


class TestAttention:
    def test_single_token(self):
        d = 2
        w = _weights(d, np.hstack([np.eye(d), np.eye(d), 2 * np.eye(d)]))
        ctx, attn = joint_attention(np.array([[1.0, -3.0]]), w, 1)
        assert attn.tolist() == [[[1.0]]]
        assert ctx.tolist() == [[2.0, -6.0]]

    def test_identical_tokens_split_evenly(self):
        w = _weights(2, np.random.default_rng(0).standard_normal((2, 6)))
        _, attn = joint_attention(np.array([[0.3, 0.7], [0.3, 0.7]]), w, 2)
        np.testing.assert_array_equal(attn, np.full((2, 2, 2), 0.5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.sampled_from([1, 2, 4]), st.integers(0, 2**31))
    def test_rows_sum_to_one(self, n, heads, seed):
        rng = np.random.default_rng(seed)
        w = init_weights(EncoderConfig(1, 8, heads, weight_seed=seed))[0]
        _, attn = joint_attention(rng.standard_normal((n, 8)), w, heads)
        assert attn.shape == (heads, n, n)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            joint_attention(np.ones((3, 4)), _weights(2, np.ones((2, 6))), 1)


class TestConfig:
    def test_presets(self):
        assert EncoderConfig.preset("ostrack256").num_layers == 12
        assert EncoderConfig.preset("sutrack224").num_layers == 24
        assert EncoderConfig.preset("ostrack384", embed_dim=16, num_heads=2).head_dim == 8

    def test_bad_heads(self):
        with pytest.raises(ValueError):
            EncoderConfig(2, 10, 3)

    def test_seeded_weights(self):
        a = init_weights(EncoderConfig(2, 8, 2, weight_seed=4))
        b = init_weights(EncoderConfig(2, 8, 2, weight_seed=4))
        assert all(np.array_equal(x.w_fc1, y.w_fc1) for x, y in zip(a, b))
        assert np.all(np.abs(a[0].w_fc2) <= 1 / np.sqrt(32))


class TestForward:
    def test_empty_schedule(self):
        lay, cfg, b = _instance(SegmentLayout((3, 3), (2, 2), 4, 4))
        res = forward(cfg, b, lay)
        assert [t.tokens_processed for t in res.traces] == [17] * 3
        assert all(not t.prune_events for t in res.traces)
        assert res.restored.shape == (9, 4) and np.all(res.restored.any(axis=1))

    def test_counts_match_closed_form(self):
        lay, cfg, b = _instance(SegmentLayout((6, 6), (3, 3), 4, 4), layers=12, heads=1, dim=4)
        sch = staged_schedule("rgb")
        res = forward(cfg, b, lay, sch)
        want = token_schedule(lay, 12, sch)
        assert [t.counts for t in res.traces] == want
        assert [t.tokens_processed for t in res.traces] == [c.total for c in want]

    @pytest.mark.slow
    def test_ostrack256_full_preset(self):
        lay = SegmentLayout.preset("ostrack256")
        cfg = EncoderConfig.preset("ostrack256")
        rng = np.random.default_rng(0)
        b = assemble_batch(lay, *(rng.standard_normal((n, 768)) for n in (256, 64, 64)))
        res = forward(cfg, b, lay, staged_schedule("rgb"))
        assert [t.tokens_processed for t in res.traces] == [384, 384, 384, 308, 270, 270, 216, 190, 190, 153, 135, 135]
        assert res.batch.count(Segment.SR) == 89
        assert np.count_nonzero(res.restored.any(axis=1)) == 89

    def test_center_survives(self):
        lay, cfg, b = _instance(SegmentLayout((3, 3), (3, 3), 4, 4), layers=6)
        sch = PruningSchedule(ste_layers=(1, 2, 3, 4, 5, 6), keep_ratio_st=0.5)
        res = forward(cfg, b, lay, sch)
        assert list(res.batch.indices(Segment.ST)) == [center_index((3, 3))]

    def test_text_survives(self):
        lay, cfg, b = _instance(SegmentLayout((3, 3), (2, 2), 4, 4, 1), layers=4, text=True)
        res = forward(cfg, b, lay, PruningSchedule(ce_layers=(1, 2, 3, 4)))
        assert all(t.counts.text == 1 for t in res.traces) and res.batch.count(Segment.TEXT) == 1

    def test_event_list(self):
        lay, cfg, b = _instance(SegmentLayout((3, 3), (2, 2), 4, 4))
        a = forward(cfg, b, lay, [(2, "dt", 0.5), (2, "sr", 0.5)])
        c = forward(cfg, b, lay, PruningSchedule(ce_layers=(2,), dte_layers=(2,), keep_ratio_sr=0.5, keep_ratio_dt=0.5))
        assert [d.segment for d in a.traces[1].prune_events] == [Segment.SR, Segment.DT]
        assert np.array_equal(a.restored, c.restored)

    def test_text_event_rejected(self):
        lay, cfg, b = _instance(SegmentLayout((2, 2), (1, 1), 4, 4, 1), text=True)
        with pytest.raises(ValueError, match="text"):
            forward(cfg, b, lay, [PruneEvent(1, Segment.TEXT, 0.5)])

    def test_layer_out_of_range(self):
        lay, cfg, b = _instance(SegmentLayout((2, 2), (1, 1), 4, 4))
        with pytest.raises(ValueError):
            forward(cfg, b, lay, [(4, "sr", 0.5)])

    def test_deterministic(self):
        lay, cfg, b = _instance(SegmentLayout((4, 4), (2, 2), 4, 4), layers=4)
        sch = PruningSchedule(ce_layers=(1, 3), dte_layers=(2,), ste_layers=(2,))
        r1, r2 = forward(cfg, b, lay, sch), forward(cfg, b, lay, sch)
        assert r1.restored.tobytes() == r2.restored.tobytes()
        assert [t.to_dict() for t in r1.traces] == [t.to_dict() for t in r2.traces]

    def test_masked_oracle_fixed_instance(self):
        lay, cfg, b = _instance(SegmentLayout((2, 3), (1, 3), 4, 4), layers=3)
        sch = PruningSchedule((1, 2), (2,), (1,), 0.6, 0.5, 0.5)
        res = forward(cfg, b, lay, sch)
        x, alive, log = masked_forward(cfg, b, lay, sch, PruneOptions(), init_weights(cfg))
        got = [(t.layer_index, d.segment, list(d.kept_original_indices)) for t in res.traces for d in t.prune_events]
        assert got == [(l, s, k) for l, s, k in log]
        assert np.array_equal(b.original_index[alive], res.batch.original_index)
        np.testing.assert_allclose(x[alive], res.batch.features, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_masked_oracle_random(self, seed):
        lay, cfg, b, sch, opt = random_instance(np.random.default_rng(seed))
        res = forward(cfg, b, lay, sch, opt)
        x, alive, log = masked_forward(cfg, b, lay, sch, opt, init_weights(cfg))
        got = [(d.segment, list(d.kept_original_indices)) for t in res.traces for d in t.prune_events]
        assert got == [(s, k) for _, s, k in log]
        np.testing.assert_allclose(x[alive], res.batch.features, atol=1e-10)
