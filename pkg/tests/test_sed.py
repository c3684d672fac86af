"""Detection model contracts: pooling invariant, anchors, training smoke."""

import numpy as np
import pytest

from wlss.sed import (AnchorSegment, SedConfig, SedModel, _slice_at_peak,
                      average_precision, clip_features, mean_average_precision,
                      mine_anchors, select_anchor, tag_segment, train_sed)
from wlss.dsp import Waveform
from wlss.synthdata import SynthConfig, default_classes, generate_clip

TINY = SedConfig(n_classes=4, channels=(8, 8), anchor_duration_s=0.5, steps=10,
                 batch_size=4, seed=3)


def tiny_clips(n, seed=0, classes=4, clip_len=1.0):
    specs = default_classes(classes)
    return [generate_clip(specs, clip_len, 8000, seed=seed + i).as_train_view()
            for i in range(n)]


class TestForward:
    def test_zero_head_gives_half(self, rng):
        model = SedModel(TINY, rng)
        model.params["head.weight"].data[:] = 0.0
        model.params["head.bias"].data[:] = 0.0
        pred = model.predict(rng.standard_normal((40, 64)))
        np.testing.assert_array_equal(pred.framewise, np.full((40, 4), 0.5))
        np.testing.assert_array_equal(pred.clipwise, np.full(4, 0.5))

    def test_clipwise_is_time_max(self, rng):
        model = SedModel(TINY, rng)
        for _ in range(5):
            pred = model.predict(rng.standard_normal((52, 64)) * 3)
            np.testing.assert_array_equal(pred.clipwise, pred.framewise.max(axis=0))

    def test_too_short_input_rejected(self, rng):
        model = SedModel(TINY, rng)
        with pytest.raises(ValueError, match="frames"):
            model.forward(rng.standard_normal((1, 3, 64)))

    def test_framewise_at_feature_resolution(self, rng):
        model = SedModel(TINY, rng)
        pred = model.predict(rng.standard_normal((41, 64)))
        assert pred.framewise.shape == (41, 4)


class TestAnchors:
    def test_untagged_class_rejected(self, rng):
        model = SedModel(TINY, rng)
        clip = tiny_clips(1, seed=5)[0]
        untagged = int(np.flatnonzero(clip.tags == 0)[0])
        with pytest.raises(ValueError, match="not tagged"):
            select_anchor(model, clip, untagged)

    def test_out_of_range_class_rejected(self, rng):
        model = SedModel(TINY, rng)
        clip = tiny_clips(1)[0]
        with pytest.raises(ValueError, match="out of range"):
            select_anchor(model, clip, 99)

    def test_peak_slicing_rules(self, rng):
        cfg = SedConfig(n_classes=2, channels=(8, 8), anchor_duration_s=0.25)
        model = SedModel(cfg, rng)
        clip = tiny_clips(1, classes=2)[0]
        n = len(clip.waveform.samples)
        length = cfg.anchor_samples
        frames = 1 + n // cfg.hop

        def slice_for(peak_frame):
            framewise = np.zeros((frames, 2))
            framewise[peak_frame, 0] = 1.0
            return _slice_at_peak(model, clip, 0, framewise)

        # centered peak: symmetric window
        mid = frames // 2
        samples, center_s, start_s = slice_for(mid)
        assert center_s == pytest.approx(mid * cfg.hop / cfg.sample_rate)
        assert len(samples) == length
        # peak at t=0: window shifts inward, slice starts at the clip start
        samples, _, start_s = slice_for(0)
        assert start_s == 0.0
        np.testing.assert_array_equal(samples, clip.waveform.samples[:length])
        # peak at the end: slice ends at the clip end
        samples, _, _ = slice_for(frames - 1)
        np.testing.assert_array_equal(samples, clip.waveform.samples[n - length:])

    def test_slice_always_inside_clip(self, rng):
        cfg = SedConfig(n_classes=2, channels=(8, 8), anchor_duration_s=0.3)
        model = SedModel(cfg, rng)
        clip = tiny_clips(1, classes=2)[0]
        frames = 1 + len(clip.waveform.samples) // cfg.hop
        for _ in range(25):
            framewise = rng.random((frames, 2))
            samples, _, start_s = _slice_at_peak(model, clip, 0, framewise)
            assert len(samples) == cfg.anchor_samples
            assert 0.0 <= start_s <= clip.waveform.duration - cfg.anchor_duration_s + 1e-9

    def test_mine_matches_select(self, rng):
        model = SedModel(TINY, rng)
        clips = tiny_clips(5, seed=20)
        mined = mine_anchors(model, clips, batch_size=2)
        direct = [select_anchor(model, c, int(k))
                  for c in clips for k in np.flatnonzero(c.tags)]
        assert len(mined) == len(direct)
        for a, b in zip(mined, direct):
            assert (a.clip_id, a.class_id) == (b.clip_id, b.class_id)
            np.testing.assert_array_equal(a.samples, b.samples)
            assert a.center_s == b.center_s
            np.testing.assert_array_equal(a.condition, b.condition)

    def test_condition_in_unit_interval(self, rng):
        model = SedModel(TINY, rng)
        cond = tag_segment(model, Waveform(rng.standard_normal(8000) * 0.1, 8000))
        assert cond.shape == (4,)
        assert np.all((cond >= 0) & (cond <= 1))


class TestTraining:
    def test_smoke_and_determinism(self, tmp_path):
        clips = tiny_clips(12, seed=100)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        train_sed(clips, TINY, ckpt_path=p1)
        train_sed(clips, TINY, ckpt_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_checkpoint_round_trip(self, tmp_path, rng):
        clips = tiny_clips(8, seed=7)
        path = tmp_path / "sed.ckpt"
        model = train_sed(clips, TINY, ckpt_path=path)
        loaded = SedModel.load(path)
        assert loaded.config.channels == model.config.channels
        assert loaded.config.anchor_samples == model.config.anchor_samples
        feats = clip_features(clips[0].waveform, TINY)
        np.testing.assert_array_equal(loaded.predict(feats).clipwise,
                                      model.predict(feats).clipwise)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_sed([], TINY)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(np.array([0.9, 0.8, 0.2, 0.1]),
                                 np.array([1, 1, 0, 0])) == 1.0

    def test_known_value(self):
        ap = average_precision(np.array([0.9, 0.8, 0.7, 0.6]),
                               np.array([1, 0, 1, 0]))
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)

    def test_no_positives_is_nan(self):
        assert np.isnan(average_precision(np.array([0.5]), np.array([0])))

    def test_mean_ap_skips_empty_classes(self):
        clipwise = np.array([[0.9, 0.1], [0.2, 0.3]])
        tags = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert mean_average_precision(clipwise, tags) == 1.0
