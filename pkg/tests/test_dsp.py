"""STFT round trips, magnitude/phase identities, mel filters, WAV I/O."""

import numpy as np
import pytest

from wlss import dsp
from wlss.dsp import Waveform


class TestStft:
    def test_zero_waveform_zero_spectrogram(self):
        spec = dsp.stft(Waveform(np.zeros(4096), 8000), 256, 64)
        assert np.all(spec.values == 0)
        assert spec.bins == 129
        assert spec.frames == 1 + 4096 // 64

    def test_empty_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.stft(Waveform(np.zeros(0), 8000))

    def test_window_must_be_power_of_two(self):
        with pytest.raises(dsp.DspError):
            dsp.stft(Waveform(np.zeros(1000), 8000), window=300, hop=64)

    def test_sed_path_frame_rate(self):
        # 32 kHz with hop 320 gives 100 frames per second
        w = Waveform(np.zeros(32000), 32000)
        spec = dsp.stft(w, 1024, 320)
        assert spec.frames == 101  # 1 + 100 hops in one second

    def test_sine_at_bin_concentrates_energy(self):
        sr, window = 8000, 256
        bin_idx = 20
        freq = bin_idx * sr / window
        t = np.arange(window * 8) / sr
        w = Waveform(np.sin(2 * np.pi * freq * t), sr)
        spec = dsp.stft(w, window, window, window_fn="rect")
        frame = np.abs(spec.values[4]) ** 2
        assert frame[bin_idx] >= 0.99 * frame.sum()


class TestIstft:
    @pytest.mark.parametrize("window,hop,sr", [(256, 64, 8000), (256, 80, 8000),
                                               (1024, 256, 32000), (1024, 320, 32000)])
    def test_round_trip_white_noise(self, window, hop, sr, rng):
        w = Waveform(rng.standard_normal(window * 6 + 37), sr)
        back = dsp.istft(dsp.stft(w, window, hop))
        assert back.sample_rate == sr
        assert len(back.samples) == len(w.samples)
        assert np.max(np.abs(back.samples - w.samples)) <= 1e-8

    def test_round_trip_silence(self):
        w = Waveform(np.zeros(2048), 8000)
        back = dsp.istft(dsp.stft(w, 256, 64))
        np.testing.assert_array_equal(back.samples, np.zeros(2048))

    def test_bad_overlap_rejected(self, rng):
        w = Waveform(rng.standard_normal(4096), 8000)
        spec = dsp.stft(w, 256, 256)  # hann with hop == window has zero weights
        with pytest.raises(dsp.DspError, match="overlap"):
            dsp.istft(spec)

    def test_rect_full_hop_is_fine(self, rng):
        w = Waveform(rng.standard_normal(2048), 8000)
        back = dsp.istft(dsp.stft(w, 256, 128, window_fn="rect"))
        assert np.max(np.abs(back.samples - w.samples)) <= 1e-8

    def test_energy_consistency(self, rng):
        # windowed-frame energy equals one-sided spectral energy per frame
        w = Waveform(rng.standard_normal(2048), 8000)
        window, hop = 256, 64
        spec = dsp.stft(w, window, hop)
        win = dsp._window_values("hann", window)
        half = window // 2
        padded = np.concatenate([np.zeros(half), w.samples, np.zeros(window)])
        for t in range(0, spec.frames, 7):
            seg = padded[t * hop:t * hop + window] * win
            te = np.sum(seg ** 2)
            v = spec.values[t]
            fe = (np.abs(v[0]) ** 2 + np.abs(v[-1]) ** 2
                  + 2 * np.sum(np.abs(v[1:-1]) ** 2)) / window
            assert abs(te - fe) <= 1e-6 * max(te, 1e-12)


class TestMagPhase:
    def test_zero_spectrogram_convention(self):
        spec = dsp.stft(Waveform(np.zeros(1024), 8000), 256, 64)
        mag, phase = dsp.split_magnitude_phase(spec)
        assert np.all(mag == 0)
        assert np.all(phase == 0)

    def test_split_reconstruct_identity(self, rng):
        w = Waveform(rng.standard_normal(2048), 8000)
        spec = dsp.stft(w, 256, 64)
        mag, phase = dsp.split_magnitude_phase(spec)
        assert np.all(mag >= 0)
        back = dsp.reconstruct_with_phase(mag, phase, spec)
        assert np.max(np.abs(back.values - spec.values)) <= 1e-10 * np.abs(spec.values).max()

    def test_identity_magnitude_returns_mixture(self, rng):
        # reusing the mixture phase with the mixture magnitude is exact
        w = Waveform(rng.standard_normal(4096), 8000)
        spec = dsp.stft(w, 256, 64)
        mag, phase = dsp.split_magnitude_phase(spec)
        est = dsp.istft(dsp.reconstruct_with_phase(mag, phase, spec))
        assert np.max(np.abs(est.samples - w.samples)) <= 1e-8

    def test_negative_magnitude_rejected(self, rng):
        spec = dsp.stft(Waveform(rng.standard_normal(1024), 8000), 256, 64)
        mag, phase = dsp.split_magnitude_phase(spec)
        with pytest.raises(dsp.DspError):
            dsp.reconstruct_with_phase(mag - 1.0, phase, spec)


class TestMel:
    def test_desk_configuration_rows_positive(self):
        fb = dsp.build_mel(8000, 129, 64)
        assert fb.weights.shape == (64, 129)
        assert np.all(fb.weights.sum(axis=1) > 0)

    def test_paper_configuration_rows_positive(self):
        fb = dsp.build_mel(32000, 513, 64)
        assert np.all(fb.weights.sum(axis=1) > 0)
        assert np.all(fb.weights >= 0)

    def test_too_many_mel_bins_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.build_mel(8000, 64, 64)

    def test_zero_magnitude_hits_floor(self):
        fb = dsp.build_mel(8000, 129, 64)
        feats = dsp.log_mel(np.zeros((5, 129)), fb)
        np.testing.assert_allclose(feats, np.log(1e-10))

    def test_feature_shape(self, rng):
        fb = dsp.build_mel(8000, 129, 64)
        feats = dsp.log_mel(rng.uniform(0, 1, (17, 129)), fb)
        assert feats.shape == (17, 64)

    def test_htk_scale_endpoints(self):
        fb = dsp.build_mel(8000, 129, 64)
        # filters cover the full band: first filter starts at 0 Hz,
        # last filter ends at Nyquist
        assert fb.weights[0, :5].sum() > 0
        assert fb.weights[-1, -5:].sum() > 0


class TestWavIO:
    def test_round_trip(self, tmp_path, rng):
        w = Waveform(rng.uniform(-0.9, 0.9, 4001), 8000)
        path = tmp_path / "x.wav"
        dsp.write_wav(path, w)
        back = dsp.read_wav(path)
        assert back.sample_rate == 8000
        assert len(back.samples) == 4001
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768

    def test_written_bytes_deterministic(self, tmp_path, rng):
        w = Waveform(rng.uniform(-0.5, 0.5, 1000), 8000)
        p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
        dsp.write_wav(p1, w)
        dsp.write_wav(p2, w)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quantized_values_round_trip_exactly(self, tmp_path):
        w = Waveform(np.array([0.0, 0.5, -0.5, 32767 / 32768]), 8000)
        path = tmp_path / "q.wav"
        dsp.write_wav(path, w)
        back = dsp.read_wav(path)
        np.testing.assert_array_equal(back.samples, w.samples)
