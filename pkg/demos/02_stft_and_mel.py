"""Time-frequency plumbing: STFT round trips, mixture phase, mel features."""

import numpy as np

from wlss import dsp
from wlss.dsp import Waveform

rng = np.random.default_rng(7)
sr = 8000

# --- perfect reconstruction ------------------------------------------------
w = Waveform(rng.standard_normal(4 * sr) * 0.1, sr)
for window, hop in ((256, 64), (256, 80), (1024, 256)):
    spec = dsp.stft(w, window, hop)
    back = dsp.istft(spec)
    err = np.max(np.abs(back.samples - w.samples))
    print(f"window {window:5d} hop {hop:4d}: frames {spec.frames:4d} "
          f"bins {spec.bins:4d}  round-trip error {err:.2e}")

# --- magnitude/phase split and mixture-phase reconstruction ----------------
spec = dsp.stft(w, 256, 64)
mag, phase = dsp.split_magnitude_phase(spec)
resynth = dsp.istft(dsp.reconstruct_with_phase(mag, phase, spec))
print(f"|X|, phase(X) -> X -> waveform: error "
      f"{np.max(np.abs(resynth.samples - w.samples)):.2e}")

# halving the magnitude while keeping the mixture phase halves the signal
halved = dsp.istft(dsp.reconstruct_with_phase(0.5 * mag, phase, spec))
print(f"0.5*|X| with mixture phase ~ 0.5*x: error "
      f"{np.max(np.abs(halved.samples - 0.5 * w.samples)):.2e}")

# --- a tone lands in one bin with the rectangular window -------------------
freq_bin = 20
tone = Waveform(np.sin(2 * np.pi * (freq_bin * sr / 256) * np.arange(2048) / sr), sr)
tspec = dsp.stft(tone, 256, 256, window_fn="rect")
frame = np.abs(tspec.values[4]) ** 2
print(f"sine at bin {freq_bin}: {100 * frame[freq_bin] / frame.sum():.1f}% "
      f"of frame energy in that bin")

# --- log-mel features -------------------------------------------------------
fb = dsp.build_mel(sr, 129, 64)
feats = dsp.log_mel(mag, fb)
print(f"mel filterbank {fb.weights.shape}, features {feats.shape}, "
      f"range [{feats.min():.1f}, {feats.max():.1f}]")
