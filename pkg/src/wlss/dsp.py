"""Time-frequency analysis/synthesis and audio file handling.

STFT uses the center convention: the signal is padded with window/2 zeros
at both ends and a frame starts every hop samples, giving
1 + floor(len/hop) frames.  istft performs least-squares overlap-add
synthesis and reproduces the analysed sample count exactly.  The mel
filterbank uses the HTK scale 2595*log10(1 + f/700) with triangular
filters covering [0, Nyquist]; log features are floored at 1e-10.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_MEL_FLOOR = 1e-10

# Desk-scale defaults: 8 kHz audio, 256-sample windows, hop 64 for the
# separation path and hop 80 (100 frames/s) for the detection path.  The
# full-scale 32 kHz / 1024 / 256 / 320 configuration stays selectable.
DEFAULT_SAMPLE_RATE = 8000
DEFAULT_WINDOW = 256
DEFAULT_HOP_SEPARATION = 64
DEFAULT_HOP_SED = 80
DEFAULT_MEL_BINS = 64


class DspError(ValueError):
    pass


@dataclass
class Waveform:
    """Single-channel time-domain signal."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError(f"waveform must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """One-sided STFT plane [frames x bins] plus its analysis parameters."""

    values: np.ndarray          # complex128, frames x (window/2 + 1)
    window: int
    hop: int
    window_fn: str
    sample_rate: int
    n_samples: int              # analysed signal length, used by istft

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def _window_values(window_fn: str, size: int) -> np.ndarray:
    if window_fn == "hann":
        # periodic Hann, w[0] = 0
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)
    if window_fn == "rect":
        return np.ones(size)
    raise DspError(f"unknown window function {window_fn!r}")


def stft(w: Waveform, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP_SEPARATION,
         window_fn: str = "hann") -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT with center padding."""
    n = len(w.samples)
    if n == 0:
        raise DspError("stft: empty waveform")
    if window <= 0 or (window & (window - 1)) != 0:
        raise DspError(f"stft: window must be a power of two, got {window}")
    if not 0 < hop <= window:
        raise DspError(f"stft: need 0 < hop <= window, got hop={hop} window={window}")
    win = _window_values(window_fn, window)
    half = window // 2
    padded = np.concatenate([np.zeros(half), w.samples, np.zeros(window)])
    frames = 1 + n // hop
    starts = np.arange(frames) * hop
    segs = padded[starts[:, None] + np.arange(window)[None, :]] * win
    values = np.fft.rfft(segs, axis=1)
    return ComplexSpectrogram(values, window, hop, window_fn, w.sample_rate, n)


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Least-squares overlap-add inverse of stft.

    Rejects window/hop pairs whose squared-window overlap-add has (near)
    zeros inside the reconstructed region, since the synthesis would be
    unnormalizable there.
    """
    win = _window_values(spec.window_fn, spec.window)
    half = spec.window // 2
    n = spec.n_samples
    frames = spec.frames
    total = (frames - 1) * spec.hop + spec.window
    acc = np.zeros(total)
    denom = np.zeros(total)
    segs = np.fft.irfft(spec.values, n=spec.window, axis=1)
    for t in range(frames):
        sl = slice(t * spec.hop, t * spec.hop + spec.window)
        acc[sl] += segs[t] * win
        denom[sl] += win * win
    region = slice(half, half + n)
    dmin = denom[region].min() if n <= total - half else 0.0
    if n > total - half or dmin < 1e-8:
        raise DspError(
            f"istft: window/hop pair ({spec.window}/{spec.hop}) violates the "
            f"overlap-add normalization condition (min weight {dmin:.2e})")
    samples = acc[region] / denom[region]
    return Waveform(samples, spec.sample_rate)


def split_magnitude_phase(spec: ComplexSpectrogram):
    """Return (magnitude, phase) planes; the phase of a zero entry is 0."""
    mag = np.abs(spec.values)
    phase = np.angle(spec.values)
    return mag, phase


def reconstruct_with_phase(mag: np.ndarray, phase: np.ndarray,
                           like: ComplexSpectrogram) -> ComplexSpectrogram:
    """Combine a (possibly estimated) magnitude with a phase plane.

    ``like`` supplies the frame parameters, normally the analysed mixture
    whose phase is being reused.
    """
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise DspError(f"shape mismatch: magnitude {mag.shape} vs phase {phase.shape}")
    if np.any(mag < 0):
        raise DspError("reconstruct_with_phase: negative magnitude")
    values = mag * np.exp(1j * phase)
    return ComplexSpectrogram(values, like.window, like.hop, like.window_fn,
                              like.sample_rate, like.n_samples)


# ---------------------------------------------------------------------------
# mel features
# ---------------------------------------------------------------------------

@dataclass
class MelFilterbank:
    weights: np.ndarray         # mel_bins x bins, non-negative
    sample_rate: int
    mel_bins: int


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel(sample_rate: int, bins: int, mel_bins: int = DEFAULT_MEL_BINS) -> MelFilterbank:
    """Triangular HTK-scale filters spanning [0, Nyquist]."""
    if mel_bins >= bins:
        raise DspError(f"mel_bins ({mel_bins}) must be < bins ({bins})")
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(0.0, _hz_to_mel(nyquist), mel_bins + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bin_freqs = np.arange(bins) * nyquist / (bins - 1)
    weights = np.zeros((mel_bins, bins))
    for m in range(mel_bins):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(weights[m] > 0):
            raise DspError(f"mel filter {m} has no positive weight; "
                           f"too many mel bins for {bins} FFT bins")
    return MelFilterbank(weights, sample_rate, mel_bins)


def log_mel(mag: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Log mel energies, (frames x bins) -> (frames x mel_bins), floored at 1e-10."""
    return np.log(np.maximum(mag @ fb.weights.T, LOG_MEL_FLOOR))


# ---------------------------------------------------------------------------
# waveform I/O: mono 16-bit RIFF/WAVE, samples mapped to [-1, 1)
# ---------------------------------------------------------------------------

def write_wav(path, w: Waveform) -> None:
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.tobytes())


def read_wav(path) -> Waveform:
    with _wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise DspError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise DspError(f"{path}: expected 16-bit samples, got {8 * f.getsampwidth()}-bit")
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)
