"""Reproducible weakly labelled corpus of parametric sound events.

Eight spectrally separable event families stand in for a real tagged audio
collection.  Clips carry only multi-hot tags for training; the true event
intervals are kept on a separate evaluation view and a runtime guard makes
any training-path access to them fail loudly.

All randomness flows through numpy's PCG64 generator.  Every clip gets its
own seed derived from (global seed, split, clip index) via SeedSequence,
so clips are independently reproducible and generation parallelizes.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform, read_wav, write_wav

EVENT_RMS = 0.1
NOISE_DB = -30.0            # background level relative to event RMS
EVENT_FADE_S = 0.01

CLASS_NAMES = (
    "tone_vibrato", "chirp_up", "chirp_down", "square_wave",
    "am_tone", "noise_band", "harmonic_stack", "click_train",
)


class DatasetError(ValueError):
    pass


class WeakLabelViolation(RuntimeError):
    """Raised when training-path code touches hidden event annotations."""


# ---------------------------------------------------------------------------
# weak-label audit guard
# ---------------------------------------------------------------------------

_guard_depth = 0


@contextmanager
def training_guard():
    """While active, any access to hidden event annotations raises."""
    global _guard_depth
    _guard_depth += 1
    try:
        yield
    finally:
        _guard_depth -= 1


def guard_active() -> bool:
    return _guard_depth > 0


# ---------------------------------------------------------------------------
# clip views
# ---------------------------------------------------------------------------

@dataclass
class TrainClip:
    """Training view: waveform and clip-level tags only."""

    clip_id: str
    waveform: Waveform
    tags: np.ndarray            # multi-hot, length K
    seed: int


@dataclass
class EvalClip(TrainClip):
    """Evaluation view; event intervals are audit-guarded."""

    _events: list = field(default_factory=list)

    @property
    def hidden_events(self) -> list[tuple[int, float, float]]:
        """(class_id, onset_s, offset_s) ground truth, evaluation only."""
        if guard_active():
            raise WeakLabelViolation(
                f"hidden events of {self.clip_id} accessed inside a training guard")
        return list(self._events)

    def as_train_view(self) -> TrainClip:
        return TrainClip(self.clip_id, self.waveform, self.tags, self.seed)


# ---------------------------------------------------------------------------
# event families
# ---------------------------------------------------------------------------

@dataclass
class SoundClassSpec:
    class_id: int
    kind: str                   # one of CLASS_NAMES


def default_classes(n_classes: int = 8) -> list[SoundClassSpec]:
    if not 1 <= n_classes <= len(CLASS_NAMES):
        raise DatasetError(f"n_classes must be in 1..{len(CLASS_NAMES)}, got {n_classes}")
    return [SoundClassSpec(i, CLASS_NAMES[i]) for i in range(n_classes)]


def _fade(x: np.ndarray, sr: int) -> np.ndarray:
    n = min(int(EVENT_FADE_S * sr), len(x) // 4)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _tone_vibrato(rng, t, sr):
    f0 = rng.uniform(200.0, 900.0)
    rate = rng.uniform(4.0, 8.0)
    depth = rng.uniform(0.01, 0.03)
    inst = f0 * (1.0 + depth * np.sin(2.0 * np.pi * rate * t))
    return np.sin(2.0 * np.pi * np.cumsum(inst) / sr)


def _chirp(rng, t, lo_range, hi_range, up: bool):
    f_lo = rng.uniform(*lo_range)
    f_hi = rng.uniform(*hi_range)
    f0, f1 = (f_lo, f_hi) if up else (f_hi, f_lo)
    dur = t[-1] + (t[1] - t[0])
    return np.sin(2.0 * np.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * dur)))


def _square_wave(rng, t, sr):
    f0 = rng.uniform(100.0, 300.0)
    out = np.zeros_like(t)
    h = 1
    while h * f0 < 0.45 * sr:
        out += np.sin(2.0 * np.pi * h * f0 * t) / h
        h += 2
    return out


def _am_tone(rng, t, sr):
    fc = rng.uniform(800.0, 1600.0)
    fm = rng.uniform(10.0, 30.0)
    return (1.0 + 0.8 * np.sin(2.0 * np.pi * fm * t)) * np.sin(2.0 * np.pi * fc * t)


def _noise_band(rng, t, sr):
    center = rng.uniform(1000.0, 3000.0)
    bw = rng.uniform(200.0, 600.0)
    white = rng.standard_normal(len(t))
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(len(t), 1.0 / sr)
    spec[(freqs < center - bw / 2) | (freqs > center + bw / 2)] = 0.0
    return np.fft.irfft(spec, n=len(t))


def _harmonic_stack(rng, t, sr):
    f0 = rng.uniform(300.0, 600.0)
    out = np.zeros_like(t)
    for h in range(1, 6):
        if h * f0 < 0.45 * sr:
            out += np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / np.sqrt(h)
    return out


def _click_train(rng, t, sr):
    rate = rng.uniform(8.0, 20.0)
    period = int(sr / rate)
    click_len = max(int(0.004 * sr), 8)
    decay = np.exp(-np.arange(click_len) / (0.001 * sr))
    click = decay * np.sin(2.0 * np.pi * rng.uniform(1500.0, 3500.0)
                           * np.arange(click_len) / sr)
    out = np.zeros(len(t))
    start = int(rng.uniform(0, period))
    while start + click_len <= len(t):
        out[start:start + click_len] += click
        start += period
    return out


_GENERATORS = {
    "tone_vibrato": _tone_vibrato,
    "chirp_up": lambda rng, t, sr: _chirp(rng, t, (200, 500), (1500, 3000), up=True),
    "chirp_down": lambda rng, t, sr: _chirp(rng, t, (200, 500), (1500, 3000), up=False),
    "square_wave": _square_wave,
    "am_tone": _am_tone,
    "noise_band": _noise_band,
    "harmonic_stack": _harmonic_stack,
    "click_train": _click_train,
}


def generate_event(spec: SoundClassSpec, duration: float, sample_rate: int,
                   seed: int) -> Waveform:
    """One event waveform, deterministic in the seed, RMS-normalized to 0.1."""
    if duration <= 0:
        raise DatasetError(f"duration must be positive, got {duration}")
    if spec.kind not in _GENERATORS:
        raise DatasetError(f"unknown generator kind {spec.kind!r}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = _GENERATORS[spec.kind](rng, t, sample_rate)
    x = _fade(np.asarray(x, dtype=np.float64), sample_rate)
    rms = np.sqrt(np.mean(x * x))
    return Waveform(x * (EVENT_RMS / rms), sample_rate)


# ---------------------------------------------------------------------------
# clips and datasets
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_classes: int = 8
    train_clips: int = 2000
    eval_clips: int = 400
    clip_len_s: float = 4.0
    sample_rate: int = 8000
    event_duration_s: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def derive_clip_seed(global_seed: int, split: str, index: int) -> int:
    split_code = {"train": 0, "eval": 1}[split]
    ss = np.random.SeedSequence([int(global_seed), split_code, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_clip(classes: list[SoundClassSpec], clip_len_s: float,
                  sample_rate: int, seed: int, clip_id: str = "clip",
                  event_duration_s: float = 1.0) -> EvalClip:
    """Place 1-3 events of distinct classes at uniform onsets plus noise floor.

    Events may overlap.  Tags are set exactly from the placed events.
    """
    if clip_len_s < event_duration_s:
        raise DatasetError(
            f"clip length {clip_len_s}s is shorter than an event ({event_duration_s}s)")
    rng = np.random.default_rng(seed)
    n = int(round(clip_len_s * sample_rate))
    k = len(classes)
    n_events = int(rng.integers(1, 4))
    chosen = rng.choice(k, size=min(n_events, k), replace=False)
    samples = rng.standard_normal(n) * (EVENT_RMS * 10.0 ** (NOISE_DB / 20.0))
    tags = np.zeros(k)
    events = []
    for class_idx in chosen:
        onset = rng.uniform(0.0, clip_len_s - event_duration_s)
        event_seed = int(rng.integers(0, 2 ** 63))
        ev = generate_event(classes[class_idx], event_duration_s, sample_rate, event_seed)
        start = int(round(onset * sample_rate))
        samples[start:start + len(ev.samples)] += ev.samples
        tags[class_idx] = 1.0
        events.append((int(class_idx), onset, onset + event_duration_s))
    return EvalClip(clip_id, Waveform(samples, sample_rate), tags, seed, _events=events)


@dataclass
class DatasetManifest:
    split: str
    config: dict
    records: list[dict]
    path: Path | None = None


def _manifest_payload(m: DatasetManifest) -> dict:
    return {"version": 1, "split": m.split, "config": m.config, "clips": m.records}


def generate_dataset(config: SynthConfig, out_dir, seed: int) -> dict[str, DatasetManifest]:
    """Write train and eval splits with per-split manifests; returns both."""
    out_dir = Path(out_dir)
    classes = default_classes(config.n_classes)
    manifests = {}
    for split, count in (("train", config.train_clips), ("eval", config.eval_clips)):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        records = []
        tag_counts = np.zeros(config.n_classes)
        for i in range(count):
            clip_id = f"{split}_{i:06d}"
            clip_seed = derive_clip_seed(seed, split, i)
            clip = generate_clip(classes, config.clip_len_s, config.sample_rate,
                                 clip_seed, clip_id, config.event_duration_s)
            write_wav(split_dir / f"{clip_id}.wav", clip.waveform)
            tag_counts += clip.tags
            records.append({
                "id": clip_id,
                "file": f"{clip_id}.wav",
                "tags": [int(v) for v in clip.tags],
                "seed": clip_seed,
                "events": [[c, round(a, 6), round(b, 6)] for c, a, b in clip._events],
            })
        if split == "train" and count >= 20:
            low = np.flatnonzero(tag_counts < 0.05 * count)
            if len(low):
                raise DatasetError(
                    f"classes {low.tolist()} appear in under 5% of train clips")
        manifest = DatasetManifest(split, config.to_dict(), records,
                                   split_dir / "manifest.json")
        manifest.path.write_text(json.dumps(_manifest_payload(manifest), indent=1))
        manifests[split] = manifest
    return manifests


def load_manifest(manifest_path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    if doc.get("version") != 1:
        raise DatasetError(f"{manifest_path}: unsupported manifest version")
    ids = [r["id"] for r in doc["clips"]]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{manifest_path}: duplicate clip ids")
    return DatasetManifest(doc["split"], doc["config"], doc["clips"], manifest_path)


def load_dataset(manifest_path, view: str = "train") -> list[TrainClip]:
    """Load a split; view 'train' strips event annotations entirely."""
    if view not in ("train", "eval"):
        raise DatasetError(f"unknown view {view!r}")
    manifest = load_manifest(manifest_path)
    base = manifest.path.parent
    expected_n = int(round(manifest.config["clip_len_s"] * manifest.config["sample_rate"]))
    clips: list[TrainClip] = []
    for rec in manifest.records:
        path = base / rec["file"]
        if not path.exists():
            raise DatasetError(f"clip {rec['id']}: missing file {path}")
        w = read_wav(path)
        if len(w.samples) != expected_n or w.sample_rate != manifest.config["sample_rate"]:
            raise DatasetError(f"clip {rec['id']}: audio does not match manifest")
        tags = np.asarray(rec["tags"], dtype=np.float64)
        if view == "train":
            clips.append(TrainClip(rec["id"], w, tags, rec["seed"]))
        else:
            events = [(int(c), float(a), float(b)) for c, a, b in rec["events"]]
            clips.append(EvalClip(rec["id"], w, tags, rec["seed"], _events=events))
    return clips
