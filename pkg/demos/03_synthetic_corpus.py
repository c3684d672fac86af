"""The weakly labelled corpus: event families, clips, and the two views.

Run with an output directory to keep the WAVs:
    python demos/03_synthetic_corpus.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from wlss import dsp
from wlss.synthdata import (CLASS_NAMES, SynthConfig, default_classes,
                            generate_clip, generate_dataset, generate_event,
                            load_dataset, training_guard)

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())

# --- the eight event families ----------------------------------------------
print("event families (1 s each, RMS 0.1):")
for spec in default_classes(8):
    ev = generate_event(spec, 1.0, 8000, seed=42)
    mag, _ = dsp.split_magnitude_phase(dsp.stft(ev, 256, 64))
    centroid = (mag * np.arange(129)[None, :]).sum() / mag.sum() * 4000 / 128
    print(f"  {spec.class_id}: {CLASS_NAMES[spec.class_id]:<15} "
          f"spectral centroid {centroid:6.0f} Hz")

# --- one clip, tags vs hidden events -----------------------------------------
clip = generate_clip(default_classes(8), 4.0, 8000, seed=5)
print(f"\nclip tags (training view sees only this): {clip.tags.astype(int)}")
print("hidden events (evaluation view only):")
for k, onset, offset in clip.hidden_events:
    print(f"  class {k} ({CLASS_NAMES[k]}) at {onset:.2f}..{offset:.2f} s")

with training_guard():
    try:
        _ = clip.hidden_events
    except Exception as exc:
        print(f"inside a training guard the same access raises: {type(exc).__name__}")

# --- a small dataset on disk --------------------------------------------------
cfg = SynthConfig(train_clips=24, eval_clips=8, clip_len_s=2.0)
manifests = generate_dataset(cfg, out_dir, seed=123)
train = load_dataset(manifests["train"].path, view="train")
counts = np.sum([c.tags for c in train], axis=0).astype(int)
print(f"\nwrote {len(train)} train clips to {out_dir}")
print(f"per-class tag counts: {counts}")
print(f"training view has hidden events: {hasattr(train[0], 'hidden_events')}")
