"""Sound event detection from clip-level tags only.

A small CNN over log-mel features emits framewise presence probabilities;
max-pooling over time collapses them to a clipwise prediction that is
trained with binary cross-entropy against the tags.  The trained detector
then localizes events: the anchor segment for class k is a fixed-duration
waveform slice centered on the frame with the highest presence
probability, and the segment's own clipwise prediction becomes its
condition vector for the separator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import wlss.autodiff as ad
from wlss.autodiff import Tensor

from . import dsp
from .dsp import Waveform
from .synthdata import TrainClip, training_guard


class TrainingDiverged(RuntimeError):
    """Non-finite loss; carries a diagnostic snapshot of the run."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}; diagnostics: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass
class SedConfig:
    n_classes: int = 8
    mel_bins: int = 64
    channels: tuple = (16, 32, 64, 64)
    window: int = dsp.DEFAULT_WINDOW
    hop: int = dsp.DEFAULT_HOP_SED
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    anchor_duration_s: float = 1.024
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 500
    seed: int = 0

    @property
    def anchor_samples(self) -> int:
        return int(round(self.anchor_duration_s * self.sample_rate))

    @property
    def depth(self) -> int:
        return len(self.channels)


@dataclass
class SedPrediction:
    """Framewise probabilities at feature resolution plus their time max."""

    framewise: np.ndarray       # (frames, K)
    clipwise: np.ndarray        # (K,)


@dataclass
class AnchorSegment:
    samples: np.ndarray
    sample_rate: int
    clip_id: str
    class_id: int
    center_s: float             # peak time tau; the slice may shift at edges
    condition: np.ndarray       # clipwise tagging prediction of the slice
    start_s: float = 0.0

    @property
    def end_s(self) -> float:
        return self.start_s + len(self.samples) / self.sample_rate


_fb_cache: dict[tuple, dsp.MelFilterbank] = {}


def clip_features(w: Waveform, cfg: SedConfig) -> np.ndarray:
    """log-mel features (frames x mel_bins) for one waveform."""
    spec = dsp.stft(w, cfg.window, cfg.hop)
    mag, _ = dsp.split_magnitude_phase(spec)
    key = (w.sample_rate, spec.bins, cfg.mel_bins)
    if key not in _fb_cache:
        _fb_cache[key] = dsp.build_mel(*key)
    return dsp.log_mel(mag, _fb_cache[key])


class SedModel:
    """Conv blocks (conv/BN/relu/2x2 mean-pool) + time-distributed sigmoid head."""

    def __init__(self, config: SedConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, ad.RunningStats] = {}
        c_in = 1
        for i, c_out in enumerate(config.channels):
            self.params[f"block{i}.kernel"] = ad.init.conv_kernel(rng, c_out, c_in, 3, 3)
            self.params[f"block{i}.bias"] = ad.init.zeros(c_out)
            self.params[f"block{i}.gamma"] = ad.init.ones(c_out)
            self.params[f"block{i}.beta"] = ad.init.zeros(c_out)
            self.stats[f"block{i}"] = ad.RunningStats(c_out)
            c_in = c_out
        pooled_mels = config.mel_bins // (2 ** config.depth)
        if pooled_mels < 1:
            raise ValueError("mel_bins too small for the configured depth")
        head_in = config.channels[-1] * pooled_mels
        self.params["head.weight"] = ad.init.linear_weight(rng, config.n_classes, head_in)
        self.params["head.bias"] = ad.init.zeros(config.n_classes)

    def forward(self, features: np.ndarray, mode: str = "eval") -> tuple[Tensor, Tensor]:
        """(B, frames, mel) -> framewise (B, frames/2^depth, K), clipwise (B, K)."""
        cfg = self.config
        min_frames = 2 ** cfg.depth
        if features.shape[1] < min_frames:
            raise ValueError(
                f"input has {features.shape[1]} frames; the network needs >= {min_frames}")
        x = Tensor(features[:, None, :, :])
        for i in range(cfg.depth):
            x = ad.conv2d(x, self.params[f"block{i}.kernel"],
                          self.params[f"block{i}.bias"], padding="same")
            x = ad.batch_norm(x, self.params[f"block{i}.gamma"],
                              self.params[f"block{i}.beta"], self.stats[f"block{i}"], mode)
            x = ad.relu(x)
            x = ad.avg_pool2d(x, 2)
        b, c, t, m = x.data.shape
        x = ad.transpose(x, (0, 2, 1, 3))
        x = ad.reshape(x, (b, t, c * m))
        x = ad.linear(x, self.params["head.weight"], self.params["head.bias"])
        framewise = ad.sigmoid(x)
        clipwise = ad.max_over_time(framewise)
        return framewise, clipwise

    def _upsample(self, pooled: np.ndarray, n_frames: int) -> np.ndarray:
        """Nearest-neighbour repetition back to feature resolution."""
        up = np.repeat(pooled, 2 ** self.config.depth, axis=0)
        if len(up) < n_frames:      # extend the tail with the last value
            up = np.concatenate([up, np.repeat(up[-1:], n_frames - len(up), axis=0)])
        return up[:n_frames]

    def predict(self, features: np.ndarray) -> SedPrediction:
        """Eval-mode prediction for one clip, framewise upsampled to feature rate."""
        framewise, clipwise = self.forward(features[None], mode="eval")
        return SedPrediction(self._upsample(framewise.data[0], features.shape[0]),
                             clipwise.data[0])

    # -- persistence ---------------------------------------------------------

    def _meta(self) -> dict[str, np.ndarray]:
        cfg = self.config
        return {
            "meta.kind": np.float64(0.0),
            "meta.n_classes": np.float64(cfg.n_classes),
            "meta.mel_bins": np.float64(cfg.mel_bins),
            "meta.channels": np.asarray(cfg.channels, dtype=np.float64),
            "meta.window": np.float64(cfg.window),
            "meta.hop": np.float64(cfg.hop),
            "meta.sample_rate": np.float64(cfg.sample_rate),
            "meta.anchor_duration_s": np.float64(cfg.anchor_duration_s),
        }

    def save(self, path, adam: ad.AdamState | None = None) -> None:
        extra = self._meta()
        for name, st in self.stats.items():
            extra[f"{name}.running_mean"] = st.mean
            extra[f"{name}.running_var"] = st.var
        ad.save_arrays(path, ad.pack_state(self.params, adam, extra))

    @classmethod
    def load(cls, path) -> "SedModel":
        arrays = ad.load_arrays(path)
        if int(arrays["meta.kind"]) != 0:
            raise ad.CheckpointError(f"{path}: not a detection checkpoint")
        cfg = SedConfig(
            n_classes=int(arrays["meta.n_classes"]),
            mel_bins=int(arrays["meta.mel_bins"]),
            channels=tuple(int(c) for c in arrays["meta.channels"]),
            window=int(arrays["meta.window"]),
            hop=int(arrays["meta.hop"]),
            sample_rate=int(arrays["meta.sample_rate"]),
            anchor_duration_s=float(arrays["meta.anchor_duration_s"]),
        )
        model = cls(cfg)
        for name, p in model.params.items():
            p.data = np.array(arrays[name])
        for name, st in model.stats.items():
            st.mean = np.array(arrays[f"{name}.running_mean"])
            st.var = np.array(arrays[f"{name}.running_var"])
        return model


def train_sed(clips: list[TrainClip], config: SedConfig, ckpt_path=None,
              log=None) -> SedModel:
    """Train on weak tags with Adam; persists a checkpoint when a path is given."""
    if not clips:
        raise ValueError("train_sed: empty dataset")
    with training_guard():
        feats = np.stack([clip_features(c.waveform, config) for c in clips])
        tags = np.stack([c.tags for c in clips])
        rng = np.random.default_rng(config.seed)
        model = SedModel(config, rng)
        adam = ad.AdamState(model.params, lr=config.lr)
        for step in range(config.steps):
            idx = rng.integers(0, len(clips), size=config.batch_size)
            with ad.Tape() as tape:
                _, clipwise = model.forward(feats[idx], mode="train")
                loss = ad.bce_loss(clipwise, tags[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged("detector loss is non-finite", {
                    "step": step, "adam_t": adam.t,
                    "param_norms": {k: float(np.linalg.norm(p.data))
                                    for k, p in model.params.items()}})
            ad.backward(loss, tape)
            ad.adam_step(model.params, adam)
            if log is not None:
                log.add(step, "sed_bce", value)
        if ckpt_path is not None:
            model.save(ckpt_path, adam)
    return model


def _slice_at_peak(model: SedModel, clip: TrainClip, k: int,
                   framewise: np.ndarray) -> tuple[np.ndarray, float]:
    cfg = model.config
    tau_frame = int(np.argmax(framewise[:, k]))
    center = tau_frame * cfg.hop          # feature frame t is centered at t*hop
    n = len(clip.waveform.samples)
    length = cfg.anchor_samples
    if length > n:
        raise ValueError(f"clip {clip.clip_id} shorter than one anchor")
    start = min(max(center - length // 2, 0), n - length)
    samples = clip.waveform.samples[start:start + length].copy()
    return samples, center / cfg.sample_rate, start / cfg.sample_rate


def select_anchor(model: SedModel, clip: TrainClip, k: int) -> AnchorSegment:
    """Slice of the clip centered on the strongest frame for class k.

    The window shifts inward (never pads) when the peak sits within half an
    anchor of either clip edge.
    """
    cfg = model.config
    if not 0 <= k < cfg.n_classes:
        raise ValueError(f"class {k} out of range (K={cfg.n_classes})")
    if clip.tags[k] != 1:
        raise ValueError(f"clip {clip.clip_id} is not tagged with class {k}")
    pred = model.predict(clip_features(clip.waveform, cfg))
    samples, center_s, start_s = _slice_at_peak(model, clip, k, pred.framewise)
    segment = Waveform(samples, clip.waveform.sample_rate)
    condition = tag_segment(model, segment)
    return AnchorSegment(samples, clip.waveform.sample_rate, clip.clip_id, k,
                         center_s, condition, start_s)


def tag_segment(model: SedModel, segment: Waveform) -> np.ndarray:
    """Clipwise tagging prediction of a waveform slice, used as condition."""
    return model.predict(clip_features(segment, model.config)).clipwise


def mine_anchors(model: SedModel, clips: list[TrainClip],
                 batch_size: int = 16) -> list[AnchorSegment]:
    """One anchor per (clip, tagged class) pair.

    Equivalent to select_anchor over every tagged class, but batches the
    eval-mode forwards (whose outputs are batch-size independent).
    """
    cfg = model.config
    feats = [clip_features(c.waveform, cfg) for c in clips]
    pending: list[tuple[TrainClip, int, np.ndarray, float]] = []
    by_shape: dict[tuple, list[int]] = {}
    for i, f in enumerate(feats):
        by_shape.setdefault(f.shape, []).append(i)
    for shape, idxs in by_shape.items():
        for lo in range(0, len(idxs), batch_size):
            chunk = idxs[lo:lo + batch_size]
            framewise, _ = model.forward(np.stack([feats[i] for i in chunk]), "eval")
            for j, i in enumerate(chunk):
                clip = clips[i]
                up = model._upsample(framewise.data[j], shape[0])
                for k in np.flatnonzero(clip.tags):
                    samples, center_s, start_s = _slice_at_peak(model, clip, int(k), up)
                    pending.append((clip, int(k), samples, center_s, start_s))
    anchors = []
    for lo in range(0, len(pending), batch_size):
        chunk = pending[lo:lo + batch_size]
        seg_feats = np.stack([
            clip_features(Waveform(s, cfg.sample_rate), cfg) for _, _, s, _, _ in chunk])
        _, clipwise = model.forward(seg_feats, "eval")
        for (clip, k, samples, center_s, start_s), cond in zip(chunk, clipwise.data):
            anchors.append(AnchorSegment(samples, cfg.sample_rate, clip.clip_id,
                                         k, center_s, cond.copy(), start_s))
    return anchors


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve (mean precision at positives)."""
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] > 0
    n_pos = int(hits.sum())
    if n_pos == 0:
        return float("nan")
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def mean_average_precision(clipwise: np.ndarray, tags: np.ndarray) -> float:
    """Mean per-class AP over classes that have at least one positive."""
    aps = [average_precision(clipwise[:, k], tags[:, k])
           for k in range(tags.shape[1]) if tags[:, k].sum() > 0]
    return float(np.mean(aps))
