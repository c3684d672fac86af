"""Condition-injected U-Net that regresses magnitude spectrograms.

The network maps a mixture magnitude and a length-K condition vector to a
target magnitude.  The condition is embedded by a learned matrix and then
projected, per conv layer, to a per-channel bias added after that layer's
ReLU.  Training needs no clean sources: batches mix pairs of anchor
segments at equal energy and draw one of three objectives per slot —
separate the mixture back to one anchor, reproduce an input given its own
condition (identity), or output silence given the other anchor's
condition (zero mapping).  At inference the condition is a one-hot class
indicator and the waveform is rebuilt with the mixture phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import wlss.autodiff as ad
from wlss.autodiff import Tensor

from . import dsp
from .dsp import Waveform
from .sed import AnchorSegment, SedModel, TrainingDiverged, mine_anchors, tag_segment
from .synthdata import TrainClip, training_guard

OBJECTIVES = ("mixture", "identity", "zero")


@dataclass
class UNetConfig:
    n_classes: int = 8
    encoder_channels: tuple = (8, 16, 32, 64)       # paper scale: 64/128/256/512
    decoder_channels: tuple = (64, 32, 16, 8)
    embedding_dim: int = 32
    window: int = dsp.DEFAULT_WINDOW
    hop: int = dsp.DEFAULT_HOP_SEPARATION
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    segment_samples: int = 8192
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    checkpoint_every: int = 0       # 0: only the final checkpoint
    seed: int = 0

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.decoder_channels):
            raise ValueError("encoder and decoder depths must match (skip pairing)")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)


@dataclass
class TrainingExample:
    input_mag: np.ndarray
    condition: np.ndarray
    target_mag: np.ndarray
    objective: str


def _symmetric_pads(extent: int, multiple: int):
    total = (-extent) % multiple
    return total // 2, total - total // 2


class SeparatorModel:
    """U-Net with per-layer condition biases and a non-negative output."""

    def __init__(self, config: UNetConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, ad.RunningStats] = {}
        self._cond_layers: list[tuple[str, int]] = []
        k, emb = config.n_classes, config.embedding_dim
        self.params["cond.embed.weight"] = ad.init.linear_weight(rng, emb, k)
        self.params["cond.embed.bias"] = ad.init.zeros(emb)

        def conv_layer(name, c_in, c_out, kh, kw):
            self.params[f"{name}.kernel"] = ad.init.conv_kernel(rng, c_out, c_in, kh, kw)
            self.params[f"{name}.bias"] = ad.init.zeros(c_out)
            self._norm_and_cond(name, c_out, rng)

        c_prev = 1
        for i, c in enumerate(config.encoder_channels):
            conv_layer(f"enc{i}.conv0", c_prev, c, 3, 3)
            conv_layer(f"enc{i}.conv1", c, c, 3, 3)
            c_prev = c
        skip_channels = list(config.encoder_channels[::-1])
        for i, c in enumerate(config.decoder_channels):
            # transposed kernels are (C_in, C_out, kh, kw); extent 2*stride
            self.params[f"dec{i}.tconv.kernel"] = Tensor(
                rng.uniform(-1, 1, (c_prev, c, 4, 4)) / np.sqrt(c_prev * 16),
                requires_grad=True)
            self._norm_and_cond(f"dec{i}.tconv", c, rng)
            conv_layer(f"dec{i}.conv0", c + skip_channels[i], c, 3, 3)
            conv_layer(f"dec{i}.conv1", c, c, 3, 3)
            c_prev = c
        self.params["out.kernel"] = ad.init.conv_kernel(rng, 1, c_prev, 1, 1)
        self.params["out.bias"] = ad.init.zeros(1)

    def _norm_and_cond(self, name: str, channels: int, rng) -> None:
        self.params[f"{name}.gamma"] = ad.init.ones(channels)
        self.params[f"{name}.beta"] = ad.init.zeros(channels)
        self.stats[name] = ad.RunningStats(channels)
        self.params[f"{name}.cond.weight"] = ad.init.linear_weight(
            rng, channels, self.config.embedding_dim)
        self.params[f"{name}.cond.bias"] = ad.init.zeros(channels)
        self._cond_layers.append((name, channels))

    def _block_tail(self, x: Tensor, name: str, embed: Tensor, mode: str) -> Tensor:
        """BN + ReLU + condition bias, shared by every conv and tconv layer."""
        x = ad.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                          self.stats[name], mode)
        x = ad.relu(x)
        bias = ad.linear(embed, self.params[f"{name}.cond.weight"],
                         self.params[f"{name}.cond.bias"])
        b = bias.data.shape[0]
        bias = ad.reshape(bias, (b, bias.data.shape[1], 1, 1))
        return ad.add(x, bias)

    def _conv(self, x: Tensor, name: str, embed: Tensor, mode: str) -> Tensor:
        x = ad.conv2d(x, self.params[f"{name}.kernel"], self.params[f"{name}.bias"],
                      padding="same")
        return self._block_tail(x, name, embed, mode)

    def forward_batch(self, mags: np.ndarray, conditions: np.ndarray,
                      mode: str = "eval") -> Tensor:
        """(B, frames, bins) + (B, K) -> (B, frames, bins), non-negative."""
        cfg = self.config
        if conditions.ndim != 2 or conditions.shape[1] != cfg.n_classes:
            raise ValueError(
                f"condition must be (batch, {cfg.n_classes}), got {conditions.shape}")
        if mags.shape[0] != conditions.shape[0]:
            raise ValueError("batch sizes of magnitudes and conditions differ")
        b, frames, bins = mags.shape
        mult = 2 ** cfg.depth
        (pt, pb), (pl, pr) = _symmetric_pads(frames, mult), _symmetric_pads(bins, mult)

        embed = ad.linear(Tensor(conditions), self.params["cond.embed.weight"],
                          self.params["cond.embed.bias"])
        x = ad.pad2d(Tensor(mags[:, None, :, :]), ((pt, pb), (pl, pr)))
        skips = []
        for i in range(cfg.depth):
            x = self._conv(x, f"enc{i}.conv0", embed, mode)
            x = self._conv(x, f"enc{i}.conv1", embed, mode)
            skips.append(x)
            x = ad.avg_pool2d(x, 2)
        for i in range(cfg.depth):
            x = ad.conv2d_transposed(x, self.params[f"dec{i}.tconv.kernel"], stride=2)
            x = self._block_tail(x, f"dec{i}.tconv", embed, mode)
            x = ad.concat([x, skips[cfg.depth - 1 - i]], axis=1)
            x = self._conv(x, f"dec{i}.conv0", embed, mode)
            x = self._conv(x, f"dec{i}.conv1", embed, mode)
        x = ad.conv2d(x, self.params["out.kernel"], self.params["out.bias"],
                      padding="same")
        x = ad.relu(x)
        x = ad.crop2d(x, ((pt, pb), (pl, pr)))
        return ad.reshape(x, (b, frames, bins))

    def unet_forward(self, mag: np.ndarray, condition: np.ndarray) -> np.ndarray:
        """Single-spectrogram eval-mode forward: (frames, bins) -> (frames, bins)."""
        return self.forward_batch(mag[None], np.asarray(condition)[None]).data[0]

    # -- persistence ----------------------------------------------------------

    def _meta(self) -> dict[str, np.ndarray]:
        cfg = self.config
        return {
            "meta.kind": np.float64(1.0),
            "meta.n_classes": np.float64(cfg.n_classes),
            "meta.encoder_channels": np.asarray(cfg.encoder_channels, dtype=np.float64),
            "meta.decoder_channels": np.asarray(cfg.decoder_channels, dtype=np.float64),
            "meta.embedding_dim": np.float64(cfg.embedding_dim),
            "meta.window": np.float64(cfg.window),
            "meta.hop": np.float64(cfg.hop),
            "meta.sample_rate": np.float64(cfg.sample_rate),
            "meta.segment_samples": np.float64(cfg.segment_samples),
        }

    def save(self, path, adam: ad.AdamState | None = None) -> None:
        extra = self._meta()
        for name, st in self.stats.items():
            extra[f"{name}.running_mean"] = st.mean
            extra[f"{name}.running_var"] = st.var
        ad.save_arrays(path, ad.pack_state(self.params, adam, extra))

    @classmethod
    def load(cls, path) -> "SeparatorModel":
        arrays = ad.load_arrays(path)
        if int(arrays["meta.kind"]) != 1:
            raise ad.CheckpointError(f"{path}: not a separator checkpoint")
        cfg = UNetConfig(
            n_classes=int(arrays["meta.n_classes"]),
            encoder_channels=tuple(int(c) for c in arrays["meta.encoder_channels"]),
            decoder_channels=tuple(int(c) for c in arrays["meta.decoder_channels"]),
            embedding_dim=int(arrays["meta.embedding_dim"]),
            window=int(arrays["meta.window"]),
            hop=int(arrays["meta.hop"]),
            sample_rate=int(arrays["meta.sample_rate"]),
            segment_samples=int(arrays["meta.segment_samples"]),
        )
        model = cls(cfg)
        for name, p in model.params.items():
            p.data = np.array(arrays[name])
        for name, st in model.stats.items():
            st.mean = np.array(arrays[f"{name}.running_mean"])
            st.var = np.array(arrays[f"{name}.running_var"])
        return model


# ---------------------------------------------------------------------------
# training batches (no clean sources: anchors, identities, zero targets)
# ---------------------------------------------------------------------------

def _segment_mag(samples: np.ndarray, cfg: UNetConfig) -> np.ndarray:
    spec = dsp.stft(Waveform(samples, cfg.sample_rate), cfg.window, cfg.hop)
    mag, _ = dsp.split_magnitude_phase(spec)
    return mag


def scale_to_energy(samples: np.ndarray, reference_energy: float) -> np.ndarray:
    """Scale so that sum(x^2) equals the reference energy (0 dB pairing)."""
    energy = float(np.sum(samples * samples))
    if energy <= 0:
        raise ValueError("cannot scale a silent segment")
    return samples * np.sqrt(reference_energy / energy)


def make_training_batch(anchors_by_class: dict[int, list[AnchorSegment]],
                        batch_size: int, cfg: UNetConfig,
                        rng: np.random.Generator) -> list[TrainingExample]:
    """Sample pairs of cross-class anchors and one objective per slot."""
    classes = sorted(k for k, v in anchors_by_class.items() if v)
    if len(classes) < 2:
        raise ValueError("need anchors from at least 2 distinct classes")
    examples = []
    for _ in range(batch_size):
        k1, k2 = rng.choice(classes, size=2, replace=False)
        s1 = anchors_by_class[k1][rng.integers(len(anchors_by_class[k1]))]
        s2 = anchors_by_class[k2][rng.integers(len(anchors_by_class[k2]))]
        x1 = s1.samples
        x2 = scale_to_energy(s2.samples, float(np.sum(x1 * x1)))
        pair = ((x1, s1.condition), (x2, s2.condition))
        j = int(rng.integers(2))
        objective = OBJECTIVES[rng.integers(3)]
        xj, cj = pair[j]
        if objective == "mixture":
            inp = _segment_mag(x1 + x2, cfg)
            target = _segment_mag(xj, cfg)
        elif objective == "identity":
            inp = _segment_mag(xj, cfg)
            target = inp
        else:
            inp = _segment_mag(xj, cfg)
            cj = pair[1 - j][1]
            target = np.zeros_like(inp)
        examples.append(TrainingExample(inp, cj, target, objective))
    return examples


def train_separator(sed_model: SedModel, clips: list[TrainClip], config: UNetConfig,
                    ckpt_path=None, log=None,
                    anchors: list[AnchorSegment] | None = None) -> SeparatorModel:
    """Mine anchors with the trained detector, then fit the U-Net with MAE."""
    with training_guard():
        if anchors is None:
            anchors = mine_anchors(sed_model, clips)
        by_class: dict[int, list[AnchorSegment]] = {}
        for a in anchors:
            by_class.setdefault(a.class_id, []).append(a)
        rng = np.random.default_rng(config.seed)
        model = SeparatorModel(config, rng)
        adam = ad.AdamState(model.params, lr=config.lr)
        for step in range(config.steps):
            batch = make_training_batch(by_class, config.batch_size, config, rng)
            mags = np.stack([ex.input_mag for ex in batch])
            conds = np.stack([ex.condition for ex in batch])
            targets = np.stack([ex.target_mag for ex in batch])
            with ad.Tape() as tape:
                est = model.forward_batch(mags, conds, mode="train")
                loss = ad.mae_loss(est, Tensor(targets))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged("separator loss is non-finite", {
                    "step": step, "adam_t": adam.t,
                    "param_norms": {k: float(np.linalg.norm(p.data))
                                    for k, p in model.params.items()}})
            ad.backward(loss, tape)
            ad.adam_step(model.params, adam)
            if log is not None:
                log.add(step, "separator_mae", value)
                err = np.abs(est.data - targets).mean(axis=(1, 2))
                for obj in OBJECTIVES:
                    mask = [ex.objective == obj for ex in batch]
                    if any(mask):
                        log.add(step, f"separator_mae_{obj}", float(err[mask].mean()))
            if (ckpt_path is not None and config.checkpoint_every
                    and (step + 1) % config.checkpoint_every == 0):
                model.save(ckpt_path, adam)
        if ckpt_path is not None:
            model.save(ckpt_path, adam)
    return model


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def separate_with_condition(model: SeparatorModel, mixture: Waveform,
                            condition: np.ndarray) -> Waveform:
    """Separate under an arbitrary condition vector, segment by segment.

    Inputs longer than one segment are processed in non-overlapping
    segment windows and concatenated; the output has exactly the input
    length.
    """
    cfg = model.config
    n = len(mixture.samples)
    seg = cfg.segment_samples
    if n < seg:
        raise ValueError(f"mixture has {n} samples; need at least one segment ({seg})")
    condition = np.asarray(condition, dtype=np.float64)
    out = np.empty(n)
    for start in range(0, n, seg):
        chunk = mixture.samples[start:start + seg]
        m = len(chunk)
        if m < seg:
            chunk = np.concatenate([chunk, np.zeros(seg - m)])
        spec = dsp.stft(Waveform(chunk, cfg.sample_rate), cfg.window, cfg.hop)
        mag, phase = dsp.split_magnitude_phase(spec)
        est = model.unet_forward(mag, condition)
        rebuilt = dsp.istft(dsp.reconstruct_with_phase(est, phase, spec))
        out[start:start + m] = rebuilt.samples[:m]
    return Waveform(out, mixture.sample_rate)


def separate(model: SeparatorModel, mixture: Waveform, k: int) -> Waveform:
    """Separate class k from the mixture using a one-hot condition."""
    cfg = model.config
    if not 0 <= k < cfg.n_classes:
        raise ValueError(f"class {k} out of range (K={cfg.n_classes})")
    condition = np.zeros(cfg.n_classes)
    condition[k] = 1.0
    return separate_with_condition(model, mixture, condition)


def predict_present_then_separate(model: SeparatorModel, sed_model: SedModel,
                                  clip: Waveform, threshold: float = 0.5
                                  ) -> dict[int, Waveform]:
    """Separate every class the detector predicts as present in the clip."""
    clipwise = tag_segment(sed_model, clip)
    return {int(k): separate(model, clip, int(k))
            for k in np.flatnonzero(clipwise >= threshold)}
