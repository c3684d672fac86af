"""End-to-end orchestration: config, staged execution, and reporting.

A run directory is built stage by stage (data -> sed -> separator ->
eval -> report).  Every stage records a state file with the 64-bit
FNV-1a hash of the canonical config and SHA-256 digests of its outputs;
a stage is skipped when its state matches, and a stage refuses to run
when a dependency's state or outputs fail verification.

The config is one strict JSON document: unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bsseval
from .bsseval import evaluate_corpus, read_metrics_csv
from .sed import SedConfig, SedModel, train_sed
from .separator import SeparatorModel, UNetConfig, train_separator
from .synthdata import SynthConfig, generate_dataset, load_dataset

STAGES = ("data", "sed", "separator", "eval", "report")

DEFAULT_CONFIG = {
    "seed": 0,
    "dataset": {
        "n_classes": 8,
        "train_clips": 2000,
        "eval_clips": 400,
        "clip_len_s": 4.0,
        "sample_rate": 8000,
        "event_duration_s": 1.0,
    },
    "dsp": {
        "window": 256,
        "hop_sed": 80,
        "hop_separation": 64,
        "mel_bins": 64,
    },
    "sed": {
        "channels": [16, 32, 64, 64],
        "anchor_duration_s": 1.024,
        "lr": 1e-3,
        "batch_size": 16,
        "steps": 400,
    },
    "separator": {
        "encoder_channels": [8, 16, 32, 64],
        "decoder_channels": [64, 32, 16, 8],
        "embedding_dim": 32,
        "lr": 1e-3,
        "batch_size": 8,
        "steps": 2000,
        "checkpoint_every": 0,
    },
    "evaluation": {
        "pairs": 200,
        "taps": 32,
    },
}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _merge_strict(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if key in overrides and isinstance(default, dict):
            if not isinstance(overrides[key], dict):
                raise ConfigError(f"config key {path}{key} must be an object")
            out[key] = _merge_strict(default, overrides[key], f"{path}{key}.")
        elif key in overrides:
            out[key] = overrides[key]
        else:
            out[key] = default
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s): "
                          f"{', '.join(path + k for k in sorted(unknown))}")
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Merge a JSON config file over the defaults, rejecting unknown keys."""
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
    if overrides:
        doc = _merge_strict(_merge_strict(DEFAULT_CONFIG, doc), overrides)
        return validate_config(doc)
    return validate_config(_merge_strict(DEFAULT_CONFIG, doc))


def validate_config(cfg: dict) -> dict:
    ds, dsp_c, sed_c = cfg["dataset"], cfg["dsp"], cfg["sed"]
    window = dsp_c["window"]
    if window <= 0 or window & (window - 1):
        raise ConfigError(f"dsp.window must be a power of two, got {window}")
    for name in ("hop_sed", "hop_separation"):
        if not 0 < dsp_c[name] <= window:
            raise ConfigError(f"dsp.{name} must be in 1..window")
    bins = window // 2 + 1
    if not 0 < dsp_c["mel_bins"] < bins:
        raise ConfigError(f"dsp.mel_bins must be < {bins}")
    if dsp_c["mel_bins"] % (2 ** len(sed_c["channels"])):
        raise ConfigError("dsp.mel_bins must be divisible by 2^len(sed.channels)")
    if ds["clip_len_s"] < ds["event_duration_s"]:
        raise ConfigError("dataset.clip_len_s shorter than one event")
    if sed_c["anchor_duration_s"] > ds["clip_len_s"]:
        raise ConfigError("sed.anchor_duration_s longer than a clip")
    if len(cfg["separator"]["encoder_channels"]) != len(cfg["separator"]["decoder_channels"]):
        raise ConfigError("separator encoder/decoder depths must match")
    if cfg["evaluation"]["pairs"] < 1 or cfg["evaluation"]["taps"] < 1:
        raise ConfigError("evaluation.pairs and evaluation.taps must be >= 1")
    return cfg


def canonical_bytes(cfg: dict) -> bytes:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(cfg: dict) -> str:
    return f"{fnv1a64(canonical_bytes(cfg)):016x}"


def sed_config(cfg: dict) -> SedConfig:
    return SedConfig(
        n_classes=cfg["dataset"]["n_classes"],
        mel_bins=cfg["dsp"]["mel_bins"],
        channels=tuple(cfg["sed"]["channels"]),
        window=cfg["dsp"]["window"],
        hop=cfg["dsp"]["hop_sed"],
        sample_rate=cfg["dataset"]["sample_rate"],
        anchor_duration_s=cfg["sed"]["anchor_duration_s"],
        lr=cfg["sed"]["lr"],
        batch_size=cfg["sed"]["batch_size"],
        steps=cfg["sed"]["steps"],
        seed=stage_seed(cfg["seed"], "sed"),
    )


def separator_config(cfg: dict) -> UNetConfig:
    anchor_samples = int(round(cfg["sed"]["anchor_duration_s"]
                               * cfg["dataset"]["sample_rate"]))
    return UNetConfig(
        n_classes=cfg["dataset"]["n_classes"],
        encoder_channels=tuple(cfg["separator"]["encoder_channels"]),
        decoder_channels=tuple(cfg["separator"]["decoder_channels"]),
        embedding_dim=cfg["separator"]["embedding_dim"],
        window=cfg["dsp"]["window"],
        hop=cfg["dsp"]["hop_separation"],
        sample_rate=cfg["dataset"]["sample_rate"],
        segment_samples=anchor_samples,
        lr=cfg["separator"]["lr"],
        batch_size=cfg["separator"]["batch_size"],
        steps=cfg["separator"]["steps"],
        checkpoint_every=cfg["separator"]["checkpoint_every"],
        seed=stage_seed(cfg["seed"], "separator"),
    )


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(**cfg["dataset"])


_STAGE_SEED_CODE = {"sed": 1001, "separator": 1002, "eval": 1003}


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage training/evaluation seeds derived from the global seed."""
    ss = np.random.SeedSequence([int(seed), _STAGE_SEED_CODE[stage]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------

class RunLog:
    """Append-only per-step scalar log: step, wall time, metric, value."""

    def __init__(self, path):
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(["step", "wall_time_s", "metric", "value"])
        self._t0 = time.perf_counter()
        self._last_step = -1

    def add(self, step: int, metric: str, value: float) -> None:
        if step < self._last_step:
            raise PipelineError(f"run log steps must not decrease ({step})")
        self._last_step = step
        self._writer.writerow([step, f"{time.perf_counter() - self._t0:.3f}",
                               metric, f"{value:.8g}"])
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# staged execution
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_state(stage_dir: Path, stage: str, chash: str, outputs: list[Path]) -> None:
    state = {
        "stage": stage,
        "config_hash": chash,
        "outputs": {str(p.relative_to(stage_dir)): _sha256(p) for p in sorted(outputs)},
    }
    (stage_dir / "state.json").write_text(json.dumps(state, indent=1, sort_keys=True))


def _check_state(stage_dir: Path, stage: str, chash: str, role: str) -> bool:
    """Verify a stage's recorded state against the current config.

    A stage skips itself ('self') when its state exists, the config hash
    matches, and its outputs still exist.  Consumers ('dependency')
    additionally verify the output digests and raise on any mismatch, so
    tampering surfaces at the dependent stage.
    """
    state_path = stage_dir / "state.json"
    if not state_path.exists():
        if role == "dependency":
            raise PipelineError(f"stage {stage}: missing state file {state_path}")
        return False
    state = json.loads(state_path.read_text())
    if state.get("config_hash") != chash:
        if role == "dependency":
            raise PipelineError(
                f"stage {stage}: stale config (state hash {state.get('config_hash')}, "
                f"current {chash})")
        return False
    for rel, digest in state.get("outputs", {}).items():
        path = stage_dir / rel
        if not path.exists():
            if role == "dependency":
                raise PipelineError(f"stage {stage}: missing output {path}")
            return False
        if role == "dependency" and _sha256(path) != digest:
            raise PipelineError(
                f"stage {stage}: output {path} fails digest verification")
    return True


def run_pipeline(cfg: dict, out_dir, echo=print) -> Path:
    """Execute all stages in order, skipping any whose state already matches."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))

    def stage_dir(stage):
        d = out_dir / stage
        d.mkdir(exist_ok=True)
        (d / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
        return d

    runners = {
        "data": _run_data, "sed": _run_sed, "separator": _run_separator,
        "eval": _run_eval, "report": _run_report,
    }
    for i, stage in enumerate(STAGES):
        d = stage_dir(stage)
        for dep in STAGES[:i]:
            _check_state(out_dir / dep, dep, chash, role="dependency")
        if _check_state(d, stage, chash, role="self"):
            echo(f"[{stage}] up to date, skipped")
            continue
        echo(f"[{stage}] running")
        t0 = time.perf_counter()
        try:
            outputs = runners[stage](cfg, out_dir, d)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage {stage} failed: {exc}") from exc
        _write_state(d, stage, chash, outputs)
        echo(f"[{stage}] done in {time.perf_counter() - t0:.1f}s")
    return out_dir


def _run_data(cfg, out_dir, d):
    generate_dataset(synth_config(cfg), d, seed=cfg["seed"])
    outputs = [p for p in d.rglob("*") if p.is_file() and p.name != "config.json"]
    return outputs


def _run_sed(cfg, out_dir, d):
    clips = load_dataset(out_dir / "data" / "train" / "manifest.json", view="train")
    ckpt = d / "sed.ckpt"
    with RunLog(d / "train_log.csv") as log:
        train_sed(clips, sed_config(cfg), ckpt_path=ckpt, log=log)
    return [ckpt]


def _run_separator(cfg, out_dir, d):
    sed_model = SedModel.load(out_dir / "sed" / "sed.ckpt")
    clips = load_dataset(out_dir / "data" / "train" / "manifest.json", view="train")
    ckpt = d / "separator.ckpt"
    with RunLog(d / "train_log.csv") as log:
        train_separator(sed_model, clips, separator_config(cfg), ckpt_path=ckpt, log=log)
    return [ckpt]


def _run_eval(cfg, out_dir, d):
    sed_model = SedModel.load(out_dir / "sed" / "sed.ckpt")
    sep_model = SeparatorModel.load(out_dir / "separator" / "separator.ckpt")
    clips = load_dataset(out_dir / "data" / "eval" / "manifest.json", view="eval")
    evaluate_corpus(sep_model, sed_model, clips, cfg["evaluation"]["pairs"],
                    taps=cfg["evaluation"]["taps"],
                    seed=stage_seed(cfg["seed"], "eval"), out_dir=d)
    return [d / "metrics.csv", d / "summary.json"]


def _run_report(cfg, out_dir, d):
    return report(out_dir / "eval" / "metrics.csv", d)


# ---------------------------------------------------------------------------
# report generation
# ---------------------------------------------------------------------------

def report(metrics_csv, out_dir) -> list[Path]:
    """Quartile table per class (sorted by median SDR, descending) plus a
    plain-text summary with means and mixture-baseline deltas."""
    records = read_metrics_csv(metrics_csv)
    if not records:
        raise PipelineError(f"{metrics_csv}: no metric records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for k in sorted({r["class_id"] for r in records}):
        sdrs = np.array([r["sdr_db"] for r in records if r["class_id"] == k])
        q = np.percentile(sdrs, [0, 25, 50, 75, 100])    # linear interpolation
        rows.append((k, len(sdrs), *q))
    rows.sort(key=lambda r: -r[4])

    per_class = out_dir / "per_class.csv"
    with open(per_class, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "count", "min_sdr_db", "q1_sdr_db",
                         "median_sdr_db", "q3_sdr_db", "max_sdr_db"])
        for k, n, mn, q1, med, q3, mx in rows:
            writer.writerow([k, n] + [f"{v:.6f}" for v in (mn, q1, med, q3, mx)])

    summary = bsseval.summarize(records)
    overall = summary["overall"]
    lines = [
        "separation run summary",
        "quartile method: linear interpolation between order statistics",
        "",
        f"pairs evaluated:        {summary['pairs']}",
        f"mean SDR:               {overall['mean_sdr_db']:8.2f} dB",
        f"mean SIR:               {overall['mean_sir_db']:8.2f} dB",
        f"mean SAR:               {overall['mean_sar_db']:8.2f} dB",
        f"mixture baseline SDR:   {overall['mean_baseline_sdr_db']:8.2f} dB",
        f"SDR gain over baseline: "
        f"{overall['mean_sdr_db'] - overall['mean_baseline_sdr_db']:8.2f} dB",
        "",
        "per-class median SDR (descending):",
    ]
    for k, n, mn, q1, med, q3, mx in rows:
        lines.append(f"  class {k}: median {med:7.2f} dB  "
                     f"[min {mn:7.2f}, Q1 {q1:7.2f}, Q3 {q3:7.2f}, max {mx:7.2f}]  "
                     f"n={n}")
    text = out_dir / "report.txt"
    text.write_text("\n".join(lines) + "\n")
    return [per_class, text]
