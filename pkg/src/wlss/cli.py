"""Command-line entry points.

Verbs: generate-data, train-sed, mine-anchors, train-separator, separate,
evaluate, report, run.  WLSS_THREADS caps BLAS worker threads and defaults
to 1 so same-seed runs are bit-deterministic.
"""

import argparse
import json
import os
import sys


def _cap_threads() -> None:
    n = os.environ.get("WLSS_THREADS", "1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()      # must precede the numpy import chain below

from . import bsseval, pipeline                                  # noqa: E402
from .pipeline import RunLog, load_config, stage_seed            # noqa: E402
from .sed import SedModel, mine_anchors, train_sed              # noqa: E402
from .separator import SeparatorModel, separate, train_separator  # noqa: E402
from .synthdata import generate_dataset, load_dataset           # noqa: E402
from . import dsp                                                # noqa: E402


def _add_common(p, *flags):
    if "config" in flags:
        p.add_argument("--config", help="JSON config file (defaults apply per key)")
    if "seed" in flags:
        p.add_argument("--seed", type=int, help="override the config seed")
    if "out" in flags:
        p.add_argument("--out", required=True, help="output path")


def _load_cfg(args):
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_config(getattr(args, "config", None), overrides)


def cmd_generate_data(args):
    cfg = _load_cfg(args)
    manifests = generate_dataset(pipeline.synth_config(cfg), args.out, seed=cfg["seed"])
    for split, m in manifests.items():
        print(f"{split}: {len(m.records)} clips -> {m.path}")


def cmd_train_sed(args):
    cfg = _load_cfg(args)
    clips = load_dataset(args.data, view="train")
    log_path = args.log or (os.path.splitext(args.out)[0] + "_log.csv")
    with RunLog(log_path) as log:
        train_sed(clips, pipeline.sed_config(cfg), ckpt_path=args.out, log=log)
    print(f"checkpoint -> {args.out}")


def cmd_mine_anchors(args):
    model = SedModel.load(args.ckpt)
    clips = load_dataset(args.data, view="train")
    anchors = mine_anchors(model, clips)
    doc = [{"clip_id": a.clip_id, "class": a.class_id, "tau_s": round(a.center_s, 6),
            "condition": [round(float(c), 6) for c in a.condition]}
           for a in anchors]
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1)
    print(f"{len(anchors)} anchors -> {args.out}")


def cmd_train_separator(args):
    cfg = _load_cfg(args)
    sed_model = SedModel.load(args.sed_ckpt)
    clips = load_dataset(args.data, view="train")
    log_path = args.log or (os.path.splitext(args.out)[0] + "_log.csv")
    with RunLog(log_path) as log:
        train_separator(sed_model, clips, pipeline.separator_config(cfg),
                        ckpt_path=args.out, log=log)
    print(f"checkpoint -> {args.out}")


def cmd_separate(args):
    model = SeparatorModel.load(args.ckpt)
    SedModel.load(args.sed_ckpt)    # validated even though one-hot inference skips it
    mixture = dsp.read_wav(args.infile)
    result = separate(model, mixture, args.klass)
    dsp.write_wav(args.out, result)
    print(f"class {args.klass} -> {args.out}")


def cmd_evaluate(args):
    sep_model = SeparatorModel.load(args.sep_ckpt)
    sed_model = SedModel.load(args.sed_ckpt)
    clips = load_dataset(args.data, view="eval")
    seed = args.seed if args.seed is not None else 0
    _, summary = bsseval.evaluate_corpus(
        sep_model, sed_model, clips, args.pairs, taps=args.taps, seed=seed,
        out_dir=args.out)
    print(json.dumps(summary["overall"], indent=1))


def cmd_report(args):
    files = pipeline.report(args.metrics, args.out)
    for f in files:
        print(f"-> {f}")


def cmd_run(args):
    cfg = _load_cfg(args)
    pipeline.run_pipeline(cfg, args.out)
    print(f"artifacts -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wlss",
        description="weakly labelled source separation: data, training, "
                    "separation, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic weak-label corpus")
    _add_common(p, "config", "seed", "out")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-sed", help="train the detection network on weak tags")
    p.add_argument("--data", required=True, help="train split manifest.json")
    p.add_argument("--log", help="training log CSV (default: next to checkpoint)")
    _add_common(p, "config", "seed", "out")
    p.set_defaults(func=cmd_train_sed)

    p = sub.add_parser("mine-anchors", help="write the anchor manifest for a split")
    p.add_argument("--ckpt", required=True, help="detection checkpoint")
    p.add_argument("--data", required=True, help="split manifest.json")
    _add_common(p, "out")
    p.set_defaults(func=cmd_mine_anchors)

    p = sub.add_parser("train-separator", help="train the conditional U-Net")
    p.add_argument("--sed-ckpt", required=True, help="detection checkpoint")
    p.add_argument("--data", required=True, help="train split manifest.json")
    p.add_argument("--log", help="training log CSV (default: next to checkpoint)")
    _add_common(p, "config", "seed", "out")
    p.set_defaults(func=cmd_train_separator)

    p = sub.add_parser("separate", help="separate one class from a WAV file")
    p.add_argument("--ckpt", required=True, help="separator checkpoint")
    p.add_argument("--sed-ckpt", required=True, help="detection checkpoint")
    p.add_argument("--in", dest="infile", required=True, help="input WAV")
    p.add_argument("--class", dest="klass", type=int, required=True,
                   help="class index to separate")
    _add_common(p, "out")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="SDR/SIR/SAR over random anchor pairs")
    p.add_argument("--sep-ckpt", required=True)
    p.add_argument("--sed-ckpt", required=True)
    p.add_argument("--data", required=True, help="eval split manifest.json")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--taps", type=int, default=bsseval.DEFAULT_TAPS)
    _add_common(p, "seed", "out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="per-class quartile table and text summary")
    p.add_argument("--metrics", required=True, help="metrics.csv from evaluate")
    _add_common(p, "out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline: data, training, evaluation, report")
    _add_common(p, "config", "seed", "out")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
