"""Command-line entry point: synth, extract, train, score, eval, fuse."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import audio, features, fusion, metrics, training
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, read_config
from .featmap import SegmenterConfig
from .models import FIXED_SIZE_KINDS, KINDS, ModelConfig, build_model
from .nn import OptimizerConfig

log = logging.getLogger("assertkit")


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in str(text).split(","))


def _workers() -> int:
    try:
        cap = int(os.environ.get("ASSERTKIT_THREADS", "0"))
    except ValueError:
        cap = 0
    n = os.cpu_count() or 1
    return max(1, min(n, cap) if cap > 0 else n)


def _feature_path(feat_dir, utt_id: str) -> Path:
    return Path(feat_dir) / f"{utt_id}.feat"


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = audio.SynthConfig(args.mode, args.n_bonafide, args.spoof_per_class,
                            (args.duration_min, args.duration_max), args.sample_rate, args.seed)
    entries = audio.synth_corpus(cfg, args.out)
    if args.dev_fraction > 0:
        train, dev = audio.split_protocol(entries, args.dev_fraction, args.seed)
        audio.write_protocol(Path(args.out) / "train.txt", train)
        audio.write_protocol(Path(args.out) / "dev.txt", dev)
    print(f"wrote {len(entries)} utterances to {args.out}")


def _extract_one(job):
    wav_path, out_path, kind, stft, cq = job
    feat = features.extract(audio.read_wav(wav_path), kind, stft, cq)
    features.save_features(out_path, feat)
    return out_path


def cmd_extract(args) -> None:
    entries = audio.read_protocol(args.protocol)
    audio_dir = Path(args.audio_dir) if args.audio_dir else Path(args.protocol).parent / "wav"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stft = features.StftConfig(args.fft_size, args.win_length, args.hop_length)
    cq = features.CqccConfig(hop_length=args.hop_length)
    jobs = [(audio_dir / f"{e.utt_id}.wav", _feature_path(out, e.utt_id), args.feature, stft, cq) for e in entries]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_extract_one, jobs))
    else:
        for job in jobs:
            _extract_one(job)
    print(f"extracted {len(jobs)} {args.feature} archives to {out}")


def _load_utterances(protocol_path, feat_dir, space):
    data = []
    for e in audio.read_protocol(protocol_path):
        feat = features.load_features(_feature_path(feat_dir, e.utt_id))
        data.append(training.Utterance(e.utt_id, feat.data, space.index(e.system_id, e.key), e.is_bonafide))
    return data


def cmd_train(args) -> None:
    space = training.LabelSpace.create(args.mode, args.objective)
    train_data = _load_utterances(args.train_protocol, args.features, space)
    dev_data = _load_utterances(args.dev_protocol, args.features, space)
    overrides = {"seed": args.seed}
    if args.units:
        overrides["units"] = _ints(args.units)
    if args.channels:
        overrides["channels"] = _ints(args.channels)
    if args.dilations:
        overrides["dilations"] = _ints(args.dilations)
    if args.model in FIXED_SIZE_KINDS:
        overrides["segment_frames"] = args.segment_frames
    mcfg = ModelConfig.default(args.model, n_classes=space.n_classes,
                               input_dim=train_data[0].features.shape[1], **overrides)
    cfg = training.TrainConfig(
        selection="dev_eer" if args.select == "eer" else "dev_acc",
        epochs=args.epochs, batch_size=args.batch_size,
        optimizer=OptimizerConfig(peak_lr=args.peak_lr, warmup_steps=args.warmup_steps),
        segmenter=SegmenterConfig(args.segment_frames, args.overlap), seed=args.seed,
    )
    ckpt, reports = training.train(build_model(mcfg), train_data, dev_data, cfg, space)
    save_checkpoint(args.out, ckpt)
    log_path = args.log or str(args.out) + ".log"
    Path(log_path).write_text("".join(r.to_line() + "\n" for r in reports), encoding="utf-8")
    best = next(r for r in reports if r.selected)
    print(f"selected epoch {best.epoch}: dev EER {100 * best.dev_eer:.4f} % dev acc {best.dev_acc:.4f}")


def cmd_score(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build()
    space = training.space_from_metadata(ckpt.metadata)
    seg = SegmenterConfig(int(ckpt.metadata.get("segment_frames", 400)), int(ckpt.metadata.get("overlap", 200)))
    entries = audio.read_protocol(args.protocol)
    feats = [features.load_features(_feature_path(args.features, e.utt_id)).data for e in entries]
    values = training.score_utterances(model, feats, seg, space)
    metrics.write_scores(args.out, metrics.ScoreSet(zip((e.utt_id for e in entries), values.tolist())))
    print(f"scored {len(entries)} trials to {args.out}")


def _tdcf_params(path) -> metrics.TdcfParams:
    if not path:
        return metrics.TdcfParams()
    raw = read_config(path)
    known = {f.name for f in fields(metrics.TdcfParams)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown t-DCF parameters: {', '.join(unknown)}")
    return metrics.TdcfParams(**{k: float(v) for k, v in raw.items()})


def cmd_eval(args) -> None:
    entries = audio.read_protocol(args.protocol)
    scores, keys = metrics.read_scores(args.scores).arrays(entries)
    report = metrics.evaluate(scores, keys, _tdcf_params(args.tdcf))
    print(f"EER {100 * report.eer:.4f} %")
    print(f"min t-DCF {report.min_tdcf_norm:.4f}")
    print(report.to_line())


def cmd_fuse(args) -> None:
    entries = audio.read_protocol(args.protocol)
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.scores]
    if len(names) != len(args.scores) or len(set(names)) != len(names):
        raise UsageError("--names must give one distinct name per score file")
    systems, keys = {}, None
    for name, path in zip(names, args.scores):
        systems[name], keys = metrics.read_scores(path).arrays(entries)
    plan = fusion.greedy_select(systems, keys, fusion.CalibrationConfig(args.prior), args.metric,
                                _tdcf_params(args.tdcf))
    fused = fusion.apply_calibration(plan.model, np.column_stack([systems[n] for n in plan.systems]))
    metrics.write_scores(args.out, metrics.ScoreSet(zip((e.utt_id for e in entries), fused.tolist())))
    report = args.report or str(args.out) + ".fusion.txt"
    fusion.write_fusion_report(report, plan, args.prior)
    print(f"fused {', '.join(plan.systems)}; dev {args.metric} {plan.step_metrics[-1]:.4f}")


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assertkit", description="Spoofing countermeasure pipeline.")
    parser.add_argument("--config", help="key = value file; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--mode", choices=("PA", "LA"), default="PA")
    p.add_argument("--out", required=True)
    p.add_argument("--n-bonafide", type=int, default=60)
    p.add_argument("--spoof-per-class", type=int, default=60)
    p.add_argument("--duration-min", type=float, default=1.0)
    p.add_argument("--duration-max", type=float, default=4.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--dev-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute feature archives for a protocol")
    common(p)
    p.add_argument("--protocol", required=True)
    p.add_argument("--audio-dir")
    p.add_argument("--feature", choices=features.FEATURE_KINDS, default="logspec")
    p.add_argument("--out", required=True)
    p.add_argument("--fft-size", type=int, default=512)
    p.add_argument("--win-length", type=int, default=400)
    p.add_argument("--hop-length", type=int, default=160)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model and keep the best epoch")
    common(p)
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--dev-protocol", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--model", choices=KINDS, default="senet34")
    p.add_argument("--mode", choices=("PA", "LA"), default="PA")
    p.add_argument("--objective", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--select", choices=("eer", "acc"), default="eer")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--warmup-steps", type=int, default=1000)
    p.add_argument("--segment-frames", type=int, default=400)
    p.add_argument("--overlap", type=int, default=200)
    p.add_argument("--units", help="comma-separated residual units per block")
    p.add_argument("--channels", help="comma-separated channels per block")
    p.add_argument("--dilations", help="comma-separated dilation per block")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a protocol with a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER and minimum normalised t-DCF of a score file")
    common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--tdcf", help="key = value file of t-DCF parameters")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="greedy calibrated fusion of score files")
    common(p)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--names")
    p.add_argument("--protocol", required=True)
    p.add_argument("--prior", type=float, default=fusion.PA_PRIOR)
    p.add_argument("--metric", choices=("min_tdcf", "eer"), default="min_tdcf")
    p.add_argument("--tdcf")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_fuse)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with config-file values installed as subcommand defaults.

    The config path and subcommand are located first, so values in the file
    can satisfy flags that are otherwise required.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    values = read_config(known.config)
    sub = choices[command]
    dests = {a.dest: a for a in sub._actions}
    unknown = sorted(k for k in values if k not in dests or k in ("help", "config"))
    if unknown:
        raise UsageError(f"unknown configuration keys for {command}: {', '.join(unknown)}")
    defaults = {}
    for key, value in values.items():
        action = dests[key]
        if action.nargs in ("+", "*"):
            defaults[key] = value.split()
        else:
            defaults[key] = action.type(value) if action.type else value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ConfigError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
