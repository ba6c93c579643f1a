"""Command-line interface.

Subcommands: simulate, train, extract, evaluate, gradcheck.  Every command
echoes its effective configuration to stdout and is deterministic given its
flags and seed.  Exit codes: 0 success, 1 runtime failure, 2 usage or
config error.  SPEXPLUS_SEED serves as the seed when --seed is not given.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .audio import AudioFormatError, read_wav, write_wav, AudioBuffer
from .checkpoint import CheckpointError
from .evaluate import IdentityBaseline, evaluate, report_write
from .loss import LossWeights
from .model import SpexPlusConfig, SpexPlusModel
from .simulate import load_meta, simulate_dataset
from .train import TrainConfig, TrainDivergedError, fit, load_model_from_checkpoint


class UsageError(ValueError):
    """Bad flag or config values; maps to exit code 2."""


def _default_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SPEXPLUS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"SPEXPLUS_SEED must be an integer, got {env!r}") from exc
    return 0


def _echo_config(label, payload, out_dir=None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(f"config ({label}):")
    print(text)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(text + "\n", encoding="utf-8")


def cmd_simulate(args):
    seed = _default_seed(args)
    if args.speakers < 4:
        raise UsageError("open-condition split needs >= 4 speakers")
    try:
        splits = tuple(int(x) for x in args.splits.split(","))
    except ValueError as exc:
        raise UsageError(f"--splits must be three comma-separated ints: {args.splits!r}") from exc
    if len(splits) != 3 or any(s < 0 for s in splits):
        raise UsageError(f"--splits must be three non-negative ints: {args.splits!r}")
    config = {
        "out": str(args.out), "speakers": args.speakers, "utts": args.utts,
        "seed": seed, "splits": list(splits),
    }
    _echo_config("simulate", config, args.out)
    paths = simulate_dataset(args.out, n_speakers=args.speakers,
                             utts_per_speaker=args.utts, split_sizes=splits,
                             seed=seed)
    meta = load_meta(paths["train"])
    print(f"speakers: {meta['n_train_speakers']} train/dev, "
          f"{len(meta['test_speakers'])} test (open condition)")
    for split in ("train", "dev", "test"):
        stats = meta["splits"][split]
        print("%-5s %4d examples, snr mean %.2f dB (min %.2f, max %.2f)" % (
            split, stats["count"], stats["snr_mean"], stats["snr_min"],
            stats["snr_max"]))
    return 0


def _load_json_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _build_train_setup(args):
    """Merge preset defaults, JSON config file, and flag overrides."""
    seed = _default_seed(args)
    file_cfg = _load_json_config(args.config) if args.config else {}
    unknown = set(file_cfg) - _KNOWN_CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")

    preset = file_cfg.get("preset", args.preset)
    model_kwargs = {}
    for key in _MODEL_KEYS:
        if key in file_cfg:
            model_kwargs[key] = file_cfg[key]
    if args.untied:
        model_kwargs["tied"] = False

    data_dir = Path(args.data)
    train_manifest = data_dir / "manifests" / "train.jsonl"
    dev_manifest = data_dir / "manifests" / "dev.jsonl"
    if not train_manifest.exists():
        raise UsageError(f"no train manifest at {train_manifest} (run simulate first)")
    meta = load_meta(train_manifest)
    if "N_s" not in model_kwargs and meta is not None:
        model_kwargs["N_s"] = meta["n_train_speakers"]

    try:
        builder = SpexPlusConfig.tiny if preset == "tiny" else SpexPlusConfig.paper
        model_cfg = builder(**model_kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model config: {exc}") from exc

    train_kwargs = {k: file_cfg[k] for k in _TRAIN_KEYS if k in file_cfg}
    weights = LossWeights(
        alpha=file_cfg.get("alpha", 0.1),
        beta=file_cfg.get("beta", 0.1),
        gamma=file_cfg.get("gamma", 0.5),
    )
    train_kwargs["weights"] = weights
    train_kwargs["seed"] = seed
    if args.epochs is not None:
        train_kwargs["max_epochs"] = args.epochs
    if args.max_steps is not None:
        train_kwargs["max_steps"] = args.max_steps
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    if args.lr is not None:
        train_kwargs["lr_init"] = args.lr
    if args.val_metric is not None:
        train_kwargs["val_metric"] = args.val_metric
    try:
        train_cfg = TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc
    return preset, model_cfg, train_cfg, train_manifest, dev_manifest


_MODEL_KEYS = ("sample_rate", "L1", "L2", "L3", "N", "B", "R", "O", "P", "D",
               "N_R", "N_s", "decnn_kernel", "tcn_bias", "stem_norm", "tied")
_TRAIN_KEYS = ("lr_init", "lr_decay", "patience_decay", "patience_stop",
               "max_epochs", "batch_size", "val_metric", "segment_seconds",
               "grad_clip", "max_steps")
_KNOWN_CONFIG_KEYS = set(_MODEL_KEYS) | set(_TRAIN_KEYS) | {"preset", "alpha", "beta", "gamma"}


def cmd_train(args):
    preset, model_cfg, train_cfg, train_manifest, dev_manifest = _build_train_setup(args)
    _echo_config("train", {
        "preset": preset,
        "model": asdict(model_cfg),
        "train": asdict(train_cfg),
        "data": str(args.data),
        "out": str(args.out),
    }, args.out)
    model = SpexPlusModel(model_cfg, seed=train_cfg.seed)
    print(f"model parameters: {model.param_count():,}")
    clock = (lambda: 0.0) if args.fixed_clock else time.monotonic
    result = fit(model, train_manifest, dev_manifest, train_cfg, args.out,
                 clock=clock, resume=args.resume, log=print)
    print(f"done: {result.epochs_run} epochs, {result.global_steps} steps, "
          f"best val_{train_cfg.val_metric}={result.best_val:.6f}")
    print(f"best checkpoint: {result.best_path}")
    return 0


def cmd_extract(args):
    model, ckpt = load_model_from_checkpoint(args.ckpt)
    sr = model.config.sample_rate
    mixture = read_wav(args.mixture, sr)
    reference = read_wav(args.reference, sr)
    _echo_config("extract", {
        "ckpt": str(args.ckpt), "mixture": str(args.mixture),
        "reference": str(args.reference), "out": str(args.out),
    })
    estimate = model.infer(mixture.samples, reference.samples)
    write_wav(args.out, AudioBuffer(estimate, sr))
    print(f"wrote {args.out} ({len(estimate)} samples)")
    return 0


def _parse_durations(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--ref-duration must be comma-separated seconds: {text!r}") from exc


def cmd_evaluate(args):
    if args.ckpt == "identity":
        model = IdentityBaseline()
    else:
        model, _ = load_model_from_checkpoint(args.ckpt)
    durations = _parse_durations(args.ref_duration) if args.ref_duration else [None]
    _echo_config("evaluate", {
        "ckpt": str(args.ckpt), "manifest": str(args.manifest),
        "out": str(args.out), "format": args.format,
        "ref_duration": args.ref_duration,
    })
    out = Path(args.out)
    sweep = []
    for duration in durations:
        report = evaluate(model, args.manifest, ref_duration_s=duration)
        if len(durations) == 1:
            path = out
        else:
            path = out.with_name(f"{out.stem}_ref{duration:g}s{out.suffix}")
        report_write(report, path, args.format)
        agg = report.aggregates["all"]
        sweep.append((duration, agg))
        print(f"wrote {path} ({agg['count']} utterances)")
    print("ref_duration_s,si_sdr_in,si_sdr_out,si_sdri")
    for duration, agg in sweep:
        label = "full" if duration is None else f"{duration:g}"
        print("%s,%.4f,%.4f,%.4f" % (label, agg["si_sdr_in"], agg["si_sdr_out"],
                                     agg["si_sdri"]))
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_checks

    names = None if args.scope == "all" else [args.scope]
    dtypes = {"f32": (np.float32,), "f64": (np.float64,),
              "both": (np.float32, np.float64)}[args.dtype]
    rows = run_checks(names=names, dtypes=dtypes, seed=_default_seed(args),
                      instances=args.instances)
    if not rows:
        raise UsageError(f"no checks match scope {args.scope!r}")
    failures = 0
    for name, dtype, err, tol, ok in rows:
        print("%-28s %-8s max_rel_err=%.3e tol=%.0e %s" % (
            name, dtype, err, tol, "ok" if ok else "FAIL"))
        failures += 0 if ok else 1
    print(f"{len(rows) - failures}/{len(rows)} checks passed")
    return 0 if failures == 0 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spexplus",
        description="Target speaker extraction: simulate data, train, extract, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic two-talker dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=12)
    p.add_argument("--utts", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--splits", default="200,50,50")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a simulated dataset")
    p.add_argument("--config", default=None, help="JSON config file (flat keys)")
    p.add_argument("--data", required=True, help="dataset directory from simulate")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("tiny", "paper"), default="tiny")
    p.add_argument("--untied", action="store_true",
                   help="ablation: untie the twin encoder weights")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--val-metric", choices=("loss", "speaker_accuracy"), default=None)
    p.add_argument("--resume", default=None, help="continue from a last.ckpt")
    p.add_argument("--fixed-clock", action="store_true",
                   help="write 0.0 in the seconds column (reproducible logs)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("extract", help="extract the target speaker from a mixture")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("evaluate", help="score a checkpoint over a manifest")
    p.add_argument("--ckpt", required=True,
                   help="checkpoint file, or 'identity' for the pass-through baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--ref-duration", default=None,
                   help="seconds, comma-separated for a sweep (e.g. 1,2,4)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of ops and layers")
    p.add_argument("--scope", default="all",
                   help="all, or a name prefix like op., layer., loss.")
    p.add_argument("--dtype", choices=("f32", "f64", "both"), default="both")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AudioFormatError, CheckpointError, TrainDivergedError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
