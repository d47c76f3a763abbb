"""Command-line entry point wiring the pipeline stages together.

Subcommands: synth, canonicalize, extract, build-targets, train, grid,
evaluate, attention, histograms.  Exit codes: 0 success, 1 usage error,
2 data/validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import DataError, NumericError, __version__
from . import audio, evaluation, features, normalization, sessions
from . import synthcorpus, training
from .model import save_checkpoint, load_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def write_manifest(out_dir, config, seed, config_path=None):
    """Reproducibility manifest dropped next to every artifact set."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "registry_version": features.REGISTRY_VERSION,
        "config_path": config_path,
        "config": config,
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "out_dir": os.path.abspath(out_dir),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


TRAIN_KEYS = ("learning_rate", "momentum", "batch_size", "max_epochs",
              "max_seq_len", "dropout", "patience", "hidden", "seed")


def _train_config(cfg):
    return training.TrainConfig(
        **{k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    )


def _load_config(path, overrides):
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg


def _load_corpus(cfg):
    """sessions CSV + feature cache dir -> (records, sequences, targets)."""
    records = sessions.load_sessions(cfg["sessions"])
    feat_dir = cfg["features_dir"]
    seqs = []
    for r in records:
        path = os.path.join(feat_dir, f"{r.speaker_id}.ftr")
        if not os.path.exists(path):
            raise DataError(f"missing feature cache {path}")
        seq = features.load_features(path)
        seq.speaker_id = r.speaker_id
        seq.split = r.split
        seqs.append(seq)
    targets, scaling = sessions.build_targets(records)
    scaled = {sid: tv.scaled for sid, tv in targets.items()}
    return records, seqs, scaled, scaling


def _pairs(seqs, scaled, split):
    return [(s, scaled[s.speaker_id]) for s in seqs if s.split == split]


# --- subcommand implementations -------------------------------------------

def _cmd_synth(args):
    spec_kwargs = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as f:
            spec_kwargs = json.load(f)
    seed = args.seed if args.seed is not None else spec_kwargs.pop("seed", 0)
    spec = synthcorpus.SynthSpec(seed=seed, **spec_kwargs)
    synthcorpus.synth_audio_corpus(spec, args.out)
    write_manifest(args.out, {"n_speakers": spec.n_speakers,
                              "duration_s": spec.duration_s,
                              "noise_std": spec.noise_std}, spec.seed,
                   args.spec)
    print(f"wrote {spec.n_speakers} sessions to {args.out}")
    return 0


def _cmd_canonicalize(args):
    buf = audio.read_wav(args.infile)
    out = audio.canonicalize(buf)
    if out.silence_warning:
        print(f"warning: {args.infile} is silent; left unchanged",
              file=sys.stderr)
    audio.write_wav(out, args.out)
    return 0


def _cmd_extract(args):
    records = sessions.load_sessions(args.sessions)
    registry = features.build_registry()
    os.makedirs(args.out, exist_ok=True)
    for r in records:
        buf = audio.canonicalize(audio.read_wav(r.audio_path))
        seq = features.extract_sequence(buf, registry,
                                        speaker_id=r.speaker_id, split=r.split)
        features.save_features(seq, os.path.join(args.out,
                                                 f"{r.speaker_id}.ftr"),
                               registry)
    with open(os.path.join(args.out, "registry.json"), "w",
              encoding="utf-8") as f:
        json.dump({"version": registry.version, "names": registry.names()}, f,
                  indent=2)
    write_manifest(args.out, {"sessions": args.sessions}, None)
    print(f"extracted {len(records)} feature sequences to {args.out}")
    return 0


def _cmd_build_targets(args):
    records = sessions.load_sessions(args.sessions)
    targets, scaling = sessions.build_targets(records)
    os.makedirs(args.out, exist_ok=True)
    scaling.to_json(os.path.join(args.out, "scaling.json"))
    with open(os.path.join(args.out, "targets.csv"), "w", newline="",
              encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["speaker_id", "split",
                    "cortisol_delta", "appraisal_delta", "affect_delta",
                    "cortisol_scaled", "appraisal_scaled", "affect_scaled"])
        for r in records:
            tv = targets[r.speaker_id]
            w.writerow([r.speaker_id, r.split,
                        repr(tv.cortisol_delta), repr(tv.appraisal_delta),
                        repr(tv.affect_delta)]
                       + [repr(float(v)) for v in tv.scaled])
    write_manifest(args.out, {"sessions": args.sessions}, None)
    return 0


def _cmd_train(args):
    cfg = _load_config(args.config, {"out_dir": args.out, "seed": args.seed})
    _, seqs, scaled, _ = _load_corpus(cfg)
    norm_mode = cfg.get("normalization", "standard")
    normed, _ = normalization.fit_transform(seqs, norm_mode)
    tc = _train_config(cfg)
    task = cfg.get("task", "mtl")
    target = cfg.get("target")
    pooling = "attention" if cfg.get("model", "agru") == "agru" else "mean"
    result = training.train(_pairs(normed, scaled, "train"),
                            _pairs(normed, scaled, "dev"),
                            pooling, task, tc, target_name=target)
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    save_checkpoint(os.path.join(out, "checkpoint.ckpt"), result.params,
                    {"pooling": pooling, "task": task, "target": target,
                     "normalization": norm_mode,
                     "registry_version": features.REGISTRY_VERSION,
                     "seed": tc.seed})
    training.write_history(result.history, os.path.join(out, "history.csv"))
    write_manifest(out, cfg, tc.seed, args.config)
    print(f"best dev MAE {result.best_dev_mae:.4f} at epoch "
          f"{result.best_epoch}")
    return 0


def _cmd_grid(args):
    cfg = _load_config(args.config, {"out_dir": args.out, "seed": args.seed})
    _, seqs, scaled, _ = _load_corpus(cfg)
    tc = _train_config(cfg)
    table = evaluation.run_grid(seqs, scaled, tc, cfg.get("seed", 0),
                                jobs=args.jobs)
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    table.to_csv(os.path.join(out, "results.csv"))
    for target, idx in table.best.items():
        row = table.rows[idx]
        res = row.results["mtl" if row.task == "mtl" else target]
        save_checkpoint(
            os.path.join(out, f"best_{target}.ckpt"), res.params,
            {"pooling": res.pooling, "task": res.task, "target": res.target,
             "normalization": row.normalization,
             "registry_version": features.REGISTRY_VERSION,
             "seed": cfg.get("seed", 0)})
    write_manifest(out, cfg, cfg.get("seed", 0), args.config)
    print(f"grid complete: {len(table.rows)} configurations, "
          f"results in {out}")
    return 0


def _cmd_evaluate(args):
    params, meta = load_checkpoint(args.checkpoint)
    cfg = {"sessions": args.sessions, "features_dir": args.features}
    _, seqs, scaled, _ = _load_corpus(cfg)
    normed, _ = normalization.fit_transform(seqs, meta["normalization"])
    pairs = _pairs(normed, scaled, args.split)
    if not pairs:
        raise DataError(f"no sequences in split {args.split!r}")
    x, lengths = training.pad_batch([s.data[: s.valid_len] for s, _ in pairs],
                                    1200)
    from .model import forward
    pred = forward(x, lengths, params, meta["pooling"]).pred
    y = np.vstack([t for _, t in pairs])
    if meta["task"] == "mtl":
        maes = evaluation.mae(pred, y)
        for name, v in zip(sessions.TARGET_NAMES, maes):
            print(f"{args.split} MAE {name}: {v:.4f}")
    else:
        i = sessions.TARGET_NAMES.index(meta["target"])
        v = evaluation.mae(pred[:, [0]], y[:, [i]])[0]
        print(f"{args.split} MAE {meta['target']}: {v:.4f}")
    return 0


def _cmd_attention(args):
    params, meta = load_checkpoint(args.checkpoint)
    cfg = {"sessions": args.sessions, "features_dir": args.features}
    _, seqs, _, _ = _load_corpus(cfg)
    normed, _ = normalization.fit_transform(seqs, meta["normalization"])
    test_seqs = [s for s in normed if s.split == "test"]
    report = evaluation.attention_report(params, test_seqs,
                                         smoothing_window=args.window)
    os.makedirs(args.out, exist_ok=True)
    evaluation.write_attention_csvs(
        report,
        os.path.join(args.out, "attention_weights.csv"),
        os.path.join(args.out, "attention_curves.csv"))
    if args.svg:
        evaluation.plot_attention_svg(
            report, os.path.join(args.out, "attention.svg"))
    write_manifest(args.out, {"checkpoint": args.checkpoint,
                              "window": args.window}, meta.get("seed"))
    return 0


def _cmd_histograms(args):
    records = sessions.load_sessions(args.sessions)
    hists = evaluation.target_histograms(records, bins=args.bins)
    evaluation.write_histograms_csv(hists, args.out)
    return 0


def build_parser():
    p = _Parser(prog="stressvoice",
                description="speech-based stress-indicator pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic WAV corpus")
    sp.add_argument("--spec", help="SynthSpec JSON")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("canonicalize",
                        help="convert to 16 kHz mono, -1 dB peak")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_canonicalize)

    sp = sub.add_parser("extract", help="extract windowed acoustic features")
    sp.add_argument("--sessions", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_extract)

    sp = sub.add_parser("build-targets",
                        help="construct and scale the three targets")
    sp.add_argument("--sessions", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_build_targets)

    sp = sub.add_parser("train", help="train a single configuration")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("grid", help="run the 8-configuration grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_grid)

    sp = sub.add_parser("evaluate", help="MAE of a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sessions", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", default="test",
                    choices=("train", "dev", "test"))
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("attention",
                        help="attention-weight report over test subjects")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sessions", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window", type=int,
                    default=evaluation.SMOOTHING_WINDOW_DEFAULT)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=_cmd_attention)

    sp = sub.add_parser("histograms", help="raw-target histogram data")
    sp.add_argument("--sessions", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--bins", type=int, default=10)
    sp.set_defaults(func=_cmd_histograms)
    return p


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
