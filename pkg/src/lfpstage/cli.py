"""``lfpstage`` command line: synth, train, eval, infer, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .dataset_io import DataError
from .evaluation import (
    channel_weight_report,
    confusion_matrix,
    epoch_predictions,
    layer_weight_report,
    write_channel_weights,
    write_layer_weights,
    write_report,
)
from .features import extract_many
from .model import ShapeError, load_model, predict, save_model
from .pipeline import load_dataset, load_night, preprocess, save_night
from .synth import SynthConfig, generate
from .training import TrainConfig, fit, split_for

MODEL_NAME = "model.modeljson"
CONFIG_NAME = "train_config.json"

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    return int(os.environ.get("LFPSTAGE_THREADS", "1"))


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _load_model_dir(directory):
    directory = Path(directory)
    manifest = directory / MODEL_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"model file not found: {manifest}")
    params, meta = load_model(manifest)
    cfg_path = directory / CONFIG_NAME
    if not cfg_path.exists():
        raise FileNotFoundError(f"training config not found: {cfg_path}")
    cfg = TrainConfig(**_read_json(cfg_path))
    return params, meta, cfg


def cmd_synth(args) -> None:
    cfg = SynthConfig(**_read_json(args.config)) if args.config else SynthConfig()
    recording, hypnogram = generate(cfg)
    save_night(args.out, cfg.subject_id, recording, hypnogram)
    print(f"wrote {cfg.subject_id}: {recording.header.n_samples} samples x {recording.header.n_channels} channels, "
          f"{len(hypnogram.epochs)} epochs -> {args.out}")


def cmd_train(args) -> None:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    segments = load_dataset(args.data)
    params, history = fit(segments, cfg, workers=_workers(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(params, out / MODEL_NAME, backend=cfg.backend.to_dict(), backend_hash=cfg.backend.digest())
    (out / CONFIG_NAME).write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    history.to_csv(out / "history.csv")
    print(f"best test accuracy {history.test_acc[history.best_epoch]:.4f} at epoch {history.best_epoch} -> {out}")


def cmd_eval(args) -> None:
    params, _, cfg = _load_model_dir(args.model)
    segments = load_dataset(args.data)
    _, test = split_for(segments, cfg)
    if not test:
        raise DataError("test split is empty")
    feats = extract_many(cfg.backend, test, _workers(args))
    probs, _ = predict(params, feats)
    preds = probs.argmax(axis=1)
    labels = [s.label for s in test]
    cm = confusion_matrix(preds, labels)
    epochs = epoch_predictions(test, preds, probs)
    epoch_cm = confusion_matrix([e[3] for e in epochs], [e[2] for e in epochs])
    channels = channel_weight_report(params, feats, [s.subject_id for s in test])
    summary = write_report(args.report, cm, epoch_cm, channels, layer_weight_report(params), {"task": cfg.task})
    print(f"segment accuracy {summary['total_accuracy']:.4f}, epoch accuracy {summary['epoch_accuracy']:.4f} -> {args.report}")


def cmd_infer(args) -> None:
    params, _, cfg = _load_model_dir(args.model)
    recording, hypnogram = load_night(args.recording, args.hypnogram)
    segments = preprocess(recording, hypnogram)
    feats = extract_many(cfg.backend, segments, _workers(args))
    probs, _ = predict(params, feats)
    preds = probs.argmax(axis=1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "segment_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "epoch_index", "start_sample", "label", "pred", "p_wake", "p_n1", "p_n2n3", "p_rem"])
        for s, p, pr in zip(segments, preds, probs):
            w.writerow([s.subject_id, s.epoch_index, s.start_sample, s.label, int(p), *(f"{x:.6f}" for x in pr)])
    with open(out / "epoch_predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "epoch_index", "label", "pred"])
        w.writerows(epoch_predictions(segments, preds, probs))
    print(f"{len(segments)} segments classified -> {out}")


def cmd_inspect(args) -> None:
    params, _, cfg = _load_model_dir(args.model)
    out = Path(args.out) if args.out else Path(args.model)
    out.mkdir(parents=True, exist_ok=True)
    write_layer_weights(layer_weight_report(params), out / "layer_weights.csv")
    if args.data:
        segments = load_dataset(args.data)
        feats = extract_many(cfg.backend, segments, _workers(args))
        write_channel_weights(channel_weight_report(params, feats, [s.subject_id for s in segments]), out / "channel_weights.csv")
    print(f"weights -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfpstage", description="Sleep staging from 8-channel deep-brain LFP.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic night")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify every segment of one night")
    p.add_argument("--model", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--hypnogram")
    p.add_argument("--out", default=".")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect", help="export layer and channel weights")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lfpstage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"lfpstage: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, FileNotFoundError, json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"lfpstage: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
