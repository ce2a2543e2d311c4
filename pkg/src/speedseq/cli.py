"""speedseq command line: generate, split, train, eval, predict, report.

Exit codes: 0 success, 2 config/usage, 3 data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataio, metrics, synth
from . import models as M
from . import train as T
from ._io import atomic_write_text
from .errors import ConfigError, DataError, SpeedSeqError
from .tensorcore import Rng

log = logging.getLogger("speedseq")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON ({exc.msg}, line {exc.lineno})") from exc


def _load_data(path):
    try:
        return dataio.load_tracks(path)
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc


def _load_ckpt(path):
    try:
        return T.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc


def cmd_generate(args, **_):
    cfg = synth.DatasetConfig.from_json(args.config) if args.config else synth.DatasetConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    tracks = synth.generate_from_config(cfg)
    dataio.save_tracks(tracks, args.out)
    print(f"wrote {synth.speed_summary(tracks)} to {args.out}")
    return EXIT_OK


def cmd_split(args, **_):
    tracks = _load_data(args.data)
    sp = dataio.split_dataset(tracks, args.train_fraction, args.seed)
    dataio.save_tracks(sp.train, args.train_out)
    dataio.save_tracks(sp.test, args.test_out)
    print(f"split {len(tracks)} tracks: {len(sp.train)} train -> {args.train_out}, {len(sp.test)} test -> {args.test_out}")
    return EXIT_OK


def cmd_train(args, **_):
    mcfg = M.ModelConfig.from_dict(_read_json(args.model_config, "model config")) if args.model_config else M.ModelConfig()
    tcfg = T.TrainConfig.from_dict(_read_json(args.train_config, "train config")) if args.train_config else T.TrainConfig()
    if args.variant is not None:
        mcfg = replace(mcfg, variant=args.variant)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    tracks = _load_data(args.data)
    T.prepare_training_tracks(tracks, mcfg.seq_len)

    def progress(epoch, loss, val):
        log.info("epoch %3d  train_loss %.6f  val_rmse %.4f", epoch, loss, val)

    model = M.build(mcfg, Rng(tcfg.seed))
    model, hist = T.train(model, tracks, tcfg, progress=progress)
    T.save_checkpoint(model, args.out)
    print(f"variant {mcfg.variant}: {len(hist)} epochs, best epoch {hist.best_epoch}")
    print(f"final train loss {hist.train_loss[-1]:.6f}")
    print(f"best validation RMSE {model.best_val_rmse:.4f} km/h")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_eval(args, predictor=None, **_):
    model = _load_ckpt(args.checkpoint)
    tracks = _load_data(args.data)
    m = metrics.evaluate(model, tracks, predictor=predictor, per_window=args.per_window)
    name = args.model_name or model.config.variant
    dataset = args.dataset_name or Path(args.data).stem
    written = metrics.emit_report({(name, dataset): m}, args.report_dir)
    print(f"{name} on {dataset}: n={m.n}")
    print(f"mean accuracy {m.mean_accuracy_pct:.4f} %")
    print(f"rmse {m.rmse_kmh:.4f} km/h")
    print(f"report written to {written['summary'].parent}")
    return EXIT_OK


def cmd_predict(args, **_):
    model = _load_ckpt(args.checkpoint)
    tracks = _load_data(args.data)
    for t, (speed, _) in zip(tracks, M.predict_tracks(model, tracks)):
        print(f"{t.track_id}\t{speed:.4f}")
    return EXIT_OK


def cmd_report(args, **_):
    rows = []
    for p in args.inputs:
        try:
            rows.extend(metrics.read_summary(p))
        except FileNotFoundError as exc:
            raise ConfigError(f"summary file not found: {p}") from exc
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        csv_text, table = metrics.comparison_table(rows)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc
    atomic_write_text(args.out, csv_text)
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="speedseq", description="Vehicle speed estimation from bounding-box tracks.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic pinhole-camera dataset")
    g.add_argument("--config", help="dataset config JSON (defaults used when omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("split", help="seeded train/test split of a track file")
    s.add_argument("--data", required=True)
    s.add_argument("--train-out", required=True)
    s.add_argument("--test-out", required=True)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config")
    t.add_argument("--train-config")
    t.add_argument("--out", required=True)
    t.add_argument("--variant", help="override the model config variant")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on labeled tracks and write CSV reports")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report-dir", required=True)
    e.add_argument("--model-name")
    e.add_argument("--dataset-name")
    e.add_argument("--per-window", action="store_true", help="score windows instead of tracks")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="print one speed per track")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("report", help="merge summary CSVs into a model x dataset table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None, predictor=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args, predictor=predictor)
    except SpeedSeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
