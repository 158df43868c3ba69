"""Command-line entry point: ``vitret <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import bench
from .checkpoint import load_model, save_model
from .config import ModelConfig
from .data import ingest_image_directory, load_dataset, save_dataset, synthetic_dataset
from .families import FAMILIES, family_of

log = logging.getLogger("vitret")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(ModelConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default), default=None)


def _config_from(args) -> ModelConfig:
    changes = {f.name: getattr(args, f.name) for f in dataclasses.fields(ModelConfig)
               if getattr(args, f.name, None) is not None}
    return ModelConfig(**changes)


def cmd_gen_data(args) -> int:
    ds = synthetic_dataset(args.classes, args.samples, args.T, args.H, args.W, args.seed,
                           channels=args.channels, noise=args.noise)
    save_dataset(ds, args.output)
    print(f"wrote {len(ds)} samples ({', '.join(ds.class_names)}) to {args.output}")
    return 0


def cmd_ingest(args) -> int:
    cfg = ModelConfig(sequence_length=args.T, image_height=args.H, image_width=args.W)
    ds = ingest_image_directory(args.root, cfg)
    save_dataset(ds, args.output)
    print(f"wrote {len(ds)} samples from {args.root} to {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    ds = load_dataset(args.data)
    train, valid = ds.split(args.split, seed=args.seed)
    fam = FAMILIES[args.model]
    model, history = fam.train(train, valid, cfg, args.seed)
    save_model(args.output, model, cfg)
    history_path = Path(args.history) if args.history else Path(args.output).with_suffix(".history.csv")
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "accuracy", "val_loss", "val_accuracy"])
        for s in history:
            writer.writerow([s.epoch, repr(s.loss), repr(s.accuracy),
                             "" if s.val_loss is None else repr(s.val_loss),
                             "" if s.val_accuracy is None else repr(s.val_accuracy)])
    last = history[-1] if history else None
    if last is not None:
        print(f"{args.model}: loss {last.loss:.4f} acc {last.accuracy:.3f} "
              f"val_loss {last.val_loss if last.val_loss is not None else float('nan'):.4f} "
              f"val_acc {last.val_accuracy if last.val_accuracy is not None else float('nan'):.3f}")
    print(f"checkpoint: {args.output}\nhistory: {history_path}")
    return 0


def cmd_bench(args) -> int:
    config = bench.TestConfig.load(args.tests)
    out_dir = args.output_dir or config.output_dir
    records = bench.run_tests(config)
    csv_path, txt_path = bench.emit_reports(records, out_dir)
    print(txt_path.read_text())
    print(f"csv: {csv_path}\nsummary: {txt_path}")
    failed = [r for r in records if r.error]
    if failed:
        for r in failed:
            print(f"run {r.run} ({r.family} {r.attribute}={r.value} on {r.dataset}) failed: {r.error}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_throughput(args) -> int:
    records = []
    ds = load_dataset(args.data)
    for ckpt in args.checkpoint:
        model, _, _ = load_model(ckpt)
        records += bench.throughput_bench(model, ds, args.repetitions, args.files,
                                          frames_per_file=ds.frame_shape[0], batch_size=args.batch_size,
                                          seed=args.seed, dataset_name=Path(args.data).stem)
        log.info("benchmarked %s from %s", family_of(model).name, ckpt)
    if args.output_dir:
        bench.emit_reports(records, args.output_dir)
    print(bench.summarize(records))
    return 0


def cmd_report(args) -> int:
    records = []
    for path in args.records:
        records += bench.read_csv(path)
    if args.output_dir:
        bench.emit_reports(records, args.output_dir)
    print(bench.summarize(records))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitret", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic motion dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=60, help="samples per class")
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--H", type=int, default=32)
    p.add_argument("--W", type=int, default=32)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="convert class/sample/frame image directories")
    p.add_argument("root")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--H", type=int, default=32)
    p.add_argument("--W", type=int, default=32)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model family on a dataset file")
    p.add_argument("--model", choices=sorted(FAMILIES), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--history", help="per-epoch CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, default=0.8)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a tests.json sweep")
    p.add_argument("tests")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("throughput", help="time forward passes of trained checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--files", type=int, nargs="+", default=list(bench.THROUGHPUT_FILE_COUNTS))
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser("report", help="rebuild summary tables from results CSV files")
    p.add_argument("records", nargs="+")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
