"""Command-line interface: ``hemocnn {summary,train,eval,predict,gradcheck}``.

Results go to stdout, diagnostics to stderr.  Exit codes: 0 success,
1 usage/config error, 2 data/format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import checkpoint
from .data import (INPUT_SHAPE, ClassMapping, decode_image, load_dataset,
                   one_hot, resize_bilinear, split_stratified, worker_count)
from .errors import ConfigError, DataError, FormatError, HemoError, NumericError
from .model import CsvMetricsSink, TrainConfig, build_paper_model, evaluate, fit
from .optimize import finite_difference_check

log = logging.getLogger("hemocnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_SHAPE = (46, 62, 3)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shape(text: str):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected h,w,c integers, got {text!r}") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected three dimensions h,w,c, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hemocnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    shape = _Parser(add_help=False)
    shape.add_argument("--input-shape", type=_shape, default=INPUT_SHAPE, metavar="h,w,c")
    seed = _Parser(add_help=False)
    seed.add_argument("--seed", type=int, default=42)
    cmap = _Parser(add_help=False)
    cmap.add_argument("--class-map", type=Path, help="JSON object: folder -> class name")
    batch = _Parser(add_help=False)
    batch.add_argument("--batch-size", type=int, default=32)

    sub.add_parser("summary", parents=[shape, seed], help="print the layer table")

    p = sub.add_parser("train", parents=[shape, seed, cmap, batch], help="train a model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--metrics-out", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("eval", parents=[cmap, batch], help="loss and accuracy on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="TEST",
                   help="subdirectory of --data to evaluate if present (default TEST)")

    p = sub.add_parser("predict", help="class probabilities per image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("paths", nargs="+", type=Path)

    p = sub.add_parser("gradcheck", parents=[seed], help="finite-difference gradient check")
    p.add_argument("--input-shape", type=_shape, default=GRADCHECK_SHAPE, metavar="h,w,c")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--entries", type=int, default=16, help="entries checked per tensor")
    return parser


def _mapping(path: Optional[Path]) -> ClassMapping:
    return ClassMapping.from_json(path) if path else ClassMapping()


def cmd_summary(args) -> int:
    print(build_paper_model(args.input_shape, args.seed).summary())
    return EXIT_OK


def _train_val(args, mapping):
    root = args.data
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    train_dir = root / "TRAIN" if (root / "TRAIN").is_dir() else root
    train = load_dataset(train_dir, mapping, args.input_shape)
    if args.val_fraction > 0:
        return split_stratified(train, args.val_fraction, args.seed)
    if (root / "TEST").is_dir():
        return train, load_dataset(root / "TEST", mapping, args.input_shape)
    raise ConfigError(f"no validation data: {root} has no TEST/ directory "
                      "and --val-fraction is 0")


def cmd_train(args) -> int:
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                      learning_rate=args.lr, validation_fraction=args.val_fraction)
    model = build_paper_model(args.input_shape, args.seed)
    train, val = _train_val(args, _mapping(args.class_map))
    log.info("training on %s, validating on %s", train.class_counts(), val.class_counts())
    with contextlib.ExitStack() as stack:
        if args.metrics_out:
            stream = stack.enter_context(open(args.metrics_out, "w", newline=""))
        else:
            stream = sys.stdout
        fit(model, train, val, cfg, CsvMetricsSink(stream))
    checkpoint.save(model, args.checkpoint)
    log.info("saved checkpoint to %s", args.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = checkpoint.load(args.checkpoint)
    root = args.data / args.split if (args.data / args.split).is_dir() else args.data
    data = load_dataset(root, _mapping(args.class_map), model.input_shape)
    loss, acc = evaluate(model, data, args.batch_size)
    print(f"accuracy={acc:.4f}")
    print(f"loss={loss:.6f}")
    return EXIT_OK


def _expand(paths: Sequence[Path]) -> List[Path]:
    files = []
    for p in paths:
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.is_file() and not f.name.startswith("."))
        else:
            files.append(p)
    return files


def cmd_predict(args) -> int:
    model = checkpoint.load(args.checkpoint)
    files = _expand(args.paths)
    if not files:
        raise DataError("no images to predict")
    h, w, _ = model.input_shape
    images = np.stack([resize_bilinear(decode_image(f), (h, w)) for f in files])
    probs = model.predict(images)
    for f, row in zip(files, probs):
        label = model.class_names[int(np.argmax(row))]
        print(f"{f},{label},{row[0]:.6f},{row[1]:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    model = build_paper_model(args.input_shape, args.seed, precision="float64")
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(0.0, 255.0, size=(2, *args.input_shape))
    targets = one_hot(rng.integers(0, 2, size=2), dtype=np.float64)
    report = finite_difference_check(model, x, args.epsilon, args.tolerance, targets,
                                     max_entries=args.entries, seed=args.seed)
    for line in report.lines():
        print(line)
    print(f"max_relative_error={report.max_error:.3e}")
    if not report.passed:
        log.error("gradient check failed: %.3e >= tolerance %.1e",
                  report.max_error, args.tolerance)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {"summary": cmd_summary, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "gradcheck": cmd_gradcheck}


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, FormatError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=worker_count()):
            return COMMANDS[args.command](args)
    except (HemoError, OSError) as exc:
        print(f"hemocnn {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
