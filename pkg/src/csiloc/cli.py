"""Command-line entry point: simulate -> preprocess -> train -> evaluate.

Exit codes: 0 success, 1 usage error, 2 data or file-format error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import codec, models, nn, preprocess, synth, training


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _triple(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csiloc",
                     description="CSI-fingerprint indoor localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate per-grid CSI packet logs")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--grids", type=int, default=63,
                   help="number of grid cells to generate, 1..63 (default 63)")
    p.add_argument("--packets", type=int, default=None,
                   help="fixed packets per grid; omit to draw imbalanced counts")
    p.add_argument("--imbalance", type=_triple, default=None, metavar="MIN,MAX,MEDIAN",
                   help="per-grid count draw bounds (default 1208,2365,1343)")
    p.add_argument("--scatter", type=float, default=0.05,
                   help="random fraction of per-packet channel power (default 0.05)")
    p.add_argument("--noise", type=float, default=0.01,
                   help="CSI estimation noise variance (default 0.01)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("decode", help="print packet summaries from a .csilog")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--filter", action="store_true",
                   help="apply the validity filter before printing")

    p = sub.add_parser("preprocess", help="turn a log directory into a .csids dataset")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=preprocess.DEFAULT_WINDOW,
                   help="moving-average window (default 8)")

    p = sub.add_parser("split", help="stratified train/validation/test split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seed", type=int, default=0, help="shuffle seed (default 0)")
    p.add_argument("--fractions", type=_triple, default=None, metavar="TRAIN,VAL,TEST",
                   help="split fractions (default 0.75,0.10,0.15)")
    p.add_argument("--out-prefix", default=None,
                   help="output prefix (default: input path without extension)")

    p = sub.add_parser("train", help="train a localization network")
    p.add_argument("--task", choices=("regression", "classification"), required=True)
    p.add_argument("--data", required=True, help=".csids dataset")
    p.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 1e-3)")
    p.add_argument("--batch", type=int, default=256, help="minibatch size (default 256)")
    p.add_argument("--seed", type=int, default=0,
                   help="split/init/shuffle seed (default 0)")
    p.add_argument("--bias-correction", action="store_true",
                   help="use bias-corrected moment estimates (default off)")
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--metrics", default=None, help="metrics CSV path")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of both networks")
    p.add_argument("--probes", type=int, default=25,
                   help="randomly probed parameters per layer (default 25)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_simulate(args) -> int:
    if args.packets is not None:
        counts = args.packets
    elif args.imbalance is not None:
        counts = tuple(int(v) for v in args.imbalance)
    else:
        counts = (1208, 2365, 1343)
    config = synth.GenConfig(master_seed=args.seed, packets_per_grid=counts,
                             scatter_ratio=args.scatter, csi_noise_sigma2=args.noise)
    if not (1 <= args.grids <= synth.GRID_ENV.n_grids):
        raise ValueError(f"--grids must be in 1..{synth.GRID_ENV.n_grids}")
    labels = list(range(1, args.grids + 1))
    rows = synth.generate_dataset(config, args.out, labels=labels)
    total = sum(r.count for r in rows)
    print(f"wrote {len(rows)} grid logs, {total} packets total, to {args.out}")
    return 0


def _cmd_decode(args) -> int:
    result = codec.read_log_file(args.infile)
    packets = result.packets
    if args.filter:
        packets = codec.filter_packets(packets)
    for p in packets:
        print(f"t={p.timestamp}us channel={p.channel}MHz err={p.err_info} "
              f"dims={p.nr}x{p.nc}x{p.num_tones} rssi={p.rssi} "
              f"({p.rssi1},{p.rssi2},{p.rssi3}) payload={p.payload_len}B")
    print(f"{len(result.packets)} of {result.declared_count} packets parsed"
          + (f", {len(packets)} after filter" if args.filter else ""))
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _cmd_preprocess(args) -> int:
    fingerprints = preprocess.load_log_directory(args.indir, window=args.window)
    preprocess.write_dataset(fingerprints, args.out)
    print(f"wrote {len(fingerprints)} fingerprints to {args.out}")
    return 0


def _cmd_split(args) -> int:
    fingerprints = preprocess.read_dataset(args.infile)
    fractions = (tuple(float(v) for v in args.fractions)
                 if args.fractions else preprocess.DEFAULT_FRACTIONS)
    split = preprocess.split_dataset(fingerprints, args.seed, fractions)
    prefix = args.out_prefix
    if prefix is None:
        prefix = args.infile[:-6] if args.infile.endswith(".csids") else args.infile
    for name, part in (("train", split.train), ("val", split.validation),
                       ("test", split.test)):
        path = f"{prefix}.{name}.csids"
        preprocess.write_dataset(part, path)
        print(f"{name}: {len(part)} fingerprints -> {path}")
    return 0


def _cmd_train(args) -> int:
    fingerprints = preprocess.read_dataset(args.data)
    split = preprocess.split_dataset(fingerprints, args.seed)
    if args.task == "classification":
        net = models.build_classification_net(seed=args.seed)
    else:
        net = models.build_regression_net(seed=args.seed)
    cfg = training.TrainConfig(eta=args.lr, batch=args.batch, epochs=args.epochs,
                               seed=args.seed, bias_correction=args.bias_correction)
    net, log = training.train(net, split, cfg)
    nn.save_checkpoint(net, args.out)
    if args.metrics:
        training.export_metrics(log, args.metrics)
    last = log.rows[-1]
    name = "val_acc" if args.task == "classification" else "val_mse"
    print(f"epoch {last.epoch}: train_loss={last.train_loss:.6f} "
          f"val_loss={last.val_loss:.6f} {name}={last.val_metric:.6f}")
    if log.test_loss is not None:
        test_name = "test_acc" if args.task == "classification" else "test_mse"
        print(f"test: loss={log.test_loss:.6f} {test_name}={log.test_metric:.6f}")
    print(f"saved model to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    net = nn.load_checkpoint(args.model)
    fingerprints = preprocess.read_dataset(args.data)
    metrics = training.evaluate(net, fingerprints, net.task)
    if net.task == "classification":
        print(f"accuracy={metrics.accuracy:.6f} "
              f"misclassified={metrics.misclassified}/{metrics.n}")
    else:
        mean_err = float(np.mean(metrics.euclidean_errors))
        print(f"mse={metrics.mse:.6f} mean_euclidean_error={mean_err:.6f}m")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    x = rng.standard_normal((2, 9, 56, 1))
    worst = 0.0
    for name, net, target in (
            ("regression", models.build_regression_net(args.seed),
             rng.standard_normal((2, 2))),
            ("classification", models.build_classification_net(args.seed),
             np.eye(63)[rng.integers(0, 63, size=2)])):
        rel = nn.grad_check(net, x, target, probes_per_layer=args.probes, rng=rng)
        print(f"{name}: max relative gradient discrepancy {rel:.3e}")
        worst = max(worst, rel)
    if worst >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return 2
    print("gradient check passed (threshold 1e-4)")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "decode": _cmd_decode,
    "preprocess": _cmd_preprocess,
    "split": _cmd_split,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (codec.CodecError, preprocess.PreprocessError, nn.ShapeError,
            training.TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
