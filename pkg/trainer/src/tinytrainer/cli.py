"""tinytrainer command line: fetch, train, and export.

    tinytrainer fetch --data-dir mnist/
    tinytrainer train --arch tinynet --epochs 100 --out tinynet.pt
    tinytrainer train --arch ffconv-tinynet --rank 13 --init svd \
        --source tinynet.pt --out ffconv.pt
    tinytrainer export --checkpoint ffconv.pt --bits 8 --out weights.bin \
        --net-out net.json
"""

from __future__ import annotations

import argparse
import sys

from .data import fetch_mnist, load_mnist, mnist_available, upscaled_digits
from .export import export
from .model import load_checkpoint, save_checkpoint
from .train import TrainConfig, evaluate, train


def cmd_fetch(args) -> int:
    fetch_mnist(args.data_dir)
    print(f"MNIST archives ready in {args.data_dir}")
    return 0


def _load_data(args):
    if args.dataset == "mnist":
        if not mnist_available(args.data_dir):
            print(f"error: MNIST not found in {args.data_dir}; "
                  "run `tinytrainer fetch` first", file=sys.stderr)
            raise SystemExit(1)
        return load_mnist(args.data_dir)
    return upscaled_digits(seed=args.seed)


def cmd_train(args) -> int:
    config = TrainConfig(architecture=args.arch, epochs=args.epochs, lr=args.lr,
                         lr_decay=args.lr_decay, rank=args.rank, init=args.init,
                         source_checkpoint=args.source, seed=args.seed,
                         batch_size=args.batch_size)
    xs, ys, xt, yt = _load_data(args)
    model, accuracy = train(config, xs, ys, xt, yt)
    save_checkpoint(model, args.out, meta={"accuracy": accuracy,
                                           "dataset": args.dataset,
                                           "epochs": args.epochs,
                                           "seed": args.seed})
    print(f"final test accuracy: {accuracy * 100:.2f}%  (checkpoint: {args.out})")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    xs, ys, xt, yt = _load_data(args)
    print(f"test accuracy: {evaluate(model, xt, yt) * 100:.2f}%")
    return 0


def cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    scales = export(model, bits=args.bits, out_path=args.out, net_out=args.net_out)
    print(f"wrote {args.out}" + (f" and {args.net_out}" if args.net_out else ""))
    for name, scale in scales.items():
        print(f"  {name}: scale {scale:.6e}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tinytrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download the MNIST archives")
    p.add_argument("--data-dir", default="mnist-data")
    p.set_defaults(func=cmd_fetch)

    for name, fn in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--data-dir", default="mnist-data")
        p.add_argument("--dataset", choices=("mnist", "digits"), default="mnist",
                       help="digits = bundled offline stand-in corpus")
        p.add_argument("--seed", type=int, default=0)
        if name == "train":
            p.add_argument("--arch", choices=("tinynet", "ffconv-tinynet"),
                           default="tinynet")
            p.add_argument("--epochs", type=int, default=100)
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--lr-decay", type=float, default=0.97)
            p.add_argument("--rank", type=int, default=None)
            p.add_argument("--init", choices=("svd", "random"), default="svd")
            p.add_argument("--source", default=None,
                           help="tinynet checkpoint for svd init")
            p.add_argument("--batch-size", type=int, default=256)
            p.add_argument("--out", default="checkpoint.pt")
        else:
            p.add_argument("--checkpoint", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("export", help="quantize and write engine files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--out", default="weights.bin")
    p.add_argument("--net-out", default=None,
                   help="also emit an engine network spec")
    p.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
