"""Command line: train a variant on an exported dataset, then write
enhanced WAVs for scoring.

    tsenet train --data runs/demo/data --variant rtf --epochs 60 --seed 3 --out runs/tse
    tsenet infer --data runs/demo/data --checkpoint runs/tse/checkpoint.pt --out runs/demo/data/TseRtf
"""

import argparse
import logging
import sys

from .infer import infer
from .model import NetConfig, VARIANTS
from .train import train


def main(argv=None):
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="tsenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train one enrollment variant")
    p.add_argument("--data", required=True, help="dataset directory with features/")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint + loss curve directory")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--crop-frames", type=int, default=128)
    p.add_argument("--mask-output", action="store_true",
                   help="complex-mask head instead of direct RI synthesis")

    p = sub.add_parser("infer", help="write enhanced WAVs from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--enrollment", choices=("direct", "swapped"), default="direct")

    args = parser.parse_args(argv)
    try:
        if args.subcommand == "train":
            cfg = NetConfig(mask_output=True) if args.mask_output else None
            path = train(args.data, args.variant, args.epochs, args.seed, args.out,
                         batch_size=args.batch_size, crop_frames=args.crop_frames,
                         cfg=cfg)
            print(path)
        else:
            infer(args.data, args.checkpoint, args.out, enrollment=args.enrollment)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        logging.getLogger(__name__).error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
