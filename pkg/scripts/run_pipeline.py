"""Drive the full desk-scale pipeline in one command.

Builds the bundled corpus, simulates a dataset, runs both MVDR variants,
and scores them, all through the same CLI entry points a shell user would
call, so this doubles as an end-to-end smoke test:

    python3 scripts/run_pipeline.py --out-dir runs/demo -n 10 --seed 101
"""

import argparse
import sys
from pathlib import Path

from beamlab.cli import main as beamlab


def run(argv):
    print("+ beamlab " + " ".join(argv), file=sys.stderr)
    rc = beamlab(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/demo")
    ap.add_argument("-n", "--n-scenes", type=int, default=10)
    ap.add_argument("--seed", type=int, default=101)
    ap.add_argument("--preset", choices=("random", "same-doa"), default="random")
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args()

    root = Path(args.out_dir)
    corpus = root / "corpus"
    data = root / "data"
    run(["make-corpus", "--out-dir", str(corpus), "--seed", "23"])
    run(["simulate", "-n", str(args.n_scenes), "--corpus", str(corpus),
         "--out-dir", str(data), "--seed", str(args.seed),
         "--preset", args.preset, "--jobs", str(args.jobs)])
    run(["beamform", "--dataset", str(data)])
    run(["evaluate", "--dataset", str(data),
         "--method-dir", str(data / "OracleMvdr"),
         "--method-dir", str(data / "EstimatedMvdr")])
    print(f"scores at {data / 'scores.csv'}", file=sys.stderr)


if __name__ == "__main__":
    main()
