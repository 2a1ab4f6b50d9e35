"""Sweep every model over the low-data training portions (2.5 to 10 %).

Uses full-size models and training settings, so expect hours on one core.
Shrink with --set (same syntax as the CLI), e.g. --set transformer.d_model=64.

    python3 scripts/portion_sweep.py --pulses 4000 --out runs/sweep
"""

import argparse
import sys

from grnppg.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--pulses", type=int, default=4000)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--models", default="knn,mlp,grn-mlp,transformer,grn-transformer")
    ap.add_argument("--set", action="append", default=[])
    a = ap.parse_args()
    overrides = [x for s in a.set for x in ("--set", s)]
    sys.exit(cli_main(["--out", a.out, *overrides, "compare", "--pulses", str(a.pulses),
                       "--models", a.models, "--seeds", a.seeds]))


if __name__ == "__main__":
    main()
