#!/usr/bin/env python3
"""Run the baseline field-estimation experiment (RMSE over time).

Uses the case-study defaults: 7.44 m^2 domain, ~900-vertex truth grid at
1 s steps, ~100-node estimator grid at 0.1 Hz, 5 random binary sensors,
noise variance 0.25. Writes rmse_time.csv and run_manifest.json.
"""

import argparse
import sys

from binmhe.cli import main as binmhe_main

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="scenario config file")
    parser.add_argument("--out", default="out/baseline")
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    argv = ["run", "--out", args.out, "--runs", str(args.runs),
            "--seed", str(args.seed)]
    if args.config:
        argv += ["--config", args.config]
    sys.exit(binmhe_main(argv))
