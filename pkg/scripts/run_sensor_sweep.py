#!/usr/bin/env python3
"""Sweep the number of deployed binary sensors.

Writes sweep_sensors.csv (l, mean_rmse, std_rmse) plus a manifest. Sweep
values come from the config key sensor_sweep_values.
"""

import argparse
import sys

from binmhe.cli import main as binmhe_main

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="scenario config file")
    parser.add_argument("--out", default="out/sensor_sweep")
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    argv = ["sweep-sensors", "--out", args.out, "--runs", str(args.runs),
            "--seed", str(args.seed)]
    if args.config:
        argv += ["--config", args.config]
    sys.exit(binmhe_main(argv))
