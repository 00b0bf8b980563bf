#!/usr/bin/env python3
"""Run the whole pipeline (moments -> assemble -> spectrum -> dispersion ->
decay for both scenarios -> report) for one configuration.

Usage:
    python scripts/run_pipeline.py [--config CONFIG.json] [--out DIR]

Without a config this runs the defaults, which take a few minutes for the
assembly and a few more for each decay scenario.
"""

import argparse
import sys
import time

from relboltz.cli import main as cli_main


def run(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    passthrough = []
    if args.config:
        passthrough += ["--config", args.config]
    if args.out:
        passthrough += ["--out", args.out]
    stages = (["moments"], ["assemble"], ["spectrum"], ["dispersion"],
              ["decay", "--scenario", "generic"],
              ["decay", "--scenario", "microscopic"],
              ["report"])
    for stage in stages:
        t0 = time.time()
        rc = cli_main(stage + passthrough)
        print(f"--- {' '.join(stage)}: exit {rc} ({time.time() - t0:.0f}s)")
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run())
