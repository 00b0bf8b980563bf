#!/usr/bin/env python3
"""Decay-rate study: fitted slopes and witness bounds for both scenarios.

    python scripts/decay_study.py [--n-radial 4] [--l-max 3]

Reduced resolution by default so the run finishes in well under a minute;
pass the production values (8, 7) for the full computation.
"""

import argparse

from relboltz.config import BasisConfig, QuadConfig, RunConfig, SpectrumConfig
from relboltz.pipeline import build_model, compute_branches
from relboltz.semigroup import build_scenario, decay_experiment_multi


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-radial", type=int, default=4)
    ap.add_argument("--l-max", type=int, default=3)
    ap.add_argument("--samples", type=int, default=1 << 19)
    args = ap.parse_args()
    cfg = RunConfig(
        basis=BasisConfig(n_radial=args.n_radial, l_max=args.l_max),
        quadrature=QuadConfig(qmc_samples=args.samples, seed=20250801),
        spectrum=SpectrumConfig(k_max=16.0, k_points=81),
    )
    model = build_model(cfg)
    table = compute_branches(model)
    scenarios = [build_scenario(sid, model, k_support=table.tau0)
                 for sid in ("generic", "microscopic")]
    results = decay_experiment_multi(scenarios, model, cfg.decay)
    for series in results:
        print(f"\n=== scenario: {series.scenario}  "
              f"({series.n_k_nodes} k-nodes, window {series.fit_window}) ===")
        print(f"{'observable':<14} {'slope':>8} {'expected':>9} {'ci':>7} "
              f"{'witness lo':>11} {'witness hi':>11}")
        for name in sorted(series.norms):
            fit = series.slopes[name]
            rate, lo, hi = series.witnesses[name]
            print(f"{name:<14} {fit.slope:8.3f} {series.expected[name]:9.2f} "
                  f"{fit.ci:7.3f} {lo:11.3e} {hi:11.3e}")


if __name__ == "__main__":
    main()
