#!/usr/bin/env python3
"""Print a compact portrait of the five eigenvalue branches.

Builds the model at a reduced resolution (fast), tracks the branches, and
tabulates lambda_j(k) against the second-order expansion
-i u_j k + A_j k^2, together with the dispersion-determinant roots.

    python scripts/branch_portrait.py [--n-radial 4] [--l-max 3] [--k-max 8]
"""

import argparse

import numpy as np

from relboltz.config import BasisConfig, QuadConfig, RunConfig, SpectrumConfig
from relboltz.pipeline import build_model, compute_branches
from relboltz.spectral import dispersion_solve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-radial", type=int, default=4)
    ap.add_argument("--l-max", type=int, default=3)
    ap.add_argument("--k-max", type=float, default=8.0)
    ap.add_argument("--samples", type=int, default=1 << 19)
    args = ap.parse_args()

    cfg = RunConfig(
        basis=BasisConfig(n_radial=args.n_radial, l_max=args.l_max),
        quadrature=QuadConfig(qmc_samples=args.samples, seed=20250801),
        spectrum=SpectrumConfig(k_max=args.k_max, k_points=41),
    )
    model = build_model(cfg)
    table = compute_branches(model)
    c = model.consts.sound_speed
    print(f"a = {model.consts.a:.6f}  b = {model.consts.b:.6f}  "
          f"sound speed = {c:.6f}")
    print(f"mu_hat = {model.mats.muhat:.4f}   tau0 = {table.tau0:.3g}")
    print(f"A_j (j = -1, 0, 1, 2, 3): {np.array2string(model.pert.A, precision=8)}")
    print()
    sgrid = table.kgrid[table.kgrid <= table.tau0][:12]
    disp = dispersion_solve(sgrid, model.mats, model.streaming, model.pert, model.psi)
    hdr = f"{'k':>6} | {'Re l_1':>12} {'Im l_1':>10} | {'pred Re':>12} {'pred Im':>10} | {'s*b_1 Re':>12}"
    print(hdr)
    print("-" * len(hdr))
    row1 = table.labels.index(1)
    for i, k in enumerate(sgrid):
        lam = table.lam[row1, np.argmin(abs(table.kgrid - k))]
        pred = -1j * model.pert.u[2] * k + model.pert.A[2] * k * k
        lam_disp = k * disp.beta[2, i]
        print(f"{k:6.2f} | {lam.real:12.4e} {lam.imag:10.5f} | "
              f"{pred.real:12.4e} {pred.imag:10.5f} | {lam_disp.real:12.4e}")


if __name__ == "__main__":
    main()
