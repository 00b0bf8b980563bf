"""Batch driver: moments | assemble | spectrum | dispersion | decay | report.

Stage contracts
---------------
* every stage reads one JSON config (--config; defaults apply when omitted)
  and writes into --out (or config.output_dir, overridable by the
  RELBOLTZ_OUT environment variable);
* spectrum/dispersion/decay reuse matrices produced by a prior `assemble`
  when the manifest's config hash matches, otherwise they assemble on
  demand;
* data files (containers, CSV) are byte-deterministic for a fixed config;
  manifests carry the timestamps and checksums;
* exit codes: 1 config error, 2 moments tolerance, 3 assembly tolerance,
  4 spectrum/dispersion failure, 5 decay failure.  Machine-readable
  failure reasons land in errors.json.

Numerical modules are imported lazily so --threads can pin the BLAS pool
size through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import ConfigError, RunConfig, load_config

EXIT_CONFIG = 1
EXIT_MOMENTS = 2
EXIT_ASSEMBLY = 3
EXIT_SPECTRUM = 4
EXIT_DECAY = 5

_STAGE_RTOL = {"moments": "moments_rtol", "assemble": "assembly_rtol"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relboltz",
                                description="spectral toolkit for the linearized "
                                            "relativistic Boltzmann operator")
    p.add_argument("command", choices=["moments", "assemble", "spectrum",
                                       "dispersion", "decay", "report"])
    p.add_argument("--config", help="path to a JSON run configuration")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="override quadrature seed (u64)")
    p.add_argument("--threads", type=int, default=0,
                   help="BLAS thread count, 0 = library default")
    p.add_argument("--rtol", type=float,
                   help="override the stage's primary tolerance")
    p.add_argument("--scenario", choices=["generic", "microscopic"],
                   help="decay scenario (decay stage only)")
    return p


def _resolve_config(args) -> tuple[RunConfig, str]:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        if not (0 <= args.seed < 2**64):
            raise ConfigError("--seed must be an unsigned 64-bit value")
        cfg = dataclasses.replace(
            cfg, quadrature=dataclasses.replace(cfg.quadrature, seed=args.seed))
    if args.rtol is not None:
        name = _STAGE_RTOL.get(args.command)
        if name is not None:
            tols = dict(cfg.tolerances)
            tols[name] = float(args.rtol)
            cfg = dataclasses.replace(cfg, tolerances=tols)
    if args.scenario is not None:
        cfg = dataclasses.replace(
            cfg, decay=dataclasses.replace(cfg.decay, scenario=args.scenario))
    outdir = args.out or os.environ.get("RELBOLTZ_OUT") or cfg.output_dir
    cfg.validate()
    return cfg, outdir


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg, outdir = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(outdir, exist_ok=True)
    handler = {
        "moments": cmd_moments,
        "assemble": cmd_assemble,
        "spectrum": cmd_spectrum,
        "dispersion": cmd_dispersion,
        "decay": cmd_decay,
        "report": cmd_report,
    }[args.command]
    return handler(cfg, outdir)


# ---------------------------------------------------------------------------


def cmd_moments(cfg: RunConfig, outdir: str) -> int:
    from scipy.special import kv

    from . import io
    from .errors import ToolkitError
    from .maxwellian import compute_moments, fluid_constants, null_space_basis
    from .galerkin import build_basis
    from .pipeline import quadrature_from_config

    try:
        quad = quadrature_from_config(cfg)
        moments = compute_moments(quad, rtol=cfg.tol("moments_rtol"))
        basis = build_basis(cfg.basis, quad, gram_tol=cfg.tol("orthonormality"))
        psi = null_space_basis(moments, basis, ortho_tol=cfg.tol("orthonormality"))
        consts = fluid_constants(basis, psi, quad, moments)
    except ToolkitError as exc:
        io.write_errors(outdir, "moments", EXIT_MOMENTS, type(exc).__name__, str(exc))
        print(f"moments failed: {exc}", file=sys.stderr)
        return EXIT_MOMENTS
    import numpy as np

    p0_ref = float(4.0 * np.pi * kv(2, 1.0))
    p2_ref = float(4.0 * np.pi * (kv(2, 1.0) + 0.5 * (kv(1, 1.0) + kv(3, 1.0))))
    payload = {
        "p0": moments.p0, "p1": moments.p1, "p2": moments.p2, "p3": moments.p3,
        "v0_mean": moments.v0_mean,
        "a": consts.a, "b": consts.b, "sound_speed": consts.sound_speed,
        "oracle_deltas": {
            "p0_vs_bessel": abs(moments.p0 - p0_ref) / p0_ref,
            "p2_vs_bessel": abs(moments.p2 - p2_ref) / p2_ref,
        },
    }
    path = os.path.join(outdir, "moments.json")
    io.write_json(path, payload)
    io.write_manifest(os.path.join(outdir, "manifest-moments.json"), "moments",
                      cfg.config_hash(), [path])
    print(f"moments written to {path}")
    return 0


def _matrix_paths(outdir: str) -> dict[str, str]:
    return {name: os.path.join(outdir, f"{name}.rbsm") for name in ("L", "N", "V", "P0")}


def _load_or_build_model(cfg: RunConfig, outdir: str):
    """Reuse matrices from a prior assemble when the config hash matches."""
    from . import io
    from .pipeline import build_model, model_with_matrices

    paths = _matrix_paths(outdir)
    manifest_path = os.path.join(outdir, "manifest-assemble.json")
    if os.path.exists(manifest_path) and all(os.path.exists(p) for p in paths.values()):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        stored = manifest.get("extra", {}).get("assembly_hash", manifest.get("config_hash"))
        if stored == cfg.assembly_hash():
            Lmat, _ = io.read_matrix(paths["L"])
            Nmat, _ = io.read_matrix(paths["N"])
            qmc_error = manifest.get("extra", {}).get("qmc_error", float("nan"))
            return model_with_matrices(cfg, Lmat, Nmat, qmc_error)
    return build_model(cfg)


def cmd_assemble(cfg: RunConfig, outdir: str) -> int:
    from . import io
    from .errors import ToolkitError
    from .pipeline import build_model

    try:
        model = build_model(cfg)
    except ToolkitError as exc:
        io.write_errors(outdir, "assemble", EXIT_ASSEMBLY, type(exc).__name__, str(exc))
        print(f"assembly failed: {exc}", file=sys.stderr)
        return EXIT_ASSEMBLY
    paths = _matrix_paths(outdir)
    kid = cfg.kernel.form_id
    seed = cfg.quadrature.seed
    io.write_matrix(paths["L"], model.mats.Lmat, seed=seed, kernel_id=kid)
    io.write_matrix(paths["N"], model.mats.Nmat, seed=seed, kernel_id=kid)
    io.write_matrix(paths["V"], model.streaming.Vmat, seed=seed, kernel_id=kid)
    io.write_matrix(paths["P0"], model.projectors.P0, seed=seed, kernel_id=kid)
    basis_path = os.path.join(outdir, "basis.json")
    io.write_json(basis_path, {
        "dim": model.basis.dim,
        "indices": [[ix.n, ix.l, ix.m] for ix in model.basis.indices],
        "radial_recurrences": {
            str(l): {"alpha": list(map(float, fam.alpha)),
                     "beta": list(map(float, fam.beta)),
                     "norm0": float(fam.norm0)}
            for l, fam in model.basis.families.items()},
        "r_max": model.quad.r_max,
    })
    io.write_manifest(os.path.join(outdir, "manifest-assemble.json"), "assemble",
                      cfg.config_hash(), list(paths.values()) + [basis_path],
                      extra={"qmc_error": model.mats.qmc_error,
                             "mu_hat": model.mats.muhat,
                             "c0hat": model.mats.c0hat, "c1hat": model.mats.c1hat,
                             "assembly_hash": cfg.assembly_hash(),
                             "timings": model.timings})
    print(f"assembled dim={model.basis.dim}, mu_hat={model.mats.muhat:.4f}, "
          f"qmc_error={model.mats.qmc_error:.2e}")
    return 0


def cmd_spectrum(cfg: RunConfig, outdir: str) -> int:
    import numpy as np

    from . import io
    from .errors import ToolkitError
    from .pipeline import compute_branches
    from .spectral import expansion_validation

    try:
        model = _load_or_build_model(cfg, outdir)
        table = compute_branches(model)
        report = expansion_validation(table, model.pert,
                                      order_min=cfg.tol("residual_order_min"))
    except ToolkitError as exc:
        io.write_errors(outdir, "spectrum", EXIT_SPECTRUM, type(exc).__name__, str(exc))
        print(f"spectrum failed: {exc}", file=sys.stderr)
        return EXIT_SPECTRUM
    rows = []
    for row, label in enumerate(table.labels):
        for ik, k in enumerate(table.kgrid):
            lam = table.lam[row, ik]
            rows.append([k, label, lam.real, lam.imag, table.resid[row, ik]])
    branches_path = os.path.join(outdir, "branches.csv")
    io.write_csv(branches_path, ["k", "branch", "re_lambda", "im_lambda", "residual"], rows)
    spec_path = os.path.join(outdir, "spectrum.json")
    io.write_json(spec_path, {
        "mu_hat": model.mats.muhat,
        "tau0": table.tau0,
        "min_overlap": table.min_overlap,
        "count_above": [int(c) for c in table.count_above],
        "max_branch_residual": float(table.resid.max()),
        "conj_pair_dev": float(np.abs(table.lam[table.labels.index(-1)]
                                      - np.conj(table.lam[table.labels.index(1)])).max()),
        "shear_degeneracy_dev": float(np.abs(table.lam[table.labels.index(2)]
                                             - table.lam[table.labels.index(3)]).max()),
        "max_re_positive_k": float(table.lam[:, 1:].real.max()),
        "expansion": {
            "first_order_max_rel": report.first_order_max_rel,
            "second_order_max_rel": report.second_order_max_rel,
            "min_residual_order": report.min_residual_order,
            "min_evec_order": report.min_evec_order,
            "branches": [{
                "label": f.label, "c1_re": f.c1.real, "c1_im": f.c1.imag,
                "c1_target_im": f.c1_target.imag, "c2_re": f.c2.real,
                "c2_target": f.c2_target, "residual_order": f.residual_order,
            } for f in report.fits],
        },
        "A": [float(x) for x in model.pert.A],
        "sound_speed": model.consts.sound_speed,
    })
    io.write_manifest(os.path.join(outdir, "manifest-spectrum.json"), "spectrum",
                      cfg.config_hash(), [branches_path, spec_path])
    print(f"spectrum written: tau0={table.tau0:.3g}, mu_hat={model.mats.muhat:.4f}")
    return 0


def cmd_dispersion(cfg: RunConfig, outdir: str) -> int:
    from . import io
    from .errors import ToolkitError
    from .pipeline import compute_branches
    from .spectral import dispersion_solve, dispersion_vs_branches

    try:
        model = _load_or_build_model(cfg, outdir)
        table = compute_branches(model)
        sel = model.kgrid() <= table.tau0
        sgrid = model.kgrid()[sel]
        disp = dispersion_solve(sgrid, model.mats, model.streaming, model.pert, model.psi,
                                residual_tol=cfg.tol("newton_residual"))
        mismatch = dispersion_vs_branches(disp, table)
        if mismatch > cfg.tol("dispersion_match_rtol"):
            raise ToolkitError(f"dispersion/eigensolve mismatch {mismatch:.2e} exceeds "
                               f"{cfg.tol('dispersion_match_rtol'):.0e}")
    except ToolkitError as exc:
        io.write_errors(outdir, "dispersion", EXIT_SPECTRUM, type(exc).__name__, str(exc))
        print(f"dispersion failed: {exc}", file=sys.stderr)
        return EXIT_SPECTRUM
    rows = []
    for row, label in enumerate(disp.labels):
        for isx, s in enumerate(disp.sgrid):
            beta = disp.beta[row, isx]
            rows.append([s, label, beta.real, beta.imag, disp.residual[row, isx]])
    disp_path = os.path.join(outdir, "dispersion.csv")
    io.write_csv(disp_path, ["s", "root", "re_beta", "im_beta", "residual"], rows)
    summary_path = os.path.join(outdir, "dispersion.json")
    io.write_json(summary_path, {
        "max_residual": float(disp.residual.max()),
        "max_mismatch_vs_eigensolve": mismatch,
        "n_points": int(disp.sgrid.size),
    })
    io.write_manifest(os.path.join(outdir, "manifest-dispersion.json"), "dispersion",
                      cfg.config_hash(), [disp_path, summary_path])
    print(f"dispersion written: max residual {disp.residual.max():.2e}, "
          f"mismatch {mismatch:.2e}")
    return 0


def cmd_decay(cfg: RunConfig, outdir: str) -> int:
    from . import io
    from .errors import ToolkitError
    from .pipeline import compute_branches
    from .semigroup import build_scenario, decay_experiment

    try:
        model = _load_or_build_model(cfg, outdir)
        table = compute_branches(model)
        scenario = build_scenario(cfg.decay.scenario, model, d0=cfg.decay.amplitude,
                                  k_support=cfg.decay.k_max if cfg.decay.k_max > 0 else table.tau0)
        series = decay_experiment(scenario, model, cfg.decay)
    except ToolkitError as exc:
        io.write_errors(outdir, "decay", EXIT_DECAY, type(exc).__name__, str(exc))
        print(f"decay failed: {exc}", file=sys.stderr)
        return EXIT_DECAY
    rows = []
    for name in sorted(series.norms):
        for it, t in enumerate(series.tgrid):
            rows.append([t, name, series.norms[name][it]])
    decay_path = os.path.join(outdir, "decay.csv")
    io.write_csv(decay_path, ["t", "observable", "norm"], rows)
    plot_paths = []
    for name in sorted(series.norms):
        p = os.path.join(outdir, f"decay_{series.scenario}_{name}.dat")
        io.write_csv(p, ["t", "norm"],
                     [[t, series.norms[name][it]] for it, t in enumerate(series.tgrid)])
        plot_paths.append(p)
    slopes_path = os.path.join(outdir, "slopes.json")
    io.write_json(slopes_path, {
        "scenario": series.scenario,
        "fit_window": list(series.fit_window),
        "n_k_nodes": series.n_k_nodes,
        "slopes": {name: {"slope": fit.slope, "ci": fit.ci,
                          "expected": series.expected[name]}
                   for name, fit in series.slopes.items()},
        "witnesses": {name: {"rate": w[0], "lower": w[1], "upper": w[2]}
                      for name, w in series.witnesses.items()},
    })
    # decay.csv / slopes.json always describe the most recent scenario; the
    # manifest is scenario-scoped so runs of both scenarios coexist
    io.write_manifest(os.path.join(outdir, f"manifest-decay-{series.scenario}.json"),
                      "decay", cfg.config_hash(), [decay_path, slopes_path] + plot_paths,
                      extra={"scenario": series.scenario})
    print(f"decay ({series.scenario}) written: "
          + ", ".join(f"{n}={series.slopes[n].slope:+.3f}"
                      for n in ("density", "micro")))
    return 0


def cmd_report(cfg: RunConfig, outdir: str) -> int:
    from . import io

    def load_entry(mpath: str, expected_hash: str):
        if not os.path.exists(mpath):
            return {"present": False}
        with open(mpath, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        entry = {"present": True,
                 "config_match": manifest.get("config_hash") == expected_hash,
                 "files": manifest.get("files", {})}
        if "extra" in manifest:
            entry["extra"] = manifest["extra"]
        return entry

    report = {"config_hash": cfg.config_hash(), "stages": {}}
    for stage in ("moments", "assemble", "spectrum", "dispersion"):
        report["stages"][stage] = load_entry(
            os.path.join(outdir, f"manifest-{stage}.json"), cfg.config_hash())
    # decay manifests are scenario-scoped; each is matched against the
    # configuration with that scenario selected
    decay = {"present": False, "scenarios": {}}
    for scenario in ("generic", "microscopic"):
        scen_cfg = dataclasses.replace(
            cfg, decay=dataclasses.replace(cfg.decay, scenario=scenario))
        entry = load_entry(os.path.join(outdir, f"manifest-decay-{scenario}.json"),
                           scen_cfg.config_hash())
        if entry["present"]:
            decay["present"] = True
            decay["scenarios"][scenario] = entry
    decay["config_match"] = all(e.get("config_match") for e in decay["scenarios"].values()) \
        if decay["scenarios"] else True
    report["stages"]["decay"] = decay
    path = os.path.join(outdir, "report.json")
    io.write_json(path, report)
    for stage, entry in report["stages"].items():
        mark = "ok" if entry.get("present") and entry.get("config_match", True) else "--"
        suffix = ""
        if stage == "decay" and entry.get("scenarios"):
            suffix = " (" + ", ".join(sorted(entry["scenarios"])) + ")"
        print(f"{stage:11s} {mark}{suffix}")
    print(f"report written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
