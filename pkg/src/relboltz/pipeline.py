"""End-to-end orchestration: moments -> basis -> assembly -> spectrum.

`Model` bundles everything the spectral and semigroup stages need; the CLI
and the test suite both build it the same way, so results are identical
across entry points for a given configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionMatrices, ScatteringKernel, assemble_L, spectral_gap
from .config import BasisConfig, RunConfig
from .galerkin import (
    GalerkinBasis,
    Projectors,
    StreamingMatrix,
    build_basis,
    build_projectors,
    expand_symmetric_operator,
    radial_blocks,
    streaming_matrix,
)
from .maxwellian import (
    FluidConstants,
    MaxwellianMoments,
    NullSpaceBasis,
    compute_moments,
    fluid_constants,
    null_space_basis,
)
from .quadrature import QuadratureSet
from .spectral import (
    DeflatedSolver,
    EigenBranchTable,
    PerturbationData,
    eigen_branches,
    perturbation_coefficients,
)

POLAR_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass
class Model:
    config: RunConfig
    quad: QuadratureSet
    basis: GalerkinBasis
    moments: MaxwellianMoments
    psi: NullSpaceBasis
    consts: FluidConstants
    projectors: Projectors
    streaming: StreamingMatrix
    mats: CollisionMatrices
    deflated: DeflatedSolver
    pert: PerturbationData
    branches: EigenBranchTable | None = None
    timings: dict = field(default_factory=dict)

    def m0_block(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(L, V, indices) restricted to the m = 0 angular sector."""
        sector = self.basis.m_sector(0)
        L0 = self.mats.Lmat[np.ix_(sector, sector)]
        V0 = self.streaming.Vmat[np.ix_(sector, sector)]
        return L0, V0, sector

    def kgrid(self) -> np.ndarray:
        spec = self.config.spectrum
        return np.linspace(0.0, spec.k_max, spec.k_points)


def quadrature_from_config(config: RunConfig) -> QuadratureSet:
    q = config.quadrature
    return QuadratureSet(r_max=q.r_max, n_radial=q.n_radial_nodes, n_theta=q.n_theta,
                         n_phi=q.n_phi, qmc_samples=q.qmc_samples, seed=q.seed)


def _build_frame(config: RunConfig):
    """The assembly-independent part of the pipeline."""
    config.validate()
    quad = quadrature_from_config(config)
    basis = build_basis(config.basis, quad, gram_tol=config.tol("orthonormality"))
    moments = compute_moments(quad, rtol=config.tol("moments_rtol"))
    psi = null_space_basis(moments, basis, ortho_tol=config.tol("orthonormality"))
    consts = fluid_constants(basis, psi, quad, moments)
    projectors = build_projectors(psi.psi)
    streaming = streaming_matrix(basis, POLAR_AXIS, quad)
    return quad, basis, moments, psi, consts, projectors, streaming


def _finish_model(config, frame, mats, timings) -> Model:
    quad, basis, moments, psi, consts, projectors, streaming = frame
    t0 = time.perf_counter()
    spectral_gap(mats, psi)
    timings["gap"] = time.perf_counter() - t0
    solver = DeflatedSolver(mats, psi, streaming.Vmat)
    pert = perturbation_coefficients(mats, psi, consts, streaming, solver)
    return Model(config=config, quad=quad, basis=basis, moments=moments, psi=psi,
                 consts=consts, projectors=projectors, streaming=streaming, mats=mats,
                 deflated=solver, pert=pert, timings=timings)


def build_model(config: RunConfig, check_tolerance: bool = True) -> Model:
    """Run the assembly pipeline for a configuration."""
    timings = {}
    t0 = time.perf_counter()
    frame = _build_frame(config)
    timings["setup"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    kernel = ScatteringKernel.from_config(config.kernel)
    mats = assemble_L(frame[1], kernel, frame[0],
                      assembly_rtol=config.tol("assembly_rtol"),
                      check_tolerance=check_tolerance)
    timings["assembly"] = time.perf_counter() - t0
    return _finish_model(config, frame, mats, timings)


def model_with_matrices(config: RunConfig, Lmat: np.ndarray, Nmat: np.ndarray,
                        qmc_error: float = float("nan")) -> Model:
    """Rebuild a model around matrices loaded from containers."""
    frame = _build_frame(config)
    basis = frame[1]
    if Lmat.shape != (basis.dim, basis.dim):
        raise ValueError(f"loaded matrix dim {Lmat.shape} does not match basis dim {basis.dim}")
    kernel = ScatteringKernel.from_config(config.kernel)
    from .collision import nu_envelope_fit

    c0, c1, _, _ = nu_envelope_fit(kernel, frame[0])
    mats = CollisionMatrices(Nmat=Nmat, Lmat=Lmat, c0hat=c0, c1hat=c1, muhat=np.nan,
                             qmc_error=qmc_error, seed=config.quadrature.seed,
                             kernel=kernel)
    return _finish_model(config, frame, mats, {})


def compute_branches(model: Model) -> EigenBranchTable:
    t0 = time.perf_counter()
    table = eigen_branches(model.kgrid(), model.mats, model.streaming, model.pert,
                           overlap_min=model.config.tol("branch_overlap_min"))
    model.timings["branches"] = time.perf_counter() - t0
    model.branches = table
    return table


def expanded_spectrum(model: Model, k_values: np.ndarray, m_max: int | None = None,
                      axis: np.ndarray = POLAR_AXIS) -> list[np.ndarray]:
    """Full spectra of B(k) on a basis widened to |m| <= m_max.

    The collision blocks depend only on l, so the widened L is synthesized
    from the already-assembled radial blocks; V is re-assembled exactly for
    the requested axis.  Used for five-branch completeness and rotation
    invariance checks that the |m| <= 1 production basis cannot see.
    """
    m_max = model.config.basis.l_max if m_max is None else m_max
    wide_cfg = BasisConfig(n_radial=model.config.basis.n_radial,
                           l_max=model.config.basis.l_max, m_max=m_max)
    wide = build_basis(wide_cfg, model.quad)
    blocks = radial_blocks(model.mats.Lmat, model.basis)
    Lwide = expand_symmetric_operator(blocks, wide)
    Vwide = streaming_matrix(wide, axis, model.quad).Vmat
    out = []
    for k in k_values:
        out.append(np.linalg.eigvals(Lwide - 1j * k * Vwide))
    return out
