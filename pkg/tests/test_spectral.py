import numpy as np
import pytest

from relboltz.spectral import (
    DeflatedSolver,
    assemble_Bk,
    dispersion_solve,
    dispersion_vs_branches,
    expansion_validation,
    resolvent_R,
    transverse_frame,
)


class TestFourierMode:
    def test_k_zero_is_L(self, small_model):
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 0.0)
        assert np.array_equal(Bk.Bmat.real, small_model.mats.Lmat)
        assert np.abs(Bk.Bmat.imag).max() == 0.0

    def test_hermitian_part_is_L(self, small_model):
        for k in (0.3, 1.7):
            Bk = assemble_Bk(small_model.mats, small_model.streaming, k)
            herm = 0.5 * (Bk.Bmat + Bk.Bmat.conj().T)
            anti = 0.5 * (Bk.Bmat - Bk.Bmat.conj().T)
            assert np.abs(herm - small_model.mats.Lmat).max() < 1e-13
            assert np.abs(anti - (-1j * k * small_model.streaming.Vmat)).max() < 1e-13

    def test_contraction_numerical_abscissa(self, small_model):
        for k in np.linspace(0.0, 2.0, 7):
            Bk = assemble_Bk(small_model.mats, small_model.streaming, k)
            herm = 0.5 * (Bk.Bmat + Bk.Bmat.conj().T)
            assert np.linalg.eigvalsh(herm).max() <= 1e-8


class TestBranches:
    def test_zero_at_origin(self, small_model):
        table = small_model.branches
        assert np.abs(table.lam[:, 0]).max() == 0.0

    def test_decay_for_positive_k(self, small_model):
        table = small_model.branches
        assert (table.lam[:, 1:].real < 0).all()

    def test_conjugate_pair(self, small_model):
        table = small_model.branches
        lam1 = table.branch(1)
        lamm1 = table.branch(-1)
        assert np.abs(lamm1 - np.conj(lam1)).max() < 1e-8

    def test_shear_degeneracy(self, small_model):
        table = small_model.branches
        assert np.abs(table.branch(2) - table.branch(3)).max() < 1e-8

    def test_five_branch_completeness(self, small_model):
        table = small_model.branches
        inside = table.kgrid <= table.tau0
        assert (table.count_above[inside][1:] == 5).all()
        # the sixth eigenvalue stays below -muhat/2 by a clear margin
        assert np.nanmax(table.sixth_re[inside][1:]) < -table.mu_hat / 2

    def test_overlap_quality(self, small_model):
        assert small_model.branches.min_overlap > 0.8

    def test_beyond_fluid_regime_all_damped(self, small_model):
        # at 2 * tau0-characteristic wavenumber the whole spectrum decays
        k_char = small_model.branches.tau0
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 2.0 * k_char)
        lam = np.linalg.eigvals(Bk.Bmat)
        d_hat = -lam.real.max()
        assert d_hat > 0


class TestPerturbation:
    def test_E_orthonormal(self, small_model):
        E = small_model.pert.E
        assert np.abs(E @ E.T - np.eye(5)).max() < 1e-12

    def test_sound_speeds(self, small_model):
        pert = small_model.pert
        c = small_model.consts.sound_speed
        assert pert.u[0] == pytest.approx(c, rel=1e-14)
        assert pert.u[1] == 0.0
        assert pert.u[2] == pytest.approx(-c, rel=1e-14)

    def test_A_negative_and_shear_degenerate(self, small_model):
        A = small_model.pert.A
        assert (A < 0).all()
        assert A[3] == pytest.approx(A[4], rel=1e-12)
        assert A[0] == pytest.approx(A[2], rel=1e-10)  # acoustic pair

    def test_A_independent_of_axis(self, small_model):
        # v_hat.omega couples |m| up to 2 for a tilted axis, so the check
        # runs on a widened-m basis built from the same radial L blocks
        from relboltz.config import BasisConfig
        from relboltz.galerkin import (
            build_basis,
            expand_symmetric_operator,
            radial_blocks,
            streaming_matrix,
        )
        from relboltz.maxwellian import null_space_basis
        from relboltz.spectral import perturbation_coefficients

        cfg = small_model.config.basis
        wide = build_basis(BasisConfig(n_radial=cfg.n_radial, l_max=cfg.l_max, m_max=2),
                           small_model.quad)
        Lw = expand_symmetric_operator(radial_blocks(small_model.mats.Lmat,
                                                     small_model.basis), wide)
        import dataclasses

        mats_w = dataclasses.replace(small_model.mats, Lmat=Lw,
                                     Nmat=np.zeros_like(Lw))
        psi_w = null_space_basis(small_model.moments, wide)
        As = []
        for axis in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]),
                     np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)):
            stream = streaming_matrix(wide, axis, small_model.quad)
            pert = perturbation_coefficients(mats_w, psi_w, small_model.consts, stream)
            As.append(pert.A)
        As = np.stack(As)
        assert np.abs(As - As[0]).max() < 1e-8
        assert np.abs(As[0] - small_model.pert.A).max() < 1e-8

    def test_mixing_diagonal_vanishes(self, small_model):
        assert np.abs(np.diag(small_model.pert.bcoef)).max() == 0.0

    def test_transverse_frame(self):
        w2, w3 = transverse_frame(np.array([0.0, 0.0, 1.0]))
        assert abs(w2 @ w3) < 1e-15
        assert abs(w2 @ np.array([0, 0, 1.0])) < 1e-15
        assert abs(np.linalg.norm(w2) - 1) < 1e-15


class TestResolvent:
    @pytest.fixture()
    def solver(self, small_model):
        return DeflatedSolver(small_model.mats, small_model.psi,
                              small_model.streaming.Vmat)

    def test_R44_at_origin_matches_A2(self, small_model, solver):
        val = resolvent_R(0.0 + 0.0j, 0.0, 4, 4, small_model.mats,
                          small_model.streaming, small_model.pert, solver)
        assert abs(val.imag) < 1e-14
        assert val.real < 0
        assert val.real == pytest.approx(small_model.pert.A[3], rel=1e-12)

    def test_structural_zeros(self, small_model, solver):
        for i in (0, 1, 2):
            for j in (3, 4):
                v1 = resolvent_R(0.05 + 0.01j, 0.4, i, j, small_model.mats,
                                 small_model.streaming, small_model.pert, solver)
                v2 = resolvent_R(0.05 + 0.01j, 0.4, j, i, small_model.mats,
                                 small_model.streaming, small_model.pert, solver)
                assert abs(v1) < 1e-10 and abs(v2) < 1e-10
        v34 = resolvent_R(0.05 + 0.01j, 0.4, 3, 4, small_model.mats,
                          small_model.streaming, small_model.pert, solver)
        assert abs(v34) < 1e-10

    def test_shear_diagonal_equality(self, small_model, solver):
        v33 = resolvent_R(0.02 + 0.0j, 0.7, 3, 3, small_model.mats,
                          small_model.streaming, small_model.pert, solver)
        v44 = resolvent_R(0.02 + 0.0j, 0.7, 4, 4, small_model.mats,
                          small_model.streaming, small_model.pert, solver)
        assert abs(v33 - v44) < 1e-10

    def test_precondition_enforced(self, small_model, solver):
        from relboltz.errors import SingularSolve

        mu = small_model.mats.muhat
        with pytest.raises(SingularSolve):
            solver.solve_shifted(1.0, complex(-2.0 * mu, 0.0),
                                 np.ones(small_model.basis.dim))


@pytest.fixture(scope="module")
def disp(small_model):
    sgrid = small_model.branches.kgrid[:21]
    return dispersion_solve(sgrid, small_model.mats, small_model.streaming,
                            small_model.pert, small_model.psi)


class TestDispersion:
    def test_residuals(self, disp):
        assert disp.residual.max() <= 1e-10

    def test_seeds_at_origin(self, disp, small_model):
        c = small_model.consts.sound_speed
        assert disp.beta[0, 0] == pytest.approx(-1j * c, abs=1e-14)
        assert disp.beta[1, 0] == 0.0
        assert disp.beta[2, 0] == pytest.approx(1j * c, abs=1e-14)
        assert disp.beta[3, 0] == 0.0

    def test_matches_eigensolve(self, disp, small_model):
        assert dispersion_vs_branches(disp, small_model.branches) <= 1e-6

    def test_D1_factorization_at_s0(self, small_model):
        from relboltz.spectral import _Dispersion

        solver = DeflatedSolver(small_model.mats, small_model.psi,
                                small_model.streaming.Vmat)
        dd = _Dispersion(small_model.mats, small_model.streaming,
                         small_model.pert, solver)
        u = dd.u
        for beta in (0.1 + 0.2j, -0.05 + 0.6j, 0.3 - 0.4j):
            lhs = dd.D1(beta, 0.0)
            rhs = (beta + 1j * u[0]) * (beta + 1j * u[1]) * (beta + 1j * u[2])
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_branch_omega_independence(small_model):
    """The branch eigenvalues depend on |k| only: compare two axes on the
    full-m widened basis (the |m| <= 1 sector is not rotation closed)."""
    from relboltz.pipeline import expanded_spectrum

    from scipy.optimize import linear_sum_assignment

    mu = small_model.mats.muhat
    for k in (0.5, 4.0):
        tops = []
        for axis in (np.array([0.0, 0.0, 1.0]),
                     np.array([0.6, -0.8, 0.0]),
                     np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)):
            spec = expanded_spectrum(small_model, np.array([k]), axis=axis)[0]
            five = spec[spec.real > -mu / 2.0]
            assert five.size == 5
            tops.append(five)
        for other in tops[1:]:
            dist = np.abs(tops[0][:, None] - other[None, :])
            rows, cols = linear_sum_assignment(dist)
            assert dist[rows, cols].max() < 1e-8


class TestExpansion:
    def test_validation_report(self, small_model):
        rep = expansion_validation(small_model.branches, small_model.pert)
        assert rep.first_order_max_rel < 0.02
        assert rep.second_order_max_rel < 0.05
        assert rep.min_residual_order >= 2.5
        assert rep.min_evec_order >= 1.5

    def test_recovered_coefficients_per_branch(self, small_model):
        rep = expansion_validation(small_model.branches, small_model.pert)
        c = small_model.consts.sound_speed
        by_label = {f.label: f for f in rep.fits}
        assert by_label[1].c1.imag == pytest.approx(c, rel=0.02)
        assert by_label[-1].c1.imag == pytest.approx(-c, rel=0.02)
        for lab in (0, 2, 3):
            assert abs(by_label[lab].c1) <= 0.02 * c
        for lab in (-1, 0, 1, 2, 3):
            f = by_label[lab]
            assert f.c2.real == pytest.approx(f.c2_target, rel=0.05)
