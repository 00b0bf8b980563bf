"""Fourier-mode operator B(k) = L - i k (vhat.omega), its low-frequency
eigenvalue branches, perturbation coefficients, dispersion determinants.

The discrete B(k) is complex symmetric (L and V are real symmetric), so
its eigenvectors are orthogonal under the bilinear pairing x^T y, which is
exactly the normalization convention (e_j, conj(e_j)) = 1 used to build
the five-mode semigroup projection.  Degenerate clusters (the shear pair)
are handled through a small bilinear Gram solve rather than per-vector
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .collision import CollisionMatrices
from .errors import (
    BranchMatchingError,
    ClusterMiscount,
    DeflatedSolveFailure,
    NewtonDivergence,
    OrderCheckFailure,
    RootCollision,
    SingularSolve,
)
from .galerkin import StreamingMatrix
from .maxwellian import FluidConstants, NullSpaceBasis


@dataclass
class FourierModeOperator:
    kmag: float
    omega: np.ndarray
    Bmat: np.ndarray


def assemble_Bk(mats: CollisionMatrices, streaming: StreamingMatrix, kmag: float) -> FourierModeOperator:
    """B(k) = Lmat - i*kmag*Vmat for k = kmag * omega."""
    if kmag < 0:
        raise ValueError("kmag must be >= 0")
    B = mats.Lmat.astype(complex) - 1j * kmag * streaming.Vmat
    return FourierModeOperator(kmag=float(kmag), omega=streaming.axis.copy(), Bmat=B)


def transverse_frame(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal (W2, W3) completing omega to a frame."""
    omega = np.asarray(omega, dtype=float)
    pick = np.eye(3)[np.argmin(np.abs(omega))]
    w2 = pick - (pick @ omega) * omega
    w2 /= np.linalg.norm(w2)
    w3 = np.cross(omega, w2)
    return w2, w3


class DeflatedSolver:
    """Solves with L (or L - i k P1 V - z) restricted to span(psi)-perp."""

    def __init__(self, mats: CollisionMatrices, psi: NullSpaceBasis, Vmat: np.ndarray | None = None):
        self.Q1 = sla.null_space(psi.psi)
        self.Lr = self.Q1.T @ mats.Lmat @ self.Q1
        self.Lr = 0.5 * (self.Lr + self.Lr.T)
        self.Vr = None if Vmat is None else self.Q1.T @ Vmat @ self.Q1
        try:
            self._lu = sla.lu_factor(self.Lr)
        except sla.LinAlgError as exc:
            raise DeflatedSolveFailure("restricted L is singular") from exc
        self.muhat = float(-np.linalg.eigvalsh(self.Lr).max())

    def solve_L(self, y: np.ndarray) -> np.ndarray:
        """x = L^{-1} P1 y on the orthogonal complement of the null space."""
        yr = self.Q1.T @ y
        return self.Q1 @ sla.lu_solve(self._lu, yr)

    def solve_shifted(self, kmag: float, z: complex, y: np.ndarray) -> np.ndarray:
        """x with (L - i*kmag*P1 V P1 - z) x = P1 y, x in span(psi)-perp.

        y may be a (dim,) vector or a (dim, nrhs) block; one factorization
        serves all right-hand sides.
        """
        if self.Vr is None:
            raise DeflatedSolveFailure("solver built without a streaming matrix")
        if z.real <= -self.muhat:
            raise SingularSolve(
                f"shift Re(z)={z.real:.3e} is not above -muhat={-self.muhat:.3e}")
        A = self.Lr.astype(complex) - 1j * kmag * self.Vr - z * np.eye(self.Lr.shape[0])
        try:
            xr = sla.solve(A, self.Q1.T @ y)
        except sla.LinAlgError as exc:
            raise SingularSolve(f"deflated solve singular at k={kmag}, z={z}") from exc
        return self.Q1 @ xr


@dataclass
class PerturbationData:
    """Zeroth/first-order eigen-data of the five fluid branches.

    Branch labels are j = -1, 0, 1, 2, 3 in that array order.  A[j] stores
    (L^{-1} P1 (vhat.omega) E_j, (vhat.omega) E_j), which is negative; the
    eigenvalues then expand as lambda_j = -i u_j |k| + A_j |k|^2 + O(k^3)
    with decaying real part.
    """

    omega: np.ndarray
    E: np.ndarray       # (5, dim)
    F: np.ndarray       # (5, dim), polar-axis variant
    A: np.ndarray       # (5,)
    bcoef: np.ndarray   # (3, 3) mixing coefficients for j, n in {-1, 0, 1}
    e1: np.ndarray      # (5, dim) complex first-order corrections
    B1: float
    B2: float
    W2: np.ndarray
    W3: np.ndarray
    u: np.ndarray       # (u_{-1}, u_0, u_1)

    @property
    def labels(self) -> tuple[int, ...]:
        return (-1, 0, 1, 2, 3)


def _fluid_vectors(psi: NullSpaceBasis, consts: FluidConstants, omega: np.ndarray,
                   w2: np.ndarray, w3: np.ndarray) -> np.ndarray:
    """The degenerate-perturbation eigenvectors E_{-1..3} for the axis omega."""
    c = consts.sound_speed
    B1 = consts.b / c
    B2 = consts.a / c
    om_psi = omega @ psi.psi_prime
    E = np.empty((5, psi.psi.shape[1]))
    E[0] = B1 / np.sqrt(2) * psi.row(0) + np.sqrt(0.5) * om_psi + B2 / np.sqrt(2) * psi.row(4)
    E[2] = B1 / np.sqrt(2) * psi.row(0) - np.sqrt(0.5) * om_psi + B2 / np.sqrt(2) * psi.row(4)
    E[1] = -B2 * psi.row(0) + B1 * psi.row(4)
    E[3] = w2 @ psi.psi_prime
    E[4] = w3 @ psi.psi_prime
    return E


def perturbation_coefficients(mats: CollisionMatrices, psi: NullSpaceBasis,
                              consts: FluidConstants, streaming: StreamingMatrix,
                              solver: DeflatedSolver | None = None) -> PerturbationData:
    """Second-order eigenvalue coefficients and first-order eigenvectors.

    A_j = (L^{-1} P1 V E_j, V E_j) via the deflated solve; the mixing
    coefficients b^j_n = (L^{-1} P1 V E_j, V E_n) / (i (u_n - u_j)) vanish
    on the diagonal, and

        e_{j,1} = sum_n b^j_n E_n + i L^{-1} P1 V E_j   (j = -1, 0, 1)
        e_{j,1} = i L^{-1} P1 V E_j                     (j = 2, 3).
    """
    omega = streaming.axis
    w2, w3 = transverse_frame(omega)
    E = _fluid_vectors(psi, consts, omega, w2, w3)
    F = _fluid_vectors(psi, consts, np.array([0.0, 0.0, 1.0]),
                       np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    solver = solver or DeflatedSolver(mats, psi, streaming.Vmat)
    V = streaming.Vmat
    VE = E @ V  # rows: V E_j
    Z = np.stack([solver.solve_L(VE[j]) for j in range(5)])  # L^{-1} P1 V E_j
    A = np.einsum("jd,jd->j", Z, VE)
    u_full = np.array([consts.u[0], consts.u[1], consts.u[2], 0.0, 0.0])
    bcoef = np.zeros((3, 3), dtype=complex)
    for j in range(3):
        for n in range(3):
            if n == j:
                continue
            bcoef[j, n] = (Z[j] @ VE[n]) / (1j * (u_full[n] - u_full[j]))
    e1 = np.zeros((5, E.shape[1]), dtype=complex)
    for j in range(3):
        e1[j] = bcoef[j] @ E[:3] + 1j * Z[j]
    for j in (3, 4):
        e1[j] = 1j * Z[j]
    c = consts.sound_speed
    return PerturbationData(omega=omega.copy(), E=E, F=F, A=A, bcoef=bcoef, e1=e1,
                            B1=consts.b / c, B2=consts.a / c, W2=w2, W3=w3,
                            u=consts.u.copy())


def resolvent_R(beta: complex, kmag: float, i: int, j: int,
                mats: CollisionMatrices, streaming: StreamingMatrix,
                pert: PerturbationData, solver: DeflatedSolver) -> complex:
    """R_ij(beta, |k|) = ((L - i|k| P1 V - |k| beta)^{-1} P1 V F_{i-1}, V F_{j-1}).

    Indices i, j run over 0..4 labeling the modes -1..3; the pairing is the
    bilinear one (the F rows are real).  Requires Re(|k| beta) > -muhat.
    """
    V = streaming.Vmat
    Fi = pert.F[i]
    Fj = pert.F[j]
    x = solver.solve_shifted(kmag, kmag * complex(beta), V @ Fi)
    return complex(x @ (V @ Fj))


# ---------------------------------------------------------------------------
# branch continuation


@dataclass
class EigenBranchTable:
    """Five tracked eigenvalue branches of B(k) over a k grid.

    lam[j, ik] and evec[j, ik] follow the label order (-1, 0, 1, 2, 3);
    eigenvectors carry the bilinear normalization e^T e = 1 with sign
    continued along the grid.  tau0 is the largest grid point up to which
    exactly five eigenvalues lie above -muhat/2; sixth_re tracks the
    sixth-largest real part.
    """

    kgrid: np.ndarray
    lam: np.ndarray
    evec: np.ndarray
    mu_hat: float
    tau0: float
    count_above: np.ndarray
    sixth_re: np.ndarray
    min_overlap: float
    resid: np.ndarray = field(default=None)
    defective: np.ndarray = field(default=None)

    @property
    def labels(self) -> tuple[int, ...]:
        return (-1, 0, 1, 2, 3)

    def branch(self, label: int) -> np.ndarray:
        return self.lam[self.labels.index(label)]


def eigen_branches(kgrid: np.ndarray, mats: CollisionMatrices, streaming: StreamingMatrix,
                   pert: PerturbationData, overlap_min: float = 0.8) -> EigenBranchTable:
    """Track the five branches continuing from the null space across kgrid.

    Dense eigensolve at each k; branch labels assigned by maximal-overlap
    assignment against the previous grid point (seeded by the E_j's at
    k = 0).  Raises when the assignment becomes ambiguous or when more than
    five eigenvalues sit above -muhat/2 below the measured tau0.
    """
    kgrid = np.asarray(kgrid, dtype=float)
    if kgrid[0] != 0.0:
        raise ValueError("kgrid must start at 0")
    dim = mats.Lmat.shape[0]
    mu = mats.muhat
    if not np.isfinite(mu) or mu <= 0:
        raise ClusterMiscount("spectral gap must be computed before branch tracking")
    nk = kgrid.size
    lam = np.zeros((5, nk), dtype=complex)
    evec = np.zeros((5, nk, dim), dtype=complex)
    count_above = np.zeros(nk, dtype=int)
    sixth_re = np.full(nk, -np.inf)
    resid = np.zeros((5, nk))
    defective = np.zeros((5, nk), dtype=bool)
    evec[:, 0, :] = pert.E.astype(complex)
    count_above[0] = 5
    prev = pert.E.astype(complex)
    min_overlap = 1.0
    for ik in range(1, nk):
        k = kgrid[ik]
        B = mats.Lmat - 1j * k * streaming.Vmat
        w, V = np.linalg.eig(B)
        order = np.argsort(-w.real)
        above = int(np.sum(w.real > -mu / 2.0))
        count_above[ik] = above
        if w.size > 5:
            sixth_re[ik] = float(w.real[order[5]])
        # candidates: ample cluster around the top to keep matching stable
        ncand = min(max(8, above), w.size)
        cand = order[:ncand]
        Vc = V[:, cand]
        Vc = Vc / np.linalg.norm(Vc, axis=0)
        overlap = np.abs(prev.conj() @ Vc)
        rows, cols = linear_sum_assignment(-overlap)
        chosen = np.empty(5, dtype=int)
        for r, ccol in zip(rows, cols):
            chosen[r] = cand[ccol]
        lam[:, ik] = w[chosen]
        vecs = V[:, chosen]
        # realign within degenerate clusters: the solver returns an
        # arbitrary basis of a repeated eigenvalue's eigenspace (the shear
        # pair), so rotate it toward the previous step before normalizing
        lam_sel = w[chosen]
        assigned = np.zeros(5, dtype=bool)
        for a in range(5):
            if assigned[a]:
                continue
            cluster = [a] + [b for b in range(a + 1, 5)
                             if abs(lam_sel[b] - lam_sel[a]) < 1e-8 * (1.0 + abs(lam_sel[a]))]
            assigned[cluster] = True
            if len(cluster) > 1:
                sub = vecs[:, cluster]
                target = prev[cluster].T
                T, *_ = np.linalg.lstsq(sub, target, rcond=None)
                vecs[:, cluster] = sub @ T
        # bilinear orthonormalization (Gram-Schmidt with x^T y) per step
        for a in range(5):
            va = vecs[:, a]
            for b in range(a):
                if abs(lam_sel[a] - lam_sel[b]) < 1e-8 * (1.0 + abs(lam_sel[a])):
                    va = va - (vecs[:, b] @ va) * vecs[:, b]
            bn = va @ va
            if abs(bn) < 1e-8:
                defective[a, ik] = True
                bn = va.conj() @ va
            vecs[:, a] = va / np.sqrt(bn)
        final_overlap = np.abs(np.einsum("jd,dj->j", prev.conj(),
                                         vecs / np.linalg.norm(vecs, axis=0)))
        if final_overlap.min() < overlap_min:
            r = int(np.argmin(final_overlap))
            raise BranchMatchingError(
                f"overlap {final_overlap[r]:.3f} < {overlap_min} at k={k:.4g} (branch {r})")
        min_overlap = min(min_overlap, float(final_overlap.min()))
        # sign continuation: bilinear normalization leaves a +-1 freedom
        sgn = np.sign(np.real(np.einsum("jd,dj->j", prev.conj(), vecs)))
        sgn = np.where(sgn == 0, 1.0, sgn)
        vecs = vecs * sgn[None, :]
        defect = B @ vecs - vecs * lam[:, ik][None, :]
        resid[:, ik] = np.linalg.norm(defect, axis=0) / np.linalg.norm(vecs, axis=0)
        evec[:, ik, :] = vecs.T
        prev = vecs.T
    # tau0: largest grid point with an unbroken run of exactly-five counts
    tau0 = kgrid[-1]
    for ik in range(1, nk):
        if count_above[ik] != 5:
            tau0 = kgrid[ik - 1]
            break
    bad = (kgrid <= tau0) & (count_above > 5)
    if bad.any():
        raise ClusterMiscount(f"more than five eigenvalues above -muhat/2 at k={kgrid[bad][0]:.4g}")
    return EigenBranchTable(kgrid=kgrid, lam=lam, evec=evec, mu_hat=mu, tau0=float(tau0),
                            count_above=count_above, sixth_re=sixth_re,
                            min_overlap=min_overlap, resid=resid, defective=defective)


# ---------------------------------------------------------------------------
# dispersion determinants


@dataclass
class DispersionResult:
    sgrid: np.ndarray
    beta: np.ndarray        # (4, ns): rows -1, 0, 1 from D1 and the D0 double root
    residual: np.ndarray    # (4, ns)
    labels: tuple = (-1, 0, 1, 2)   # the last row is the shear double root

    def lam(self, row: int) -> np.ndarray:
        return self.sgrid * self.beta[row]


class _Dispersion:
    def __init__(self, mats, streaming, pert, solver):
        self.mats = mats
        self.streaming = streaming
        self.pert = pert
        self.solver = solver
        self.u = np.array([pert.u[0], pert.u[1], pert.u[2]])
        V = streaming.Vmat
        # V F_{i-1} blocks: one factorization per (beta, s) serves all R_ij
        self.VF_fluid = np.stack([V @ pert.F[i] for i in range(3)], axis=1)
        self.VF_shear = V @ pert.F[3]

    def _R(self, beta, s, i, j):
        return resolvent_R(beta, s, i, j, self.mats, self.streaming, self.pert, self.solver)

    def D0(self, beta, s):
        x = self.solver.solve_shifted(s, s * complex(beta), self.VF_shear)
        return beta - s * (x @ self.VF_shear)

    def D1(self, beta, s):
        X = self.solver.solve_shifted(s, s * complex(beta), self.VF_fluid)
        R = X.T @ self.VF_fluid  # R[i, j] = R_{ij}
        M = np.diag(beta + 1j * self.u) - s * R.T
        return complex(np.linalg.det(M))


def _newton(f, beta0: complex, tol: float, max_iter: int = 50) -> tuple[complex, float]:
    beta = complex(beta0)
    val = f(beta)
    for _ in range(max_iter):
        if abs(val) <= tol:
            return beta, abs(val)
        h = 1e-7 * (1.0 + abs(beta))
        deriv = (f(beta + h) - f(beta - h)) / (2.0 * h)
        if deriv == 0:
            raise NewtonDivergence("zero derivative in Newton step")
        step = val / deriv
        # damped update: halve until the residual decreases
        lam_damp = 1.0
        for _ in range(25):
            cand = beta - lam_damp * step
            cval = f(cand)
            if abs(cval) < abs(val):
                beta, val = cand, cval
                break
            lam_damp *= 0.5
        else:
            raise NewtonDivergence(f"step damping exhausted at beta={beta}")
    if abs(val) <= tol:
        return beta, abs(val)
    raise NewtonDivergence(f"no convergence: residual {abs(val):.2e} > {tol:.0e}")


def dispersion_solve(sgrid: np.ndarray, mats: CollisionMatrices, streaming: StreamingMatrix,
                     pert: PerturbationData, psi: NullSpaceBasis,
                     residual_tol: float = 1e-10) -> DispersionResult:
    """Newton continuation of the roots of D0 and D1 along sgrid.

    Exact s = 0 seeds: beta_j = -i u_j for D1, beta = 0 for D0.  Converged
    roots are checked pairwise for collisions within 1e-12.
    """
    sgrid = np.asarray(sgrid, dtype=float)
    solver = DeflatedSolver(mats, psi, streaming.Vmat)
    disp = _Dispersion(mats, streaming, pert, solver)
    ns = sgrid.size
    beta = np.zeros((4, ns), dtype=complex)
    residual = np.zeros((4, ns))
    seeds = np.array([-1j * disp.u[0], -1j * disp.u[1], -1j * disp.u[2], 0.0], dtype=complex)
    current = seeds.copy()
    for isx, s in enumerate(sgrid):
        if s == 0.0:
            beta[:, isx] = seeds
            continue
        for row in range(4):
            f = (lambda b, s=s: disp.D1(b, s)) if row < 3 else (lambda b, s=s: disp.D0(b, s))
            root, res = _newton(f, current[row], residual_tol)
            beta[row, isx] = root
            residual[row, isx] = res
            current[row] = root
        d1roots = beta[:3, isx]
        for a in range(3):
            for b_ in range(a + 1, 3):
                if abs(d1roots[a] - d1roots[b_]) < 1e-12:
                    raise RootCollision(f"D1 roots {a} and {b_} collide at s={s:.4g}")
    return DispersionResult(sgrid=sgrid, beta=beta, residual=residual)


def dispersion_vs_branches(disp: DispersionResult, table: EigenBranchTable) -> float:
    """Max relative mismatch |s*beta - lambda| / |lambda| over shared grid points."""
    k_to_idx = {k: i for i, k in enumerate(table.kgrid)}
    worst = 0.0
    branch_rows = {0: table.labels.index(-1), 1: table.labels.index(0),
                   2: table.labels.index(1), 3: table.labels.index(2)}
    for isx, s in enumerate(disp.sgrid):
        if s == 0.0 or s not in k_to_idx:
            continue
        ik = k_to_idx[s]
        for row in range(4):
            lam_disp = s * disp.beta[row, isx]
            lam_eig = table.lam[branch_rows[row], ik]
            worst = max(worst, abs(lam_disp - lam_eig) / max(abs(lam_eig), 1e-300))
    return worst


# ---------------------------------------------------------------------------
# expansion validation


@dataclass
class BranchFit:
    label: int
    c1: complex
    c2: complex
    c1_target: complex
    c2_target: float
    residual_order: float
    evec_order: float


@dataclass
class ExpansionReport:
    fits: list[BranchFit]
    k_used: np.ndarray
    first_order_max_rel: float
    second_order_max_rel: float
    min_residual_order: float
    min_evec_order: float


def expansion_validation(table: EigenBranchTable, pert: PerturbationData,
                         k_fit_max: float | None = None, min_points: int = 6,
                         order_min: float = 2.5) -> ExpansionReport:
    """Fit the branch expansions and compare against perturbation theory.

    For each branch: least-squares fit lambda(k) ~ c1 k + c2 k^2 + c3 k^3
    over small grid points, compare c1 with -i u_j and c2 with A_j, and fit
    the order of the residual lambda - (-i u_j k + A_j k^2) in log-log.
    The eigenvector check fits || e_j(k) - (E_j + k e_{j,1}) || ~ k^order.
    """
    if k_fit_max is None:
        k_fit_max = table.tau0 / 4.0
    sel = (table.kgrid > 0) & (table.kgrid <= k_fit_max)
    if sel.sum() < min_points:
        raise OrderCheckFailure(
            f"need at least {min_points} grid points in (0, {k_fit_max:.3g}], have {int(sel.sum())}")
    ks = table.kgrid[sel]
    design = np.stack([ks, ks**2, ks**3], axis=1)
    u_full = np.array([pert.u[0], pert.u[1], pert.u[2], 0.0, 0.0])
    c = abs(pert.u[0])
    fits = []
    first_rel = 0.0
    second_rel = 0.0
    for row, label in enumerate(table.labels):
        lam = table.lam[row, sel]
        coef, *_ = np.linalg.lstsq(design, lam, rcond=None)
        c1, c2 = coef[0], coef[1]
        c1_target = -1j * u_full[row]
        resid = lam - (c1_target * ks + pert.A[row] * ks**2)
        mask = np.abs(resid) > 1e-14
        if mask.sum() >= 3:
            slope = np.polyfit(np.log(ks[mask]), np.log(np.abs(resid[mask])), 1)[0]
        else:
            slope = np.inf  # residual at rounding floor: order beyond resolution
        # eigenvector first-order check
        ev_err = np.array([
            np.linalg.norm(table.evec[row, ik] - (pert.E[row] + table.kgrid[ik] * pert.e1[row]))
            for ik in np.nonzero(sel)[0]
        ])
        emask = ev_err > 1e-13
        ev_order = (np.polyfit(np.log(ks[emask]), np.log(ev_err[emask]), 1)[0]
                    if emask.sum() >= 3 else np.inf)
        fits.append(BranchFit(label=label, c1=c1, c2=c2, c1_target=c1_target,
                              c2_target=float(pert.A[row]), residual_order=float(slope),
                              evec_order=float(ev_order)))
        first_rel = max(first_rel, abs(c1 - c1_target) / c)
        second_rel = max(second_rel, abs(c2 - pert.A[row]) / abs(pert.A[row]))
    min_order = min(f.residual_order for f in fits)
    min_ev = min(f.evec_order for f in fits)
    if min_order < order_min:
        raise OrderCheckFailure(f"fitted residual order {min_order:.2f} < {order_min}")
    return ExpansionReport(fits=fits, k_used=ks, first_order_max_rel=first_rel,
                           second_order_max_rel=second_rel, min_residual_order=min_order,
                           min_evec_order=min_ev)
