"""Symmetry-adapted velocity basis, projections, and the streaming operator.

Basis functions have the form

    phi_{n,l,m}(v) = r^l * p_n^{(l)}(v0) * Y_l^m(v/r) * sqrt(M(v)),

with r = |v|, v0 = sqrt(1+r^2), real spherical harmonics Y_l^m, and
p_n^{(l)} polynomials in v0 orthonormalized against the radial weight
r^{2l+2} e^{-v0}.  The scalar sector (l = 0) carries one extra radial
degree so that the five collision invariants {sqrt(M), v_j sqrt(M),
v0 sqrt(M)} are exactly representable at every resolution: they are the
first l=0 function, the three lowest l=1 functions and the second l=0
function, up to sign.

The discretization domain is the ball |v| <= r_max and the basis
functions vanish outside it.  Post-collision velocities can leave the
ball (their energy is bounded only by the pair energy); evaluating the
radial polynomials out there would put them far beyond their
orthogonality interval, where they are exponentially larger than any
in-ball value.  Zeroing instead discretizes the collision operator of the
truncated domain, which differs from the full one by O(e^{-r_max}) terms.

Because rotations act within fixed l (mixing m only), any rotation
invariant operator is block diagonal over (l, m) with radial blocks
independent of m; `rotation_symmetrize` is the orthogonal projection of a
matrix onto that commutant and is used to clean sampled assemblies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import BasisConfig
from .errors import RankDeficiency
from .quadrature import QuadratureSet


@dataclass(frozen=True)
class BasisIndex:
    n: int  # radial index
    l: int  # angular degree
    m: int  # angular order


def _legendre_all(x: np.ndarray, lmax: int) -> np.ndarray:
    out = np.zeros((lmax + 1,) + x.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = x
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * x * out[l] - l * out[l - 1]) / (l + 1)
    return out


def _pi_tables(x: np.ndarray, lmax: int, mmax: int) -> dict[int, np.ndarray]:
    """pi^m_l = P_l^m / sin^m(theta), polynomial in x = cos(theta).

    Returned as {m: array of shape (lmax+1,) + x.shape}; entries with
    l < m are zero.  These stay finite on the axis, where the sin^m factor
    is supplied separately through ((x+iy)/r)^m.
    """
    out = {0: _legendre_all(x, lmax)}
    for m in range(1, mmax + 1):
        tab = np.zeros((lmax + 1,) + x.shape)
        if m <= lmax:
            # pi^m_m = (2m-1)!!
            tab[m] = float(np.prod(np.arange(1, 2 * m, 2)))
            if m + 1 <= lmax:
                tab[m + 1] = (2 * m + 1) * x * tab[m]
            for l in range(m + 1, lmax):
                tab[l + 1] = ((2 * l + 1) * x * tab[l] - (l + m) * tab[l - 1]) / (l + 1 - m)
        out[m] = tab
    return out


def _azimuthal_powers(cx: np.ndarray, cy: np.ndarray, mmax: int):
    """Re and Im of ((x+iy)/r)^m for m = 0..mmax (the sin^m cos/sin pair)."""
    re = [np.ones_like(cx)]
    im = [np.zeros_like(cx)]
    for _ in range(mmax):
        re_new = re[-1] * cx - im[-1] * cy
        im_new = re[-1] * cy + im[-1] * cx
        re.append(re_new)
        im.append(im_new)
    return re, im


def _ylm_norm(l: int, m: int) -> float:
    from math import factorial

    if m == 0:
        return np.sqrt((2 * l + 1) / (4 * np.pi))
    return np.sqrt((2 * l + 1) / (2 * np.pi) * factorial(l - m) / factorial(l + m))


def real_sphharm(points: np.ndarray, lmax: int, mmax: int | None = None):
    """Real spherical harmonics Y_l^m at unit-sphere directions.

    Returns a dict (l, m) -> values for |m| <= mmax (default lmax), in the
    standard real convention: cos(m phi) for m > 0, sin(|m| phi) for m < 0.
    """
    mmax = lmax if mmax is None else mmax
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    pi_tab = _pi_tables(z, lmax, mmax)
    re, im = _azimuthal_powers(x, y, mmax)
    out = {}
    for l in range(lmax + 1):
        out[(l, 0)] = _ylm_norm(l, 0) * pi_tab[0][l]
        for m in range(1, min(l, mmax) + 1):
            norm = _ylm_norm(l, m)
            out[(l, m)] = norm * pi_tab[m][l] * re[m]
            out[(l, -m)] = norm * pi_tab[m][l] * im[m]
    return out


class RadialFamily:
    """Orthonormal polynomials in v0 for one angular degree l.

    Built by the Stieltjes procedure on a high-order radial Gauss rule;
    evaluation anywhere via the three-term recurrence.
    """

    def __init__(self, l: int, count: int, quad: QuadratureSet):
        r, wr = quad.radial_rule(max(2 * quad.n_radial, 400))
        t = np.sqrt(1.0 + r * r)
        w = wr * r ** (2 * l + 2) * np.exp(-t)
        alpha = np.zeros(count)
        beta = np.zeros(count)
        vals = np.zeros((count, r.size))
        norm0 = np.sqrt(np.sum(w))
        if not norm0 > 0:
            raise RankDeficiency(f"radial weight for l={l} has no mass")
        vals[0] = 1.0 / norm0
        for n in range(count - 1):
            alpha[n] = np.sum(w * t * vals[n] ** 2)
            q = t * vals[n] - alpha[n] * vals[n]
            if n > 0:
                q -= beta[n - 1] * vals[n - 1]
            beta[n] = np.sqrt(np.sum(w * q * q))
            if not beta[n] > 1e-300:
                raise RankDeficiency(f"radial family l={l} degenerate at degree {n + 1}")
            vals[n + 1] = q / beta[n]
        if count >= 1:
            alpha[count - 1] = np.sum(w * t * vals[count - 1] ** 2)
        self.l = l
        self.count = count
        self.alpha = alpha
        self.beta = beta
        self.norm0 = norm0

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Values p_n(t) for n < count; shape (count,) + t.shape."""
        out = np.zeros((self.count,) + t.shape)
        out[0] = 1.0 / self.norm0
        if self.count > 1:
            out[1] = (t - self.alpha[0]) * out[0] / self.beta[0]
        for n in range(1, self.count - 1):
            out[n + 1] = ((t - self.alpha[n]) * out[n] - self.beta[n - 1] * out[n - 1]) / self.beta[n]
        return out


@dataclass
class GalerkinBasis:
    """Orthonormal symmetry-adapted basis with its block structure."""

    config: BasisConfig
    quad: QuadratureSet
    indices: list[BasisIndex]
    families: dict[int, RadialFamily]
    gram: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.indices)

    def radial_count(self, l: int) -> int:
        return self.config.n_radial + 1 if l == 0 else self.config.n_radial

    def block_indices(self, l: int, m: int) -> list[int]:
        return [i for i, ix in enumerate(self.indices) if ix.l == l and ix.m == m]

    def m_sector(self, m: int) -> np.ndarray:
        return np.array([i for i, ix in enumerate(self.indices) if ix.m == m], dtype=int)

    def evaluate_chi(self, points: np.ndarray) -> np.ndarray:
        """phi_a / sqrt(M) at points (N, 3); returns (N, dim).

        chi is a polynomial-like smooth function (no exponential factor),
        which is what the collision-difference assembly needs.
        """
        pts = np.atleast_2d(points)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        r = np.sqrt(x * x + y * y + z * z)
        t = np.sqrt(1.0 + r * r)
        in_ball = r <= self.quad.r_max
        safe = np.where(r > 0, r, 1.0)
        ct = np.where(r > 0, z / safe, 1.0)
        cx = np.where(r > 0, x / safe, 0.0)
        cy = np.where(r > 0, y / safe, 0.0)
        lmax = self.config.l_max
        mmax = min(self.config.m_max, lmax)
        pi_tab = _pi_tables(ct, lmax, mmax)
        re, im = _azimuthal_powers(cx, cy, mmax)
        rad = {l: fam.evaluate(t) for l, fam in self.families.items()}
        rpow = {0: np.ones_like(r)}
        for l in range(1, lmax + 1):
            rpow[l] = rpow[l - 1] * r
        out = np.empty((pts.shape[0], self.dim))
        for a, ix in enumerate(self.indices):
            n, l, m = ix.n, ix.l, ix.m
            am = abs(m)
            norm = _ylm_norm(l, am)
            azim = re[am] if m >= 0 else im[am]
            out[:, a] = rpow[l] * rad[l][n] * norm * pi_tab[am][l] * azim
        if not in_ball.all():
            out *= in_ball[:, None]
        return out

    def evaluate_phi(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        v0 = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
        return self.evaluate_chi(pts) * np.exp(-0.5 * v0)[:, None]

    def synthesize(self, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate sum_a coeffs[a] phi_a at points."""
        return self.evaluate_phi(points) @ np.asarray(coeffs)

    def invariant_indices(self) -> dict[str, int]:
        """Positions of the functions carrying the collision invariants."""
        lookup = {(ix.n, ix.l, ix.m): i for i, ix in enumerate(self.indices)}
        return {
            "sqrtM": lookup[(0, 0, 0)],
            "vx": lookup[(0, 1, 1)],
            "vy": lookup[(0, 1, -1)],
            "vz": lookup[(0, 1, 0)],
            "v0": lookup[(1, 0, 0)],
        }


def build_basis(config: BasisConfig, quad: QuadratureSet, gram_tol: float = 1e-10) -> GalerkinBasis:
    """Construct the orthonormalized basis and verify its Gram matrix.

    The Gram check runs on a refined product rule, so it is an independent
    confirmation rather than a restatement of the construction.
    """
    config.validate()
    families = {}
    indices: list[BasisIndex] = []
    for l in range(config.l_max + 1):
        count = config.n_radial + 1 if l == 0 else config.n_radial
        families[l] = RadialFamily(l, count, quad)
        ms = [0] if l == 0 else [m for m in range(-min(l, config.m_max), min(l, config.m_max) + 1)]
        for m in sorted(ms):
            for n in range(count):
                indices.append(BasisIndex(n, l, m))
    basis = GalerkinBasis(config=config, quad=quad, indices=indices, families=families,
                          gram=np.empty((0, 0)))
    pts, w = quad.velocity_rule(n_radial=2 * quad.n_radial)
    v0 = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
    gram = accumulate_weighted_gram(basis, pts, w * np.exp(-v0))
    basis.gram = gram
    dev = np.abs(gram - np.eye(basis.dim)).max()
    if dev > gram_tol:
        raise RankDeficiency(f"basis Gram deviates from identity by {dev:.2e} > {gram_tol:.0e}")
    return basis


def accumulate_weighted_gram(basis: GalerkinBasis, pts: np.ndarray, weights: np.ndarray,
                             chunk: int = 1 << 15) -> np.ndarray:
    """sum_i w_i chi(p_i) chi(p_i)^T accumulated in fixed-size chunks."""
    out = np.zeros((basis.dim, basis.dim))
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, start + chunk)
        chi = basis.evaluate_chi(pts[sl])
        out += (chi * weights[sl][:, None]).T @ chi
    return 0.5 * (out + out.T)


@dataclass
class Projectors:
    """Macroscopic/microscopic orthogonal projections in basis coordinates."""

    P0: np.ndarray
    P1: np.ndarray


def build_projectors(psi: np.ndarray) -> Projectors:
    """P0 = sum_j psi_j psi_j^T for orthonormal coefficient vectors psi (5, dim)."""
    psi = np.asarray(psi)
    P0 = psi.T @ psi
    P0 = 0.5 * (P0 + P0.T)
    return Projectors(P0=P0, P1=np.eye(psi.shape[1]) - P0)


@dataclass
class StreamingMatrix:
    """Galerkin matrix of multiplication by vhat . omega."""

    axis: np.ndarray
    Vmat: np.ndarray


def streaming_matrix(basis: GalerkinBasis, omega: np.ndarray, quad: QuadratureSet) -> StreamingMatrix:
    """Assemble V[a,b] = int (vhat.omega) phi_a phi_b dv by the product rule.

    The rule is exact for the polynomial harmonics involved, so the m-block
    sparsity (for omega along the polar axis) holds to roundoff.
    """
    omega = np.asarray(omega, dtype=float)
    omega = omega / np.linalg.norm(omega)
    pts, w = quad.velocity_rule()
    r2 = np.sum(pts * pts, axis=1)
    v0 = np.sqrt(1.0 + r2)
    vhat_omega = (pts @ omega) / v0
    V = accumulate_weighted_gram(basis, pts, w * np.exp(-v0) * vhat_omega)
    return StreamingMatrix(axis=omega, Vmat=V)


def rotation_symmetrize(mat: np.ndarray, basis: GalerkinBasis) -> np.ndarray:
    """Project a matrix onto the commutant of the rotation action.

    Zeroes couplings between different (l, m) labels and averages the
    radial blocks over m at fixed l; this is the group average of
    R mat R^T over rotations, so it preserves symmetry and negative
    semidefiniteness while removing sampling noise that violates the exact
    equivariance of the collision operator.
    """
    out = np.zeros_like(mat)
    for l in range(basis.config.l_max + 1):
        ms = sorted({ix.m for ix in basis.indices if ix.l == l})
        blocks = [mat[np.ix_(basis.block_indices(l, m), basis.block_indices(l, m))] for m in ms]
        avg = np.mean(blocks, axis=0)
        for m in ms:
            sl = basis.block_indices(l, m)
            out[np.ix_(sl, sl)] = avg
    return out


def radial_blocks(mat: np.ndarray, basis: GalerkinBasis) -> dict[int, np.ndarray]:
    """Extract the per-l radial block of a rotation-symmetrized matrix."""
    out = {}
    for l in range(basis.config.l_max + 1):
        ms = sorted({ix.m for ix in basis.indices if ix.l == l})
        sl = basis.block_indices(l, ms[0])
        out[l] = mat[np.ix_(sl, sl)].copy()
    return out


def expand_symmetric_operator(blocks: dict[int, np.ndarray], basis: GalerkinBasis) -> np.ndarray:
    """Place per-l radial blocks into a (possibly wider-m) basis layout."""
    out = np.zeros((basis.dim, basis.dim))
    for l, blk in blocks.items():
        ms = sorted({ix.m for ix in basis.indices if ix.l == l})
        for m in ms:
            sl = basis.block_indices(l, m)
            out[np.ix_(sl, sl)] = blk
    return out
