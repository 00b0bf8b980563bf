"""Equilibrium weight e^{-v0}, its moments, and the fluid-sector constants.

The normalization constants follow the orthonormality requirement for the
null-space vectors: p0, p1, p2 are the plain integrals of M, v_j^2 M and
v0 M, while p3 is the variance of v0 under the M-weighted measure,

    p3 = int v0^2 M dv - p2^2 / p0,

so that (v0 - p2/p0) sqrt(M) is mean-centered and psi_4 comes out unit
norm.  (Defining p3 with p2^2 alone would make it negative, since M is not
a probability density.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedBasis, NonpositiveConstant, ToleranceNotMet
from .galerkin import GalerkinBasis
from .quadrature import QuadratureSet


@dataclass(frozen=True)
class RelVelocity:
    """Dimensionless momentum with its energy and velocity."""

    v: np.ndarray
    v0: float
    vhat: np.ndarray

    @classmethod
    def from_v(cls, v) -> "RelVelocity":
        v = np.asarray(v, dtype=float)
        v0 = float(np.sqrt(1.0 + v @ v))
        return cls(v=v, v0=v0, vhat=v / v0)


def maxwellian(v) -> float:
    """Equilibrium weight e^{-v0} at a single velocity."""
    if isinstance(v, RelVelocity):
        return float(np.exp(-v.v0))
    v = np.asarray(v, dtype=float)
    return float(np.exp(-np.sqrt(1.0 + v @ v)))


def maxwellian_at(points: np.ndarray) -> np.ndarray:
    """Vectorized e^{-v0} over points (N, 3)."""
    pts = np.atleast_2d(points)
    return np.exp(-np.sqrt(1.0 + np.sum(pts * pts, axis=1)))


@dataclass(frozen=True)
class MaxwellianMoments:
    p0: float
    p1: float
    p2: float
    p3: float

    @property
    def v0_mean(self) -> float:
        return self.p2 / self.p0


def _radial_moments(quad: QuadratureSet, n: int) -> tuple[float, float, float, float]:
    r, wr = quad.radial_rule(n)
    v0 = np.sqrt(1.0 + r * r)
    M = np.exp(-v0)
    p0 = 4.0 * np.pi * np.sum(wr * r**2 * M)
    p1 = (4.0 * np.pi / 3.0) * np.sum(wr * r**4 * M)
    p2 = 4.0 * np.pi * np.sum(wr * r**2 * v0 * M)
    q2 = 4.0 * np.pi * np.sum(wr * r**2 * v0**2 * M)
    return p0, p1, p2, q2


def compute_moments(quad: QuadratureSet, rtol: float = 1e-8) -> MaxwellianMoments:
    """Moments by radial Gauss quadrature, verified by node doubling.

    p1 is additionally computed per axis with the sphere rule; isotropy
    makes the three values identical to roundoff.
    """
    p0, p1, p2, q2 = _radial_moments(quad, quad.n_radial)
    ref = _radial_moments(quad, 2 * quad.n_radial)
    for a, b, name in zip((p0, p1, p2, q2), ref, ("p0", "p1", "p2", "q2")):
        if abs(a - b) > rtol * abs(b):
            raise ToleranceNotMet(f"moment {name} changed by {abs(a - b) / abs(b):.2e} under node doubling")
    p3 = q2 - p2 * p2 / p0
    moments = MaxwellianMoments(p0=p0, p1=p1, p2=p2, p3=p3)
    if min(moments.p0, moments.p1, moments.p2, moments.p3) <= 0:
        raise NonpositiveConstant("moments must all be positive")
    return moments


def p1_per_axis(quad: QuadratureSet) -> np.ndarray:
    """int v_j^2 M dv for j = 1, 2, 3 via the full product rule."""
    pts, w = quad.velocity_rule()
    M = maxwellian_at(pts)
    return np.array([np.sum(w * M * pts[:, j] ** 2) for j in range(3)])


@dataclass
class NullSpaceBasis:
    """Coefficient vectors of psi_0, psi_1, psi_2, psi_3, psi_4."""

    psi: np.ndarray  # (5, dim), rows ordered psi_0, psi_1, psi_2, psi_3, psi_4
    gram: np.ndarray

    def row(self, j: int) -> np.ndarray:
        return self.psi[j]

    @property
    def psi_prime(self) -> np.ndarray:
        """The vector part (psi_1, psi_2, psi_3) as a (3, dim) array."""
        return self.psi[1:4]


def null_space_basis(moments: MaxwellianMoments, basis: GalerkinBasis,
                     ortho_tol: float = 1e-10, cond_max: float = 1e6) -> NullSpaceBasis:
    """Project the five collision invariants onto the basis.

    psi_0 = p0^{-1/2} sqrt(M), psi_j = p1^{-1/2} v_j sqrt(M),
    psi_4 = p3^{-1/2} (v0 - p2/p0) sqrt(M).  The coefficients are computed
    by quadrature rather than read off the construction, so the Gram check
    below genuinely validates the basis embedding.
    """
    quad = basis.quad
    pts, w = quad.velocity_rule(n_radial=2 * quad.n_radial)
    v0 = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
    M = np.exp(-v0)
    chi = basis.evaluate_chi(pts)
    targets = np.stack([
        np.full(pts.shape[0], moments.p0 ** -0.5),
        moments.p1 ** -0.5 * pts[:, 0],
        moments.p1 ** -0.5 * pts[:, 1],
        moments.p1 ** -0.5 * pts[:, 2],
        moments.p3 ** -0.5 * (v0 - moments.v0_mean),
    ])
    psi = (targets * (w * M)[None, :]) @ chi
    gram = psi @ psi.T
    dev = np.abs(gram - np.eye(5)).max()
    if dev > ortho_tol:
        raise IllConditionedBasis(f"null-space Gram deviates from I by {dev:.2e}")
    cond = np.linalg.cond(gram)
    if cond > cond_max:
        raise IllConditionedBasis(f"null-space Gram condition {cond:.2e} exceeds {cond_max:.0e}")
    return NullSpaceBasis(psi=psi, gram=gram)


@dataclass(frozen=True)
class FluidConstants:
    """Acoustic coupling constants and the sound-mode eigenvalues.

    u holds (u_{-1}, u_0, u_1) = (+sqrt(a^2+b^2), 0, -sqrt(a^2+b^2)).
    """

    a: float
    b: float
    u: np.ndarray

    @property
    def sound_speed(self) -> float:
        return float(np.hypot(self.a, self.b))


def fluid_constants(basis: GalerkinBasis, psi: NullSpaceBasis, quad: QuadratureSet,
                    moments: MaxwellianMoments, axis_tol: float = 1e-10) -> FluidConstants:
    """a = (vhat_1 psi_1, psi_4) and b = (vhat_1 psi_0, psi_1) by quadrature.

    Both are computed for each axis and must agree to axis_tol; rotation
    invariance makes them identical up to the sphere-rule symmetry.
    """
    pts, w = quad.velocity_rule()
    v0 = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
    M = np.exp(-v0)
    c = moments.v0_mean
    a_axes = np.empty(3)
    b_axes = np.empty(3)
    for j in range(3):
        vh = pts[:, j] / v0
        b_axes[j] = np.sum(w * M * vh * moments.p0 ** -0.5 * moments.p1 ** -0.5 * pts[:, j])
        a_axes[j] = np.sum(w * M * vh * moments.p1 ** -0.5 * pts[:, j] * moments.p3 ** -0.5 * (v0 - c))
    if np.ptp(a_axes) > axis_tol or np.ptp(b_axes) > axis_tol:
        raise NonpositiveConstant(
            f"axis dependence in fluid constants: a spread {np.ptp(a_axes):.2e}, "
            f"b spread {np.ptp(b_axes):.2e}")
    a = float(a_axes.mean())
    b = float(b_axes.mean())
    if a <= 0 or b <= 0:
        raise NonpositiveConstant(f"fluid constants must be positive, got a={a}, b={b}")
    s = float(np.hypot(a, b))
    return FluidConstants(a=a, b=b, u=np.array([s, 0.0, -s]))
