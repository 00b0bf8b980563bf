"""Scattering kernel, collision kinematics, collision frequency, and the
Galerkin assembly of the linearized operator L = -nu + K.

L is assembled from the symmetric four-point difference form

    (L phi_a, phi_b) = -(1/4) int vM sigma M(u) M(v) Delta_a Delta_b,
    Delta_a = chi_a(v') + chi_a(u') - chi_a(v) - chi_a(u),
    chi_a = phi_a / sqrt(M),

so the discrete matrix is symmetric and negative semidefinite by
construction, and the collision invariants are exact null vectors because
the post-collision map conserves momentum and energy to roundoff.

The 8-dimensional integral is sampled by scrambled Sobol streams with the
M(u) M(v) importance weight, *stratified over radial energy-shell pairs*:
high-degree basis functions carry weight far into the tail of M, where an
unstratified stream has a heavy-tailed estimator (rare samples with
exponentially large chi values); per-shell-pair budgets keep every sample
value bounded and restore the expected QMC accuracy uniformly over the
matrix.  Budgets, seeds and reduction order are fixed functions of the
configuration, so assemblies are bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import qmc

from .config import KernelConfig
from .errors import AssemblyToleranceExceeded, GapCollapse, NonpositiveConstant, ToleranceNotMet
from .galerkin import GalerkinBasis, rotation_symmetrize
from .maxwellian import NullSpaceBasis, RelVelocity
from .quadrature import QuadratureSet, sample_direction

# Radial shell edges for the pair stratification of the assembly sampler:
# uniform in v0 with unit width, so the in-stratum range of the estimator
# (which scales like e^{v0-width}) stays bounded out to the tail.
def _shell_edges(r_max: float) -> np.ndarray:
    v0_edges = np.arange(1.0, np.sqrt(1.0 + r_max**2) + 1.0, 1.0)
    edges = np.sqrt(np.maximum(v0_edges**2 - 1.0, 0.0))
    edges = edges[edges < r_max]
    return np.append(edges, r_max)


@dataclass(frozen=True)
class ScatteringKernel:
    """Concrete scattering cross-section inside the admissibility window."""

    beta: float = 1.0
    delta: float = 0.0
    gamma: float = 0.0
    form_id: str = "g2_over_1plusg"

    @classmethod
    def from_config(cls, cfg: KernelConfig) -> "ScatteringKernel":
        cfg.validate()
        return cls(beta=cfg.beta, delta=cfg.delta, gamma=cfg.gamma, form_id=cfg.form_id)

    def sigma(self, g, theta=None):
        """sigma(g, theta); the default form g^2/(1+g) carries no angle factor."""
        g = np.asarray(g, dtype=float)
        base = g * g / (1.0 + g)
        if self.gamma != 0.0 and theta is not None:
            base = base * np.sin(theta) ** self.gamma
        return base

    def angular_average(self, g):
        """int_{S^2} sigma(g, theta(omega)) d omega."""
        g = np.asarray(g, dtype=float)
        if self.gamma == 0.0:
            return 4.0 * np.pi * self.sigma(g)
        x, w = np.polynomial.legendre.leggauss(64)
        theta = np.arccos(x)
        fac = 2.0 * np.pi * np.sum(w * np.sin(theta) ** self.gamma)
        return fac * (g * g / (1.0 + g))


@dataclass(frozen=True)
class CollisionKinematics:
    g: float
    s: float
    vM: float
    theta: float | None = None


def relative_momentum(u: RelVelocity, v: RelVelocity,
                      s_convention: str = "consistent") -> CollisionKinematics:
    """Relative momentum g, Mandelstam-type s, and the Moller factor vM.

    g^2 = (u0 v0 - u.v - 1)/2, clamped at zero against roundoff.  With the
    consistent convention s = 4 + 4 g^2; the literal alternative
    s = 2(u0 v0 - u.v - 1) is selectable for comparison.
    """
    dot = float(u.v @ v.v)
    g2 = max((u.v0 * v.v0 - dot - 1.0) / 2.0, 0.0)
    g = np.sqrt(g2)
    if s_convention == "consistent":
        s = 4.0 + 4.0 * g2
    else:
        s = 2.0 * (u.v0 * v.v0 - dot - 1.0)
    vM = 2.0 * g * np.sqrt(1.0 + g2) / (u.v0 * v.v0)
    return CollisionKinematics(g=float(g), s=float(s), vM=float(vM))


def post_collision_batch(u: np.ndarray, v: np.ndarray, omega: np.ndarray):
    """Center-of-momentum scattering map for sample batches.

    Boosts to the frame where u + v = 0, places the outgoing relative
    momentum of magnitude g along omega, and boosts back; v' is closed by
    exact conservation.  Returns (u', u0', v', v0', g, cos theta) where
    theta is the scattering angle between the incoming and outgoing
    relative momenta in the center-of-momentum frame (identical to the
    Minkowski definition).  Pairs with g below 1e-10 are returned
    unscattered: the flux factor vanishes there, so they carry no weight.
    """
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    omega = np.atleast_2d(omega)
    u0 = np.sqrt(1.0 + np.sum(u * u, axis=1))
    v0 = np.sqrt(1.0 + np.sum(v * v, axis=1))
    E = u0 + v0
    p = u + v
    g2 = np.maximum((u0 * v0 - np.sum(u * v, axis=1) - 1.0) / 2.0, 0.0)
    g = np.sqrt(g2)
    gam = E / (2.0 * np.sqrt(1.0 + g2))
    beta = p / E[:, None]
    b2 = np.sum(beta * beta, axis=1)
    # (gam-1)/|beta|^2 without cancellation at small boosts
    fac = np.where(b2 > 0, gam**2 / (gam + 1.0), 0.0)
    # incoming relative momentum in the CM frame (boost of u)
    bu = np.sum(beta * u, axis=1)
    q_in = u + (fac * bu - gam * u0)[:, None] * beta
    qn = np.sqrt(np.sum(q_in * q_in, axis=1))
    qhat = q_in / np.where(qn > 0, qn, 1.0)[:, None]
    cos_theta = np.clip(np.sum(qhat * omega, axis=1), -1.0, 1.0)
    # outgoing u in the CM frame, boosted back
    q_out = g[:, None] * omega
    e_cm = np.sqrt(1.0 + g2)
    bq = np.sum(beta * q_out, axis=1)
    up = q_out + (fac * bq + gam * e_cm)[:, None] * beta
    up0 = gam * (e_cm + bq)
    vp = p - up
    vp0 = E - up0
    degenerate = g < 1e-10
    if np.any(degenerate):
        up = np.where(degenerate[:, None], u, up)
        vp = np.where(degenerate[:, None], v, vp)
        up0 = np.where(degenerate, u0, up0)
        vp0 = np.where(degenerate, v0, vp0)
        cos_theta = np.where(degenerate, 1.0, cos_theta)
    return up, up0, vp, vp0, g, cos_theta


def post_collision(u: RelVelocity, v: RelVelocity, omega: np.ndarray):
    """Single-pair wrapper around `post_collision_batch`."""
    omega = np.asarray(omega, dtype=float)
    if abs(omega @ omega - 1.0) > 1e-12:
        raise ValueError("omega must be a unit vector")
    up, up0, vp, vp0, _, _ = post_collision_batch(u.v[None, :], v.v[None, :], omega[None, :])
    return (RelVelocity(v=up[0], v0=float(up0[0]), vhat=up[0] / up0[0]),
            RelVelocity(v=vp[0], v0=float(vp0[0]), vhat=vp[0] / vp0[0]))


def scattering_cosine(u: RelVelocity, v: RelVelocity,
                      up: RelVelocity, vp: RelVelocity) -> float:
    """cos theta from the Minkowski four-vector definition."""
    du = np.concatenate([[u.v0 - v.v0], u.v - v.v])
    dp = np.concatenate([[up.v0 - vp.v0], up.v - vp.v])
    mink = lambda a, b: a[0] * b[0] - a[1:] @ b[1:]
    return float(mink(du, dp) / mink(du, du))


# ---------------------------------------------------------------------------
# collision frequency


def _reduced_nu(r_values: np.ndarray, kernel: ScatteringKernel, quad: QuadratureSet,
                n_radial: int | None = None, n_angle: int = 128) -> np.ndarray:
    """nu(|v|) by the reduced 2D integral over |u| and the u-v angle."""
    s, ws = quad.radial_rule(n_radial)
    mu, wmu = np.polynomial.legendre.leggauss(n_angle)
    u0 = np.sqrt(1.0 + s * s)
    out = np.empty_like(r_values, dtype=float)
    S, MU = np.meshgrid(s, mu, indexing="ij")
    U0 = np.sqrt(1.0 + S * S)
    W = ws[:, None] * wmu[None, :]
    for i, rv in enumerate(r_values):
        v0 = np.sqrt(1.0 + rv * rv)
        g2 = np.maximum((U0 * v0 - S * rv * MU - 1.0) / 2.0, 0.0)
        g = np.sqrt(g2)
        vM = 2.0 * g * np.sqrt(1.0 + g2) / (U0 * v0)
        out[i] = 2.0 * np.pi * np.sum(W * S**2 * vM * kernel.angular_average(g) * np.exp(-U0))
    return out


def collision_frequency(v, kernel: ScatteringKernel, quad: QuadratureSet,
                        method: str = "qmc", n_samples: int | None = None,
                        rtol: float = 1e-3) -> float:
    """nu(v) = int int vM sigma M(u) d omega du.

    method="qmc": importance sampling of u from M/p0 with two seeded Sobol
    streams; raises ToleranceNotMet when the streams disagree beyond rtol.
    method="reduced": deterministic 2D product quadrature (used for the
    nu-profile entering the Galerkin mass matrix).
    """
    vv = v.v if isinstance(v, RelVelocity) else np.asarray(v, dtype=float)
    r = float(np.linalg.norm(vv))
    if method == "reduced":
        return float(_reduced_nu(np.array([r]), kernel, quad)[0])
    if method != "qmc":
        raise ValueError(f"unknown method {method!r}")
    n = n_samples or max(quad.qmc_samples // 8, 1 << 16)
    invcdf, norm_full = _maxwell_sampler_cached(quad.r_max)
    v0 = np.sqrt(1.0 + r * r)
    vvec = np.array([0.0, 0.0, r])
    estimates = []
    for stream in (0, 1):
        pts = quad.sobol(3, n, stream=11 + stream)
        ru = np.asarray(invcdf(pts[:, 0]))
        dirs = sample_direction(pts[:, 1:3])
        u = ru[:, None] * dirs
        u0 = np.sqrt(1.0 + ru * ru)
        g2 = np.maximum((u0 * v0 - u @ vvec - 1.0) / 2.0, 0.0)
        g = np.sqrt(g2)
        vM = 2.0 * g * np.sqrt(1.0 + g2) / (u0 * v0)
        estimates.append(norm_full * float(np.mean(vM * kernel.angular_average(g))))
    a, b = estimates
    value = 0.5 * (a + b)
    if abs(a - b) > rtol * abs(value):
        raise ToleranceNotMet(f"nu({r:.3g}): streams disagree by {abs(a - b) / abs(value):.2e} > {rtol:.0e}")
    return value


@lru_cache(maxsize=4)
def _maxwell_sampler_cached(r_max: float):
    quad = QuadratureSet(r_max=r_max)
    return quad.maxwellian_radial_sampler(half_weight=False)


def nu_envelope_fit(kernel: ScatteringKernel, quad: QuadratureSet,
                    vmax: float = 30.0, n: int = 61) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Fitted envelope constants for nu(v) against v0^{beta/2}.

    Returns (c0hat, c1hat, rgrid, nு values): the min and max over the grid
    of nu(v) / v0^{beta/2}.
    """
    rr = quad.vgrid(n, vmax)
    nu = _reduced_nu(rr, kernel, quad)
    ratio = nu / (1.0 + rr * rr) ** (kernel.beta / 4.0)
    c0, c1 = float(ratio.min()), float(ratio.max())
    if c0 <= 0:
        raise NonpositiveConstant("fitted nu envelope lower constant is nonpositive")
    return c0, c1, rr, nu


# ---------------------------------------------------------------------------
# assembly


@dataclass
class CollisionMatrices:
    """Galerkin matrices of nu-multiplication and of L, plus fitted constants."""

    Nmat: np.ndarray
    Lmat: np.ndarray
    c0hat: float
    c1hat: float
    muhat: float
    qmc_error: float
    seed: int
    kernel: ScatteringKernel

    @property
    def Kmat(self) -> np.ndarray:
        return self.Lmat + self.Nmat

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.Lmat, 2))


def _shell_masses(r_max: float) -> tuple[np.ndarray, np.ndarray, float]:
    """CDF values of the M-radial density at the shell edges."""
    rg = np.linspace(0.0, r_max, 32769)
    pdf = rg**2 * np.exp(-np.sqrt(1.0 + rg**2))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(rg))])
    p0 = 4.0 * np.pi * cdf[-1]
    cdf /= cdf[-1]
    interp = PchipInterpolator(rg, cdf)
    bin_cdf = np.asarray(interp(_shell_edges(r_max)))
    bin_cdf[0], bin_cdf[-1] = 0.0, 1.0
    return bin_cdf, np.diff(bin_cdf), p0


def _stratum_budgets(total: int, masses: np.ndarray, mix: float = 0.5,
                     floor: int = 1024) -> np.ndarray:
    """Per-shell-pair sample budgets rounded up to powers of two.

    A blend of the sqrt-mass rule (optimal for bulk-dominated entries) and
    a uniform share (which covers the tail shells that high-degree basis
    functions live on).  The floor shrinks with small total budgets so
    cheap exploratory runs stay cheap.
    """
    pm = np.outer(masses, masses).ravel()
    w = np.sqrt(pm)
    w /= w.sum()
    w = mix * w + (1.0 - mix) / pm.size
    floor_eff = int(min(floor, max(32, total // pm.size)))
    floor_eff = 2 ** int(np.log2(floor_eff))
    budgets = np.maximum(floor_eff, (total * w).astype(int))
    return (2 ** np.ceil(np.log2(budgets))).astype(int)


def assemble_L(basis: GalerkinBasis, kernel: ScatteringKernel, quad: QuadratureSet,
               assembly_rtol: float = 5e-2, check_tolerance: bool = True) -> CollisionMatrices:
    """Assemble Nmat (exact radial quadrature) and Lmat (stratified Sobol).

    Two independent stream families (derived from quad.seed) are averaged;
    their maximum entrywise disagreement, relative to the largest entry of
    Lmat, is the reported QMC error and must stay below assembly_rtol.
    The sampled matrix is then projected onto the rotation commutant
    (zero inter-(l,m) coupling, m-averaged radial blocks), which preserves
    symmetry and negative semidefiniteness.
    """
    r, wr = quad.radial_rule()
    nu_r = _reduced_nu(r, kernel, quad)
    t = np.sqrt(1.0 + r * r)
    Nmat = np.zeros((basis.dim, basis.dim))
    for l, fam in basis.families.items():
        vals = fam.evaluate(t)
        w = wr * r ** (2 * l + 2) * np.exp(-t) * nu_r
        blk = (vals * w) @ vals.T
        for m in sorted({ix.m for ix in basis.indices if ix.l == l}):
            sl = basis.block_indices(l, m)
            Nmat[np.ix_(sl, sl)] += blk

    bin_cdf, masses, p0 = _shell_masses(quad.r_max)
    budgets = _stratum_budgets(quad.qmc_samples, masses)
    invcdf, _ = _maxwell_sampler_cached(quad.r_max)

    halves = []
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The balance properties")
        for half in (0, 1):
            acc = np.zeros((basis.dim, basis.dim))
            pair = 0
            for i in range(masses.size):
                for j in range(masses.size):
                    n_ij = int(budgets[pair])
                    eng = qmc.Sobol(d=8, scramble=True,
                                    seed=(quad.seed * 2 + half) * 1_000_003 + pair)
                    pts = eng.random(n_ij)
                    rv = np.asarray(invcdf(bin_cdf[i] + (bin_cdf[i + 1] - bin_cdf[i]) * pts[:, 0]))
                    ru = np.asarray(invcdf(bin_cdf[j] + (bin_cdf[j + 1] - bin_cdf[j]) * pts[:, 1]))
                    v = rv[:, None] * sample_direction(pts[:, 2:4])
                    u = ru[:, None] * sample_direction(pts[:, 4:6])
                    om = sample_direction(pts[:, 6:8])
                    up, _, vp, _, g, cth = post_collision_batch(u, v, om)
                    u0 = np.sqrt(1.0 + ru * ru)
                    v0 = np.sqrt(1.0 + rv * rv)
                    vM = 2.0 * g * np.sqrt(1.0 + g * g) / (u0 * v0)
                    sg = kernel.sigma(g, np.arccos(cth)) if kernel.gamma != 0.0 else kernel.sigma(g)
                    w = vM * sg * (masses[i] * masses[j] * p0 * p0 * 4.0 * np.pi) / n_ij
                    # ball-closed collisions only: keeps conservation (and so
                    # the invariant null vectors) exact per sample; the
                    # discarded boundary-crossing pairs carry e^{-r_max} mass
                    w *= (np.sum(up * up, axis=1) <= quad.r_max**2) \
                        & (np.sum(vp * vp, axis=1) <= quad.r_max**2)
                    delta = (basis.evaluate_chi(up) + basis.evaluate_chi(vp)
                             - basis.evaluate_chi(u) - basis.evaluate_chi(v))
                    acc += -0.25 * (delta * w[:, None]).T @ delta
                    pair += 1
            halves.append(0.5 * (acc + acc.T))
    Lraw = 0.5 * (halves[0] + halves[1])
    scale = max(np.abs(Lraw).max(), 1e-300)
    qmc_error = float(np.abs(halves[0] - halves[1]).max() / scale)
    if check_tolerance and qmc_error > assembly_rtol:
        raise AssemblyToleranceExceeded(
            f"QMC streams disagree by {qmc_error:.2e} of max|L| > {assembly_rtol:.0e}")
    Lmat = rotation_symmetrize(Lraw, basis)
    c0, c1, _, _ = nu_envelope_fit(kernel, quad)
    mats = CollisionMatrices(Nmat=Nmat, Lmat=Lmat, c0hat=c0, c1hat=c1,
                             muhat=np.nan, qmc_error=qmc_error, seed=quad.seed,
                             kernel=kernel)
    return mats


def spectral_gap(mats: CollisionMatrices, psi: NullSpaceBasis,
                 cluster_factor: float = 10.0) -> float:
    """muhat = -max eigenvalue of Lmat restricted to span(psi)-perp.

    Also verifies that the near-zero cluster of the full Lmat has exactly
    five members; more means the discrete kernel is polluted.
    """
    from scipy.linalg import null_space

    Q1 = null_space(psi.psi)
    if Q1.shape[1] == 0:
        raise GapCollapse("basis holds only the collision invariants; no microscopic sector")
    restricted = Q1.T @ mats.Lmat @ Q1
    evals = np.linalg.eigvalsh(0.5 * (restricted + restricted.T))
    muhat = float(-evals.max())
    if muhat <= 0:
        raise GapCollapse(f"restricted operator has nonnegative top eigenvalue {evals.max():.3e}")
    full = np.linalg.eigvalsh(mats.Lmat)
    cluster = int(np.sum(np.abs(full) < muhat / cluster_factor))
    if cluster != 5:
        raise GapCollapse(f"{cluster} eigenvalues inside the near-zero cluster, expected 5")
    mats.muhat = muhat
    return muhat
