"""Propagator e^{tB(k)}, the five-mode/remainder split, analytic
macroscopic amplitudes, and the decay-rate experiments.

The decay experiment computes physical-space norms

    ||dx^a (f, psi_j)||^2 = int k^{2a} |(e^{tB(k)} f0, psi_j)|^2 dk

by a radial k-quadrature whose panels are graded to resolve the acoustic
oscillation e^{i c k t} at the largest time on the grid: panel widths
follow pi / (2 c t_alive(k)), where t_alive is capped by the diffusive
envelope e^{-2 rho k^2 t}.  Unresolved acoustic cross terms otherwise
alias into percent-level noise that ruins the slope fits.  All scenario
initial data live in the m = 0 angular sector for k along the polar axis,
so the propagation runs on that block alone; the propagator itself is the
exact dense matrix exponential (via eigendecomposition) of the block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .config import DecayConfig
from .errors import (
    ClusterMiscount,
    DefectiveBranch,
    NonpositiveNorm,
    SlopeFitUnstable,
    ToolkitError,
)
from .spectral import EigenBranchTable, FourierModeOperator

OBSERVABLES = ("density", "momentum", "energy", "micro",
               "grad_density", "grad_momentum", "grad_energy", "grad_micro")


@dataclass
class PropagatorResult:
    t: float
    kmag: float
    omega: np.ndarray
    state: np.ndarray
    method: str = "eig"


class PropagatorCache:
    """Per-k eigendecompositions of B(k), with a robustness fallback.

    When the eigenvector matrix is ill conditioned (> cond_max) the
    propagation falls back to scipy's scaling-and-squaring expm and the
    result records it.
    """

    def __init__(self, cond_max: float = 1e8):
        self.cond_max = cond_max
        self._store: dict[tuple[float, bytes], tuple] = {}

    def decomposition(self, Bk: FourierModeOperator):
        key = (Bk.kmag, Bk.omega.tobytes())
        if key not in self._store:
            lam, EV = np.linalg.eig(Bk.Bmat)
            cond = np.linalg.cond(EV)
            self._store[key] = (lam, EV, cond)
        return self._store[key]


def propagate(Bk: FourierModeOperator, t: float, f0: np.ndarray,
              cache: PropagatorCache | None = None) -> PropagatorResult:
    """state = exp(t B(k)) f0 via spectral decomposition (expm fallback)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    cache = cache or PropagatorCache()
    lam, EV, cond = cache.decomposition(Bk)
    if cond <= cache.cond_max:
        w = np.linalg.solve(EV, f0.astype(complex))
        state = EV @ (w * np.exp(lam * t))
        return PropagatorResult(t=t, kmag=Bk.kmag, omega=Bk.omega, state=state, method="eig")
    state = sla.expm(t * Bk.Bmat) @ f0.astype(complex)
    return PropagatorResult(t=t, kmag=Bk.kmag, omega=Bk.omega, state=state,
                            method="expm-near-defective")


def _five_mode_projection(Bk: FourierModeOperator, mu_hat: float,
                          cache: PropagatorCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenpairs of the five branches at this k with bilinear Gram data."""
    lam, EV, _ = cache.decomposition(Bk)
    sel = np.flatnonzero(lam.real > -mu_hat / 2.0)
    if sel.size != 5:
        raise ClusterMiscount(f"{sel.size} eigenvalues above -muhat/2 at k={Bk.kmag:.4g}")
    E5 = EV[:, sel]
    lam5 = lam[sel]
    gram = E5.T @ E5
    if np.linalg.cond(gram) > 1e10:
        raise DefectiveBranch(f"bilinear Gram of the five modes degenerate at k={Bk.kmag:.4g}")
    return lam5, E5, gram


def split_G1_G2(Bk: FourierModeOperator, t: float, f0: np.ndarray,
                branches: EigenBranchTable, tau0: float | None = None,
                cache: PropagatorCache | None = None) -> tuple[np.ndarray, np.ndarray]:
    """g1 = five-branch spectral part (zero beyond tau0); g2 = propagator - g1.

    The coefficients use the bilinear pairing (f, conj(e_j)) = f^T e_j of
    the complex-symmetric B(k); within degenerate clusters the projection
    is computed through the 5x5 bilinear Gram, which is what the
    orthonormality convention (e_i, conj(e_j)) = delta_ij means there.
    """
    cache = cache or PropagatorCache()
    tau0 = branches.tau0 if tau0 is None else tau0
    full = propagate(Bk, t, f0, cache).state
    if Bk.kmag > tau0:
        return np.zeros_like(full), full
    lam5, E5, gram = _five_mode_projection(Bk, branches.mu_hat, cache)
    y = np.linalg.solve(gram, E5.T @ f0.astype(complex))
    g1 = E5 @ (np.exp(lam5 * t) * y)
    return g1, full - g1


def fit_g2_rate(Bk: FourierModeOperator, f0: np.ndarray, branches: EigenBranchTable,
                mu_hat: float, cache: PropagatorCache | None = None,
                n_times: int = 12) -> float:
    """Fitted exponential decay rate of ||g2(t)|| on a late window.

    The window [2, 10] / mu_hat starts after the fast multi-exponential
    transient, where the slowest remainder mode dominates.
    """
    cache = cache or PropagatorCache()
    ts = np.linspace(2.0 / mu_hat, 10.0 / mu_hat, n_times)
    norms = []
    for t in ts:
        _, g2 = split_G1_G2(Bk, t, f0, branches, cache=cache)
        norms.append(np.linalg.norm(g2))
    norms = np.asarray(norms)
    if np.any(norms <= 0):
        raise NonpositiveNorm("g2 norm vanished on the fit window")
    return float(-np.polyfit(ts, np.log(norms), 1)[0])


# ---------------------------------------------------------------------------
# analytic macroscopic amplitudes


@dataclass
class ModeFrame:
    """Branch eigenvalues at one k plus the fluid-sector constants."""

    kmag: float
    lam: dict[int, complex]   # labels -1, 0, 1, 2, 3
    B1: float
    B2: float


def macro_amplitudes(t: float, frame: ModeFrame, scenario: "DecayScenario") -> dict[str, complex]:
    """Leading-order (remainder-free) amplitudes of (G1 f0, psi_j).

    Generic scenarios use the macroscopic data (n0, m0.omega, q0); initial
    data with P0 f0 = 0 use the microscopic couplings (eta, theta, gamma),
    whose amplitudes carry an extra factor i |k|.  The discrepancy against
    the computed five-mode projection is O(k) (O(k^2) for microscopic),
    absorbing the remainder operators that are never formed explicitly.
    """
    B1, B2 = frame.B1, frame.B2
    ep = np.exp(frame.lam[1] * t)
    em = np.exp(frame.lam[-1] * t)
    e0 = np.exp(frame.lam[0] * t)
    e2 = np.exp(frame.lam[2] * t)
    if scenario.id == "generic":
        n0, mo, q0 = scenario.n0, scenario.m_omega, scenario.q0
        mw2, mw3 = scenario.m_w2, scenario.m_w3
        pref = 1.0
    else:
        n0, mo, q0 = scenario.eta, scenario.theta_omega, scenario.gamma_coef
        mw2, mw3 = scenario.theta_w2, scenario.theta_w3
        pref = 1j * frame.kmag
    acoustic_p = B1 * n0 - mo + B2 * q0   # j = +1
    acoustic_m = B1 * n0 + mo + B2 * q0   # j = -1
    density = pref * (0.5 * B1 * (ep * acoustic_p + em * acoustic_m)
                      - B2 * e0 * (-B2 * n0 + B1 * q0))
    mom_omega = pref * (-0.5 * (ep * acoustic_p - em * acoustic_m))
    energy = pref * (0.5 * B2 * (ep * acoustic_p + em * acoustic_m)
                     + B1 * e0 * (B1 * q0 - B2 * n0))
    return {
        "density": density,
        "momentum_omega": mom_omega,
        "momentum_w2": pref * e2 * mw2,
        "momentum_w3": pref * e2 * mw3,
        "energy": energy,
    }


# ---------------------------------------------------------------------------
# decay scenarios


@dataclass
class DecayScenario:
    """Initial data for the decay experiment, flat in k on [0, k_support].

    The profile is a fixed velocity-space vector (times the indicator of
    the k-ball), so all observables are radial in k.  Hygiene checks of
    the defining constraints run at construction.
    """

    id: str
    d0: float
    k_support: float
    profile: np.ndarray          # (dim,) coefficient vector
    n0: float = 0.0
    m_omega: float = 0.0
    m_w2: float = 0.0
    m_w3: float = 0.0
    q0: float = 0.0
    eta: float = 0.0
    theta_omega: float = 0.0
    theta_w2: float = 0.0
    theta_w3: float = 0.0
    gamma_coef: float = 0.0
    checks: dict = field(default_factory=dict)


def build_scenario(scenario_id: str, model, d0: float = 1.0,
                   k_support: float | None = None) -> DecayScenario:
    """Construct the generic or microscopic initial profile.

    generic:      f0 = d0 (psi_0 + (a/b) psi_4); then (f0, psi') = 0 and
                  b q0 = a n0 hold identically.
    microscopic:  f0 proportional to the L^{-1} P1 V (omega.psi') direction,
                  Gram-Schmidt-cleaned against the L^{-1} P1 V psi_{0,4}
                  couplings and scaled so (f0, L^{-1}P1 V (omega.psi')) = d0.
    """
    psi = model.psi
    consts = model.consts
    omega = model.streaming.axis
    k_support = model_tau0(model) if k_support is None else k_support
    if scenario_id == "generic":
        profile = d0 * (psi.row(0) + (consts.a / consts.b) * psi.row(4))
        scn = DecayScenario(id="generic", d0=d0, k_support=k_support, profile=profile,
                            n0=float(profile @ psi.row(0)),
                            m_omega=float(profile @ (omega @ psi.psi_prime)),
                            q0=float(profile @ psi.row(4)))
        w2, w3 = model.pert.W2, model.pert.W3
        scn.m_w2 = float(profile @ (w2 @ psi.psi_prime))
        scn.m_w3 = float(profile @ (w3 @ psi.psi_prime))
        scn.checks = {
            "psi_prime_overlap": float(np.linalg.norm(profile @ psi.psi_prime.T)),
            "bq_minus_an": float(consts.b * scn.q0 - consts.a * scn.n0),
            "n0_abs": abs(scn.n0),
        }
        if scn.checks["psi_prime_overlap"] > 1e-12 or abs(scn.checks["bq_minus_an"]) > 1e-12:
            raise ToolkitError("generic scenario hygiene violated")
        return scn
    if scenario_id != "microscopic":
        raise ValueError(f"unknown scenario {scenario_id!r}")
    V = model.streaming.Vmat
    solver = model.deflated
    om_psi = omega @ psi.psi_prime
    z0 = solver.solve_L(V @ psi.row(0))
    z4 = solver.solve_L(V @ psi.row(4))
    zm = solver.solve_L(V @ om_psi)
    # z0 and z4 span a single line: v0 * vhat.omega is the momentum
    # invariant, so P1 (vhat.omega psi_4) is proportional to
    # P1 (vhat.omega psi_0); a rank-revealing projection handles both
    # constraints at once.
    Z = np.stack([z0, z4])
    _, sv, Vt = np.linalg.svd(Z, full_matrices=False)
    constraints = Vt[sv > 1e-12 * sv.max()]
    raw = zm - constraints.T @ (constraints @ zm)
    h = raw @ zm
    if abs(h) < 1e-14:
        raise ToolkitError("microscopic profile degenerates: zero coupling to the momentum channel")
    profile = (d0 / h) * raw
    scn = DecayScenario(id="microscopic", d0=d0, k_support=k_support, profile=profile,
                        eta=float(profile @ z0), gamma_coef=float(profile @ z4),
                        theta_omega=float(profile @ zm))
    w2, w3 = model.pert.W2, model.pert.W3
    scn.theta_w2 = float(profile @ solver.solve_L(V @ (w2 @ psi.psi_prime)))
    scn.theta_w3 = float(profile @ solver.solve_L(V @ (w3 @ psi.psi_prime)))
    scn.checks = {
        "P0_norm": float(np.linalg.norm(psi.psi @ profile)),
        "eta": scn.eta,
        "gamma": scn.gamma_coef,
        "theta_omega": scn.theta_omega,
    }
    if scn.checks["P0_norm"] > 1e-12:
        raise ToolkitError("microscopic scenario is not purely microscopic")
    if abs(scn.eta) > 1e-10 * abs(h) or abs(scn.gamma_coef) > 1e-10 * abs(h):
        raise ToolkitError("microscopic scenario hygiene violated")
    return scn


def model_tau0(model) -> float:
    table = getattr(model, "branches", None)
    if table is None:
        return model.config.spectrum.k_max
    return table.tau0


# ---------------------------------------------------------------------------
# graded k-quadrature and the decay experiment


def oscillation_adapted_panels(c_sound: float, rho_min: float, k_max: float, t_max: float,
                               nodes_per_panel: int = 4, max_nodes: int = 120_000,
                               env_threshold: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Panel quadrature on [0, k_max] resolving e^{2ickt} cross terms.

    At wavenumber k only times t <= t_alive(k) = min(t_max, thr/(rho k^2))
    matter (beyond that the diffusive envelope is below e^{-2 thr}); panels
    are kept shorter than half an acoustic period at t_alive.
    """
    h_min = np.pi / (2.0 * c_sound * t_max)
    edges = [0.0]
    k = 0.0
    while k < k_max:
        t_alive = min(t_max, env_threshold / (rho_min * max(k, 1e-12) ** 2))
        h = min(max(np.pi / (2.0 * c_sound * t_alive), h_min), k_max / 64.0)
        k = min(k + h, k_max)
        edges.append(k)
    edges = np.asarray(edges)
    n_nodes = (edges.size - 1) * nodes_per_panel
    if n_nodes > max_nodes:
        raise ToolkitError(
            f"k-quadrature needs {n_nodes} nodes > budget {max_nodes}; "
            "reduce t_max or increase max_k_nodes")
    gx, gw = np.polynomial.legendre.leggauss(nodes_per_panel)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


@dataclass
class RateFit:
    slope: float
    intercept: float
    ci: float


def fit_rate(series: np.ndarray, tgrid: np.ndarray, window: tuple[float, float],
             ci_max: float | None = None) -> RateFit:
    """Least-squares slope of log(norm) vs log(1+t) over the window.

    The confidence interval is the 95% band under i.i.d. residuals.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    series = np.asarray(series, dtype=float)
    sel = (tgrid >= window[0]) & (tgrid <= window[1])
    if sel.sum() < 8:
        raise SlopeFitUnstable(f"only {int(sel.sum())} points in the fit window, need >= 8")
    if np.any(series[sel] <= 0):
        raise NonpositiveNorm("norm series must be positive on the fit window")
    x = np.log1p(tgrid[sel])
    y = np.log(series[sel])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(x.size - 2, 1)
    s2 = float(resid @ resid) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    ci = 1.96 * np.sqrt(s2 / sxx)
    if ci_max is not None and ci > ci_max:
        raise SlopeFitUnstable(f"slope CI {ci:.3f} exceeds {ci_max}")
    return RateFit(slope=float(coef[0]), intercept=float(coef[1]), ci=float(ci))


@dataclass
class DecaySeries:
    scenario: str
    tgrid: np.ndarray
    norms: dict[str, np.ndarray]
    slopes: dict[str, RateFit]
    expected: dict[str, float]
    witnesses: dict[str, tuple[float, float, float]]  # (rate, min, max) over the window
    n_k_nodes: int
    fit_window: tuple[float, float]


EXPECTED_RATES = {
    "generic": {"density": -0.75, "momentum": -0.75, "energy": -0.75, "micro": -1.25,
                "grad_density": -1.25, "grad_momentum": -1.25, "grad_energy": -1.25,
                "grad_micro": -1.75},
    "microscopic": {"density": -1.25, "momentum": -1.25, "energy": -1.25, "micro": -1.75,
                    "grad_density": -1.75, "grad_momentum": -1.75, "grad_energy": -1.75,
                    "grad_micro": -2.25},
}


def decay_experiment(scenario: DecayScenario, model, config: DecayConfig,
                     batch: int = 1024) -> DecaySeries:
    """Time decay of the macroscopic/microscopic norms under e^{tB}.

    Propagates the scenario profile on the m = 0 block of B(k) at the
    graded k-nodes (exact eigendecomposition per node), accumulates the
    radial k-integrals for every observable and time, and fits log-log
    slopes on the configured window.
    """
    return decay_experiment_multi([scenario], model, config, batch=batch)[0]


def decay_experiment_multi(scenarios: list[DecayScenario], model, config: DecayConfig,
                           batch: int = 1024) -> list[DecaySeries]:
    """Run several scenarios through one shared eigendecomposition sweep.

    All scenarios must share the k-support; the per-node propagator data
    dominates the cost, so amortizing it across scenarios is nearly free.
    """
    config.validate()
    L0, V0, sector = model.m0_block()
    psi_b = model.psi.psi[:, sector]
    f0s = []
    for scenario in scenarios:
        outside = np.linalg.norm(np.delete(scenario.profile, sector))
        if outside > 1e-12 * np.linalg.norm(scenario.profile):
            raise ToolkitError("scenario profile leaves the m = 0 sector")
        f0s.append(scenario.profile[sector].astype(complex))
    supports = {s.k_support for s in scenarios}
    if len(supports) != 1:
        raise ToolkitError("scenarios sharing a sweep must share the k-support")
    rho_min = float(np.min(np.abs(model.pert.A[:3])))
    c_sound = model.consts.sound_speed
    k_max = config.k_max if config.k_max > 0 else supports.pop()
    nodes, weights = oscillation_adapted_panels(
        c_sound, rho_min, k_max, config.t_max,
        nodes_per_panel=config.nodes_per_panel, max_nodes=config.max_k_nodes)
    tgrid = np.geomspace(config.t_min, config.t_max, config.t_points)
    P0_b = psi_b.T @ psi_b
    names = ("density", "momentum", "energy", "micro")
    acc = [{name: np.zeros(tgrid.size) for name in names} for _ in scenarios]
    acc_grad = [{name: np.zeros(tgrid.size) for name in names} for _ in scenarios]
    for start in range(0, nodes.size, batch):
        ks = nodes[start:start + batch]
        ws = weights[start:start + batch]
        B = L0[None, :, :].astype(complex) - 1j * ks[:, None, None] * V0[None, :, :]
        lam, EV = np.linalg.eig(B)
        rhs = np.stack([np.broadcast_to(f, (ks.size, f.size)) for f in f0s], axis=2)
        w_all = np.linalg.solve(EV, rhs)
        expl = np.exp(lam[:, :, None] * tgrid[None, None, :])
        wk2 = ws * ks**2
        wk4 = ws * ks**4
        for isc in range(len(scenarios)):
            states = EV @ (w_all[:, :, isc, None] * expl)
            amp2 = {}
            for name, row in (("density", psi_b[0]), ("energy", psi_b[4])):
                amp2[name] = np.abs(np.einsum("i,bit->bt", row, states)) ** 2
            mom2 = np.zeros_like(amp2["density"])
            for comp in (1, 2, 3):
                mom2 += np.abs(np.einsum("i,bit->bt", psi_b[comp], states)) ** 2
            amp2["momentum"] = mom2
            micro = states - np.einsum("ij,bjt->bit", P0_b, states)
            amp2["micro"] = np.einsum("bit,bit->bt", micro, micro.conj()).real
            for name in names:
                acc[isc][name] += wk2 @ amp2[name]
                acc_grad[isc][name] += wk4 @ amp2[name]
    out = []
    for isc, scenario in enumerate(scenarios):
        norms = {}
        for name in names:
            norms[name] = np.sqrt(4.0 * np.pi * acc[isc][name])
            norms["grad_" + name] = np.sqrt(4.0 * np.pi * acc_grad[isc][name])
        expected = EXPECTED_RATES[scenario.id]
        slopes = {}
        witnesses = {}
        for name in OBSERVABLES:
            series = norms[name]
            slopes[name] = fit_rate(series, tgrid, config.fit_window)
            rate = -expected[name]
            sel = (tgrid >= config.fit_window[0]) & (tgrid <= config.fit_window[1])
            witness = (1.0 + tgrid[sel]) ** rate * series[sel]
            witnesses[name] = (rate, float(witness.min()), float(witness.max()))
        out.append(DecaySeries(scenario=scenario.id, tgrid=tgrid, norms=norms, slopes=slopes,
                               expected=dict(expected), witnesses=witnesses,
                               n_k_nodes=int(nodes.size), fit_window=config.fit_window))
    return out
