import numpy as np
import pytest

import oracles
from relboltz.config import DecayConfig
from relboltz.errors import NonpositiveNorm, SlopeFitUnstable, ToolkitError
from relboltz.semigroup import (
    ModeFrame,
    PropagatorCache,
    build_scenario,
    decay_experiment,
    fit_g2_rate,
    fit_rate,
    macro_amplitudes,
    oscillation_adapted_panels,
    propagate,
    split_G1_G2,
)
from relboltz.spectral import assemble_Bk


@pytest.fixture(scope="module")
def cache():
    return PropagatorCache()


class TestPropagate:
    def test_identity_at_t0(self, small_model, cache, rng):
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 0.8)
        f = rng.normal(size=small_model.basis.dim) + 1j * rng.normal(size=small_model.basis.dim)
        out = propagate(Bk, 0.0, f, cache)
        assert np.abs(out.state - f).max() < 1e-12 * np.linalg.norm(f)
        assert out.method == "eig"

    def test_contraction(self, small_model, cache, rng):
        for k in (0.0, 0.5, 1.5):
            Bk = assemble_Bk(small_model.mats, small_model.streaming, k)
            for t in (1.0, 10.0, 100.0):
                f = rng.normal(size=small_model.basis.dim) + 0j
                out = propagate(Bk, t, f, cache)
                assert np.linalg.norm(out.state) <= np.linalg.norm(f) * (1 + 1e-8)

    def test_semigroup_law(self, small_model, cache, rng):
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 0.4)
        f = rng.normal(size=small_model.basis.dim) + 0j
        t, s = 0.012, 0.03
        once = propagate(Bk, t + s, f, cache).state
        twice = propagate(Bk, s, propagate(Bk, t, f, cache).state, cache).state
        assert np.linalg.norm(once - twice) <= 1e-8 * np.linalg.norm(f)

    def test_near_defective_fallback(self, small_model, rng):
        # force the scaling-and-squaring path and check it matches the
        # eigendecomposition route
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 0.6)
        f = rng.normal(size=small_model.basis.dim) + 0j
        strict = PropagatorCache(cond_max=0.0)
        out = propagate(Bk, 0.02, f, strict)
        assert out.method == "expm-near-defective"
        ref = propagate(Bk, 0.02, f, PropagatorCache()).state
        assert np.linalg.norm(out.state - ref) <= 1e-9 * np.linalg.norm(f)


class TestSplit:
    def test_exact_additivity(self, small_model, cache, rng):
        table = small_model.branches
        Bk = assemble_Bk(small_model.mats, small_model.streaming, 0.9)
        f = rng.normal(size=small_model.basis.dim) + 1j * rng.normal(size=small_model.basis.dim)
        t = 0.07
        g1, g2 = split_G1_G2(Bk, t, f, table, cache=cache)
        full = propagate(Bk, t, f, cache).state
        # g2 is defined as the exact difference; re-adding g1 leaves at most
        # one rounding per component
        assert np.abs((g1 + g2) - full).max() <= 1e-14 * np.linalg.norm(f)

    def test_beyond_tau0_g1_vanishes(self, small_model, cache, rng):
        table = small_model.branches
        Bk = assemble_Bk(small_model.mats, small_model.streaming, table.tau0 + 1.0)
        f = rng.normal(size=small_model.basis.dim) + 0j
        g1, g2 = split_G1_G2(Bk, 0.1, f, table, cache=cache)
        assert np.abs(g1).max() == 0.0
        assert np.abs(g2 - propagate(Bk, 0.1, f, cache).state).max() == 0.0

    def test_g2_rate_positive(self, small_model, cache, rng):
        table = small_model.branches
        rates = []
        for k in (0.5, 2.0, 6.0):
            Bk = assemble_Bk(small_model.mats, small_model.streaming, k)
            for _ in range(3):
                f = rng.normal(size=small_model.basis.dim) + \
                    1j * rng.normal(size=small_model.basis.dim)
                f /= np.linalg.norm(f)
                rates.append(fit_g2_rate(Bk, f, table, small_model.mats.muhat, cache))
        rates = np.array(rates)
        assert (rates > 0).all()
        assert (rates.max() - rates.min()) <= 0.5 * rates.mean()


class TestFitRate:
    def test_exact_power_law(self):
        t = np.geomspace(1, 1e4, 40)
        fit = fit_rate(oracles.power_law_series(t, -0.75), t, (1e2, 1e4))
        assert fit.slope == pytest.approx(-0.75, abs=1e-10)

    def test_constant_series(self):
        t = np.geomspace(1, 1e4, 40)
        fit = fit_rate(np.ones_like(t), t, (1e2, 1e4))
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    def test_modulated_power_law(self):
        # log spacing under-samples cos(t); the fitted slope settles near
        # -0.75 once the window holds enough points
        t = np.geomspace(1, 1e4, 1000)
        series = oracles.power_law_series(t, -0.75, lambda s: 2.0 + np.cos(s))
        fit = fit_rate(series, t, (1e2, 1e4))
        assert fit.slope == pytest.approx(-0.75, abs=0.03)

    def test_guards(self):
        t = np.geomspace(1, 1e4, 40)
        with pytest.raises(NonpositiveNorm):
            fit_rate(np.zeros_like(t), t, (1e2, 1e4))
        with pytest.raises(SlopeFitUnstable):
            fit_rate(np.ones(5), np.geomspace(1e2, 1e4, 5), (1e2, 1e4))
        noisy = oracles.power_law_series(t, -0.75) * np.exp(
            3.0 * np.sin(17.0 * np.log(1 + t)))
        with pytest.raises(SlopeFitUnstable):
            fit_rate(noisy, t, (1e2, 1e4), ci_max=0.1)


class TestScenarios:
    def test_generic_hygiene(self, small_model):
        scn = build_scenario("generic", small_model, d0=1.0, k_support=8.0)
        assert scn.checks["psi_prime_overlap"] <= 1e-12
        assert abs(scn.checks["bq_minus_an"]) <= 1e-12
        assert abs(scn.n0) >= scn.d0 * (1 - 1e-12)

    def test_microscopic_hygiene(self, small_model):
        scn = build_scenario("microscopic", small_model, d0=1.0, k_support=8.0)
        assert scn.checks["P0_norm"] <= 1e-12
        assert abs(scn.eta) <= 1e-10
        assert abs(scn.gamma_coef) <= 1e-10
        assert abs(scn.theta_omega) >= scn.d0 * (1 - 1e-10)

    def test_unknown_scenario(self, small_model):
        with pytest.raises(ValueError):
            build_scenario("other", small_model)


def _frame_at(model, k):
    table = model.branches
    lam = {}
    for row, lab in enumerate(table.labels):
        lam[lab] = complex(np.interp(k, table.kgrid, table.lam[row].real),
                           np.interp(k, table.kgrid, table.lam[row].imag))
    return ModeFrame(kmag=k, lam=lam, B1=model.pert.B1, B2=model.pert.B2)


class TestMacroAmplitudes:
    def test_small_k_t0_limit(self, small_model):
        scn = build_scenario("generic", small_model, d0=1.0, k_support=8.0)
        frame = _frame_at(small_model, 1e-4)
        pred = macro_amplitudes(0.0, frame, scn)
        assert pred["density"] == pytest.approx(scn.n0, rel=1e-10)
        assert pred["energy"] == pytest.approx(scn.q0, rel=1e-10)

    @pytest.mark.parametrize("scenario_id,order", [("generic", 0.9), ("microscopic", 1.8)])
    def test_discrepancy_order(self, small_model, cache, scenario_id, order):
        scn = build_scenario(scenario_id, small_model, d0=1.0, k_support=8.0)
        table = small_model.branches
        t = 3.0
        ks = np.array([0.05, 0.1, 0.2, 0.4])
        errs = []
        for k in ks:
            Bk = assemble_Bk(small_model.mats, small_model.streaming, k)
            pred = macro_amplitudes(t, _frame_at(small_model, k), scn)
            g1, _ = split_G1_G2(Bk, t, scn.profile.astype(complex), table, cache=cache)
            got = g1 @ small_model.psi.row(0)
            errs.append(abs(pred["density"] - got) / np.linalg.norm(scn.profile))
        slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
        assert slope >= order


class TestPanels:
    def test_budget_guard(self):
        with pytest.raises(ToolkitError):
            oscillation_adapted_panels(0.5, 1e-5, 16.0, 1e6, max_nodes=1000)

    def test_panel_structure(self):
        nodes, weights = oscillation_adapted_panels(0.5, 3e-4, 4.0, 1e3)
        assert nodes.min() > 0 and nodes.max() < 4.0
        assert weights.sum() == pytest.approx(4.0, rel=1e-12)
        assert np.all(np.diff(nodes) > 0)


@pytest.fixture(scope="module")
def series(small_model):
    scn = build_scenario("generic", small_model, d0=1.0,
                         k_support=small_model.branches.tau0)
    return decay_experiment(scn, small_model, DecayConfig())


class TestDecayExperiment:
    def test_slopes(self, series):
        for name, fit in series.slopes.items():
            assert fit.slope == pytest.approx(series.expected[name], abs=0.05)
            assert fit.ci <= 0.1

    def test_witness_bounds(self, series):
        for name, (rate, lo, hi) in series.witnesses.items():
            assert lo > 0
            assert hi / lo < 2.0

    def test_envelope_nonincreasing_late(self, series):
        sel = series.tgrid >= 1e2
        for name, norm in series.norms.items():
            assert np.all(np.diff(norm[sel]) < 0)
