import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from relboltz.maxwellian import (
    RelVelocity,
    compute_moments,
    maxwellian,
    maxwellian_at,
    p1_per_axis,
)
from relboltz.quadrature import QuadratureSet

QUAD = QuadratureSet()

vec3 = st.lists(st.floats(min_value=-20, max_value=20), min_size=3, max_size=3)


@settings(max_examples=60, deadline=None)
@given(vec3)
def test_relvelocity_invariants(v):
    rv = RelVelocity.from_v(v)
    assert rv.v0 >= 1.0
    assert np.linalg.norm(rv.vhat) < 1.0
    assert abs(rv.v0**2 - (1.0 + rv.v @ rv.v)) < 1e-14 * rv.v0**2


def test_maxwellian_at_rest():
    assert maxwellian((0.0, 0.0, 0.0)) == pytest.approx(np.exp(-1.0), rel=1e-15)


@settings(max_examples=40, deadline=None)
@given(vec3)
def test_maxwellian_even(v):
    assert maxwellian(v) == pytest.approx(maxwellian([-x for x in v]), rel=1e-14)
    assert maxwellian(v) > 0


def test_maxwellian_monotone_decay():
    r = np.linspace(0, 40, 200)
    vals = maxwellian_at(np.stack([r, 0 * r, 0 * r], axis=1))
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-14


def test_moments_against_bessel_oracles():
    m = compute_moments(QUAD)
    assert m.p0 == pytest.approx(oracles.P0_REF, rel=1e-8)
    assert m.p2 == pytest.approx(oracles.P2_REF, rel=1e-8)
    assert m.p1 == pytest.approx(oracles.P1_REF, rel=1e-8)
    assert m.p3 == pytest.approx(oracles.P3_REF, rel=1e-7)
    assert min(m.p0, m.p1, m.p2, m.p3) > 0
    # the Bessel formulas themselves are reproducible from scipy
    assert oracles.bessel_p0() == pytest.approx(oracles.P0_REF, rel=1e-12)
    assert oracles.bessel_p2() == pytest.approx(oracles.P2_REF, rel=1e-12)
    assert oracles.bessel_q2() == pytest.approx(oracles.Q2_REF, rel=1e-12)
    assert oracles.adaptive_moment(0) == pytest.approx(oracles.P0_REF, rel=1e-10)


def test_p1_isotropy():
    vals = p1_per_axis(QUAD)
    assert np.ptp(vals) < 1e-12 * vals.mean()


def test_moments_tolerance_check_triggers():
    from relboltz.errors import ToleranceNotMet

    coarse = QuadratureSet(n_radial=4)
    with pytest.raises(ToleranceNotMet):
        compute_moments(coarse, rtol=1e-12)


class TestNullSpace:
    def test_gram_identity(self, small_model):
        psi = small_model.psi
        assert np.abs(psi.gram - np.eye(5)).max() < 1e-10

    def test_psi0_psi4_orthogonal(self, small_model):
        psi = small_model.psi
        assert abs(psi.row(0) @ psi.row(4)) < 1e-12

    def test_null_residual_under_L(self, small_model):
        mats = small_model.mats
        resid = np.abs(mats.Lmat @ small_model.psi.psi.T).max()
        assert resid <= 1e-6 * mats.norm


class TestFluidConstants:
    def test_values_against_adaptive_oracles(self, small_model):
        c = small_model.consts
        assert c.b == pytest.approx(oracles.B_REF, rel=1e-8)
        assert c.a == pytest.approx(oracles.A_REF, rel=1e-8)
        assert oracles.adaptive_b() == pytest.approx(oracles.B_REF, rel=1e-10)

    def test_positivity_and_sound_speed(self, small_model):
        c = small_model.consts
        assert c.a > 0 and c.b > 0
        assert c.u[0] == pytest.approx(np.hypot(c.a, c.b), rel=1e-14)
        assert c.u[2] == -c.u[0]
        assert c.u[1] == 0.0
