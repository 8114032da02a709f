import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dsmcbf.dynamics import closed_loop_f_pi, prestab_pi
from dsmcbf.errors import ConfigurationError
from dsmcbf.lyapunov import (ConstraintKind as K, ConstraintSpec, DsmSpec, LyapunovFn,
                             OracleGrid, gamma, gamma_i, gamma_star_oracle,
                             reference_admissible, make_dsms)
from dsmcbf.sim import crane_constraints

from conftest import PI, CRANE, THETA_MAX

V = LyapunovFn(CRANE, PI)
CONS = crane_constraints(angle=True)
DSMS = make_dsms(CONS, CRANE, PI)
MGL = CRANE.m_p * CRANE.g * CRANE.L

states = st.tuples(st.floats(-2, 2), st.floats(-1.5, 1.5), st.floats(-3, 3), st.floats(-4, 4))


def fd(fun, s, v, h=1e-6):
    s = np.asarray(s, float)
    g = np.array([(fun(s + h * e, v) - fun(s - h * e, v)) / (2 * h) for e in np.eye(4)])
    return g, (fun(s, v + h) - fun(s, v - h)) / (2 * h)


# -- V -------------------------------------------------------------------------

def test_value_examples():
    assert V.value([0.3, 0, 0, 0], 0.3) == 0.0
    assert V.value([0, 0, 0, 0], 0.1) == pytest.approx(0.005, abs=1e-16)
    assert V.value([0, 0.1, 0, 0], 0.0) == pytest.approx(MGL * (1 - math.cos(0.1)), rel=1e-14)


def test_gradient_examples():
    gx, gv = V.grad([0.2, 0, 0, 0], 0.2)
    assert np.all(gx == 0) and gv == 0
    gx, _ = V.grad([0.0, 0.4, 0.0, 0.0], 0.0)
    assert gx[1] == pytest.approx(MGL * math.sin(0.4), rel=1e-14)


@given(s=states, v=st.floats(-1, 1))
def test_gradient_vs_finite_differences(s, v):
    ga, gva = V.grad(s, v)
    gf, gvf = fd(V.value, s, v)
    scale = max(1.0, np.abs(ga).max(), abs(gva))
    assert np.abs(ga - gf).max() <= 1e-6 * scale
    assert abs(gva - gvf) <= 1e-6 * scale


def test_lower_bound_examples():
    # the pendulum term is bounded below by (4/pi^2) m_p g L theta^2
    assert V.lower_bound([0, 0.5, 0, 0], 0) == pytest.approx(4 / math.pi ** 2 * MGL * 0.25)


def test_lower_bound_below_v_dense(rng):
    n = 100_000
    S = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-1.57, 1.57, n),
                         rng.uniform(-3, 3, n), rng.uniform(-4, 4, n)])
    th = S[:, 1]
    # the two functions share every term except the pendulum one
    assert np.all(4 / math.pi ** 2 * th ** 2 <= 1 - np.cos(th) + 1e-15)
    for s in S[:500]:
        assert V.lower_bound(s, 0.2) <= V.value(s, 0.2) + 1e-12
    t = np.linspace(0, math.pi / 2, 10001, endpoint=False)
    assert np.all(t >= np.sin(t))


# -- thresholds ----------------------------------------------------------------

def test_gamma_examples():
    u = ConstraintSpec(K.INPUT_BOUND, 4.0)
    assert gamma_i(0.0, u, CRANE, PI) == pytest.approx(16 / (2 * 1.01), abs=1e-12)
    assert gamma_i(0.0, u, CRANE, PI) == pytest.approx(7.9208, abs=1e-4)
    assert gamma_i(1.1, ConstraintSpec(K.POSITION_UPPER, 1.1), CRANE, PI) == 0.0
    g5 = gamma_i(0.1, ConstraintSpec(K.PAYLOAD_BOUND, 1.1), CRANE, PI)
    assert g5 == pytest.approx(19.62 / (8 * 0.5 * 9.81 + 0.7 * math.pi ** 2), rel=1e-14)
    assert g5 == pytest.approx(0.42515, abs=1e-5)


def test_angle_threshold_forms():
    a = ConstraintSpec(K.ANGLE_BOUND, THETA_MAX)
    assert gamma_i(0.0, a, CRANE, PI) == pytest.approx(MGL * (1 - math.cos(THETA_MAX)))
    assert gamma_i(0.0, a, CRANE, PI, "linear") == pytest.approx(MGL * (1 - THETA_MAX))
    with pytest.raises(ConfigurationError):
        gamma_i(0.0, a, CRANE, PI, "sine")


def test_position_thresholds_turn_negative_past_the_bound():
    assert gamma_i(1.2, ConstraintSpec(K.POSITION_UPPER, 1.1), CRANE, PI) < 0
    assert gamma_i(-1.2, ConstraintSpec(K.POSITION_LOWER, -1.1), CRANE, PI) < 0
    assert gamma_i(0.0, ConstraintSpec(K.POSITION_LOWER, -1.1), CRANE, PI) == pytest.approx(0.5 * 1.21)


@given(v=st.floats(-3, 3))
def test_threshold_derivatives(v):
    h = 1e-6
    for c in CONS:
        _, d = gamma(v, c, CRANE, PI)
        num = (gamma_i(v + h, c, CRANE, PI) - gamma_i(v - h, c, CRANE, PI)) / (2 * h)
        assert d == pytest.approx(num, abs=1e-6)


def test_gamma_scale_multiplies_threshold():
    c = ConstraintSpec(K.POSITION_UPPER, 1.1, gamma_scale=1.5)
    assert gamma_i(0.5, c, CRANE, PI) == pytest.approx(1.5 * 0.18)
    with pytest.raises(ConfigurationError):
        ConstraintSpec(K.POSITION_UPPER, 1.1, gamma_scale=0.0)


def test_constraint_validation():
    with pytest.raises(ConfigurationError):
        ConstraintSpec(K.ANGLE_BOUND, 2.0)
    with pytest.raises(ConfigurationError):
        ConstraintSpec(K.INPUT_BOUND, -1.0)
    with pytest.raises(ConfigurationError):
        DsmSpec(CONS[0], V, alpha=0.0)


# -- DSMs ----------------------------------------------------------------------

def test_dsm_examples():
    d3 = next(d for d in DSMS if d.index == 3)
    assert d3.value([0, 0, 0, 0], 0.1) == pytest.approx(7.9158, abs=1e-4)
    assert d3.value([0, 0, 0, 0], 0.1) == pytest.approx(16 / 2.02 - 0.005, abs=1e-12)
    for d in DSMS:
        assert d.gamma(0.2) >= 0
        gx, _ = d.gradients([0.2, 0, 0, 0], 0.2)
        assert np.all(gx == 0)


def test_dsm_zero_on_level_set(rng):
    for d in DSMS:
        s = rng.normal(size=4) * [0.1, 0.05, 0.1, 0.1]
        s = s * math.sqrt(d.gamma(0.0) / V.value(s, 0.0))
        # bisection onto V = Gamma along the ray (V is not exactly quadratic in theta)
        lo, hi = 0.0, 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if d.value(mid * s, 0.0) > 0 else (lo, mid)
        assert d.value(lo * s, 0.0) == pytest.approx(0.0, abs=1e-12)


@given(s=states, v=st.floats(-1, 1))
def test_dsm_v_gradient_of_input_margin(s, v):
    d3 = next(d for d in DSMS if d.index == 3)
    assert d3.gradients(s, v)[1] == pytest.approx(PI.kp * (s[0] - v), abs=1e-12)


@given(s=states, v=st.floats(-1, 1))
def test_dsm_gradients_vs_finite_differences(s, v):
    for d in DSMS:
        ga, gva = d.gradients(s, v)
        gf, gvf = fd(d.value, s, v)
        scale = max(1.0, np.abs(ga).max(), abs(gva))
        assert np.abs(ga - gf).max() <= 1e-6 * scale and abs(gva - gvf) <= 1e-6 * scale


@given(s=states, v=st.floats(-1.5, 1.5))
def test_margin_decreases_no_faster_than_zero_under_pi(s, v):
    f = closed_loop_f_pi(s, v, CRANE, PI)
    for d in DSMS:
        gx, _ = d.gradients(s, v)
        assert gx @ f >= -1e-9
        assert gx @ f == pytest.approx(PI.kd * s[2] ** 2, rel=1e-9, abs=1e-12)


def _v_vec(S, v):
    mp, L, g = CRANE.m_p, CRANE.L, CRANE.g
    x, th, xd, thd = S.T
    kin = 0.5 * (1.5 * xd ** 2 - 2 * mp * L * np.cos(th) * xd * thd + mp * L * L * thd ** 2)
    return kin + mp * g * L * (1 - np.cos(th)) + 0.5 * (x - v) ** 2


def test_nonnegative_margins_imply_constraints(rng):
    """Sampled: Delta_i >= 0 puts the state inside constraint i (and |pi| <= u_max for i = 3)."""
    n = 100_000
    S = np.column_stack([rng.uniform(-1.5, 1.5, n), rng.uniform(-0.6, 0.6, n),
                         rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)]) * rng.uniform(0, 1, (n, 1))
    v = rng.uniform(-1.05, 1.05, n)
    Vs = _v_vec(S, v)
    checked = 0
    for c in CONS:
        gam = np.array([gamma_i(float(vi), c, CRANE, PI) for vi in v[:20000]])
        inside = gam - Vs[:20000] >= 0
        sub = S[:20000][inside]
        vv = v[:20000][inside]
        checked += inside.sum()
        if c.kind is K.INPUT_BOUND:
            u = -(sub[:, 0] - vv) - 0.1 * sub[:, 2]
            assert np.all(np.abs(u) <= c.bound)
        else:
            viol = [c.violation(s, None, CRANE.L) for s in sub]
            assert max(viol, default=-1) <= 0
    assert checked > 10_000


def test_nonnegative_margins_imply_admissible_reference(rng):
    for _ in range(2000):
        v = rng.uniform(-1.5, 1.5)
        s = np.array([v, 0, 0, 0]) + rng.normal(size=4) * 0.1
        if all(d.value(s, v) >= 0 for d in DSMS):
            assert reference_admissible(v, CONS, CRANE)


# -- oracle ----------------------------------------------------------------------

def test_oracle_examples():
    up = ConstraintSpec(K.POSITION_UPPER, 1.1)
    assert gamma_star_oracle(0.5, up, CRANE, PI, 21) >= 0.18 * (1 - 1e-9)
    assert gamma_star_oracle(0.5, up, CRANE, PI, 21) == pytest.approx(0.18, rel=1e-6)
    ang = ConstraintSpec(K.ANGLE_BOUND, THETA_MAX)
    assert gamma_star_oracle(0.5, ang, CRANE, PI, 21) == pytest.approx(MGL * (1 - math.cos(THETA_MAX)), rel=0.01)
    pay = ConstraintSpec(K.PAYLOAD_BOUND, 1.1)
    assert gamma_star_oracle(0.1, pay, CRANE, PI, 21) > gamma_i(0.1, pay, CRANE, PI)
    inp = ConstraintSpec(K.INPUT_BOUND, 4.0)
    assert gamma_star_oracle(0.0, inp, CRANE, PI, 21) == pytest.approx(16 / 2.02, rel=1e-6)


def test_oracle_without_unsafe_points_is_inf():
    grid = OracleGrid(points=5, x_half=0.5)
    assert gamma_star_oracle(0.0, ConstraintSpec(K.POSITION_UPPER, 1.1), CRANE, PI, grid) == math.inf
    with pytest.raises(ConfigurationError):
        gamma_star_oracle(0.0, ConstraintSpec(K.POSITION_UPPER, 1.1), CRANE, PI, 1)


def test_oracle_points_are_unsafe():
    for c in CONS:
        res = gamma_star_oracle(0.3, c, CRANE, PI, 15, detail=True)
        assert res.value <= res.grid_value
        s = res.point
        u = prestab_pi(s, 0.3, PI)
        assert c.violation(s, u, CRANE.L) >= -1e-9


def test_thresholds_sound_on_sweep():
    for v in np.linspace(-1.0, 1.1, 8):
        for c in CONS:
            closed = gamma_i(float(v), c, CRANE, PI)
            assert closed <= gamma_star_oracle(float(v), c, CRANE, PI, 21) + 0.02 * abs(closed) + 1e-12
