"""Both kernel backends against each other and against independent oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dsmcbf._backend import BACKEND, get_kernels
from dsmcbf.errors import ModelDomainError, SolverFailure

from conftest import BACKENDS, CRANE

P = CRANE.tuple

states = st.tuples(st.floats(-2, 2), st.floats(-1.5, 1.5), st.floats(-3, 3), st.floats(-4, 4))


def oracle_rhs(s, u):
    """Explicit 2x2 solve of M qdd = B u - Vm qd - G."""
    mc, mp, L, g = P
    x, th, xd, thd = s
    M = np.array([[mc + mp, -mp * L * math.cos(th)], [-mp * L * math.cos(th), mp * L * L]])
    rhs = np.array([u - mp * L * thd * math.sin(th) * thd, -mp * g * L * math.sin(th)])
    qdd = np.linalg.solve(M, rhs)
    return np.array([xd, thd, qdd[0], qdd[1]])


def test_backend_selection_reports_name():
    assert BACKEND in ("c", "python")
    with pytest.raises(ValueError):
        get_kernels("fortran")


@given(s=states, u=st.floats(-10, 10))
def test_rhs_matches_linear_solve_oracle(kern, s, u):
    np.testing.assert_allclose(kern.crane_rhs(s, u, *P), oracle_rhs(s, u), rtol=1e-12, atol=1e-12)


@given(s=states)
def test_input_gain_is_rhs_difference(kern, s):
    g = np.array(kern.crane_input_gain(s, *P[:3]))
    diff = np.array(kern.crane_rhs(s, 1.0, *P)) - np.array(kern.crane_rhs(s, 0.0, *P))
    np.testing.assert_allclose(g, diff, atol=1e-12)


def test_rhs_rejects_domain_exit(kern):
    with pytest.raises(ModelDomainError):
        kern.crane_rhs((0.0, math.pi / 2, 0.0, 0.0), 0.0, *P)


@given(s=states, u=st.floats(-5, 5))
def test_rk4_step_matches_generic_rk4(kern, s, u):
    dt = 1e-2
    y = np.array(s)

    def f(z):
        return oracle_rhs(z, u)

    k1 = f(y)
    k2 = f(y + dt / 2 * k1)
    k3 = f(y + dt / 2 * k2)
    k4 = f(y + dt * k3)
    ref = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(kern.crane_rk4(s, u, dt, *P), ref, rtol=1e-11, atol=1e-12)


@given(s=states, v=st.floats(-1, 1))
def test_rk4_pd_reevaluates_law_each_stage(kern, s, v):
    kp, kd, dt = 1.0, 0.1, 1e-2
    y = np.array(s)

    def f(z):
        return oracle_rhs(z, -kp * (z[0] - v) - kd * z[2])

    k1 = f(y)
    k2 = f(y + dt / 2 * k1)
    k3 = f(y + dt / 2 * k2)
    k4 = f(y + dt * k3)
    ref = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(kern.crane_rk4_pd(s, v, kp, kd, dt, *P), ref, rtol=1e-11, atol=1e-12)


@given(s=states, v=st.floats(-1, 1))
def test_lyap_value_matches_formula(kern, s, v):
    mc, mp, L, g = P
    x, th, xd, thd = s
    M = np.array([[mc + mp, -mp * L * math.cos(th)], [-mp * L * math.cos(th), mp * L * L]])
    qd = np.array([xd, thd])
    ref = 0.5 * qd @ M @ qd + mp * g * L * (1 - math.cos(th)) + 0.5 * (x - v) ** 2
    assert kern.lyap_value(s, v, *P, 1.0) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_grid_scan_reports_inf_when_no_unsafe_point(kern):
    ax = [np.linspace(-0.5, 0.5, 5)] * 4
    best, *idx = kern.grid_scan(kern.KIND_POS_UPPER, 1.1, 0.0, 1.0, 0.1, *P, *ax)
    assert best == math.inf and idx == [-1, -1, -1, -1]


def test_active_set_iteration_cap_raises(kern):
    H = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(SolverFailure):
        kern.qp_active_set(H, [-2.0, 0.0], [[-1.0, 0.0]], [1.0], [0.0, 0.0], 1e-8, 0)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
class TestBackendParity:
    py = get_kernels("python")

    @property
    def c(self):
        return get_kernels("c")

    @given(s=states, u=st.floats(-10, 10), v=st.floats(-1, 1))
    def test_dynamics_and_lyapunov(self, s, u, v):
        c, py = self.c, self.py
        np.testing.assert_allclose(c.crane_rhs(s, u, *P), py.crane_rhs(s, u, *P), rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(c.crane_rk4(s, u, 1e-3, *P), py.crane_rk4(s, u, 1e-3, *P),
                                   rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(c.lyap_grad(s, v, *P, 1.0), py.lyap_grad(s, v, *P, 1.0),
                                   rtol=1e-13, atol=1e-14)
        for kind in range(5):
            assert c.is_unsafe(kind, 1.1 if kind != 3 else 0.17, v, 1.0, 0.1, P[2], s) == \
                py.is_unsafe(kind, 1.1 if kind != 3 else 0.17, v, 1.0, 0.1, P[2], s)

    def test_grid_scan(self):
        ax = [np.linspace(-2, 2, 9), np.linspace(-1.5, 1.5, 9), np.linspace(-3, 3, 9),
              np.linspace(-4, 4, 9)]
        for kind, bound in ((0, -1.1), (1, 1.1), (2, 4.0), (3, 0.17), (4, 1.1)):
            a = self.c.grid_scan(kind, bound, 0.3, 1.0, 0.1, *P, *ax)
            b = self.py.grid_scan(kind, bound, 0.3, 1.0, 0.1, *P, *ax)
            assert a[1:] == b[1:] and a[0] == pytest.approx(b[0], rel=1e-13)

    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_qp_kernels(self, seed):
        r = np.random.default_rng(seed)
        m = int(r.integers(1, 7))
        A = r.normal(size=(m, 2))
        b = -(A @ r.uniform(-3, 3, 2)) + r.uniform(-1, 2, m)
        oc, wc = self.c.ldp(A.tolist(), (-b).tolist())
        op, wp = self.py.ldp(A.tolist(), (-b).tolist())
        assert oc == op
        np.testing.assert_allclose(wc, wp, rtol=1e-9, atol=1e-10)
        if oc:
            L = r.normal(size=(2, 2))
            H = (L @ L.T + 0.5 * np.eye(2)).tolist()
            f = r.normal(size=2).tolist()
            zc, Wc, _, _ = self.c.qp_active_set(H, f, A.tolist(), b.tolist(), wc, 1e-8, 200)
            zp, Wp, _, _ = self.py.qp_active_set(H, f, A.tolist(), b.tolist(), wp, 1e-8, 200)
            assert list(Wc) == list(Wp)
            np.testing.assert_allclose(zc, zp, rtol=1e-9, atol=1e-10)
