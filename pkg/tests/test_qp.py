import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsmcbf import qp as qpmod
from dsmcbf._backend import get_kernels
from dsmcbf.checks import _refine, random_qp
from dsmcbf.errors import ConfigurationError, SolverFailure
from dsmcbf.qp import (QpProblem, QpStatus, check_certificate, kkt_residuals,
                       phase1_feasibility, solve_qp)

from conftest import BACKENDS


@pytest.fixture(params=BACKENDS, autouse=True)
def backend(request, monkeypatch):
    monkeypatch.setattr(qpmod, "kernels", get_kernels(request.param))
    return request.param


def test_unconstrained():
    sol = solve_qp(QpProblem(np.eye(3), np.zeros(3)))
    assert sol.optimal and np.all(sol.z == 0)


def test_single_constraint_by_hand():
    sol = solve_qp(QpProblem(np.eye(2), [-2.0, 0.0], [[-1.0, 0.0]], [1.0]))
    np.testing.assert_allclose(sol.z, [1.0, 0.0], atol=1e-12)
    assert sol.active_set == (0,)
    np.testing.assert_allclose(sol.multipliers, [1.0], atol=1e-12)


def test_contradictory_halfplanes_certificate():
    A, b = [[1.0], [-1.0]], [-1.0, 0.0]
    sol = solve_qp(QpProblem(np.eye(1), [0.0], A, b))
    assert sol.status is QpStatus.INFEASIBLE
    y = sol.certificate
    np.testing.assert_allclose(y / y[0], [1.0, 1.0], atol=1e-12)
    assert check_certificate(A, b, y)


def test_phase1_examples():
    res = phase1_feasibility(np.zeros((0, 2)), [], n=2)
    assert res.feasible and np.all(res.point == 0)
    res = phase1_feasibility([[1.0], [-1.0]], [-1.0, 2.0])
    assert res.feasible and 1.0 - 1e-12 <= res.point[0] <= 2.0 + 1e-12


def test_box_bounds_and_certificate_ordering():
    # u <= 1 from a general row, box u >= 2: rows are [general, lb]
    sol = solve_qp(QpProblem(np.eye(1), [0.0], [[-1.0]], [1.0], lb=[2.0], ub=[5.0]))
    assert not sol.optimal
    assert sol.certificate[0] > 0 and sol.certificate[1] > 0 and sol.certificate[2] == 0


def test_rejects_indefinite_and_malformed():
    with pytest.raises(ConfigurationError):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), [0, 0]))
    with pytest.raises(ConfigurationError):
        solve_qp(QpProblem([[1.0, 0.5], [0.0, 1.0]], [0, 0]))
    with pytest.raises(ConfigurationError):
        QpProblem(np.eye(2), [0, 0], [[1.0, 0.0]], [1.0, 2.0])


def test_iteration_cap():
    with pytest.raises(SolverFailure):
        solve_qp(QpProblem(np.eye(2), [-2.0, 0.0], [[-1.0, 0.0]], [1.0]), max_iter=0)


def test_determinism():
    rng = np.random.default_rng(3)
    H, f, A, b = random_qp(rng)
    a, c = solve_qp(QpProblem(H, f, A, b)), solve_qp(QpProblem(H.copy(), f.copy(), A.copy(), b.copy()))
    assert a.z.tobytes() == c.z.tobytes() and a.active_set == c.active_set


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_kkt_residuals_on_random_problems(seed):
    rng = np.random.default_rng(seed)
    H, f, A, b = random_qp(rng)
    sol = solve_qp(QpProblem(H, f, A, b))
    assert sol.optimal
    res = kkt_residuals(H, f, A, b, sol.z, sol.multipliers)
    assert all(val <= 1e-8 for val in res.values()), res


def _grid(A, b, step):
    xs = np.arange(-10, 10 + step / 2, step)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], 1)


@settings(max_examples=40)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_feasibility_agrees_with_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 6))
    A = rng.normal(size=(m, 2))
    b = rng.uniform(-15, 5, m)
    Z = _grid(A, b, 0.01)
    slack = Z @ A.T + b
    diam = 0.01 * np.sqrt(2) * np.linalg.norm(A, axis=1)
    grid_strict = np.any(np.all(slack >= diam, axis=1))
    grid_any = np.any(np.all(slack >= 0, axis=1))
    res = phase1_feasibility(A, b)
    if grid_strict:
        assert res.feasible
    if res.feasible:
        assert np.all(A @ res.point + b >= -1e-9)
        if np.abs(res.point).max() < 9.99:
            assert grid_any or np.min(A @ res.point + b) < np.max(diam)
    else:
        assert check_certificate(A, b, res.certificate) and not grid_any


def test_minimizer_matches_fine_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        H, f, A, b = random_qp(rng)
        sol = solve_qp(QpProblem(H, f, A, b))
        Z = _grid(A, b, 0.05)
        Z = Z[np.all(Z @ A.T + b >= 0, axis=1)]
        cost = 0.5 * np.einsum("ij,jk,ik->i", Z, H, Z) + Z @ f
        z0 = Z[np.argmin(cost)]
        # 1e-3 grid around the coarse argmin, then local refinement
        xs = np.arange(-0.06, 0.06 + 5e-4, 1e-3)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        Z = z0 + np.stack([X.ravel(), Y.ravel()], 1)
        Z = Z[np.all(Z @ A.T + b >= 0, axis=1)]
        cost = 0.5 * np.einsum("ij,jk,ik->i", Z, H, Z) + Z @ f
        z1 = Z[np.argmin(cost)]
        z2 = _refine(z1, H, f, A, b)
        if np.min(A @ z2 + b) < -1e-9:
            z2 = z1
        c2 = 0.5 * z2 @ H @ z2 + f @ z2
        cq = 0.5 * sol.z @ H @ sol.z + f @ sol.z
        assert np.linalg.norm(sol.z - z2) <= 1e-2
        assert cq <= c2 + 1e-6
