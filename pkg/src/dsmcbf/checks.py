"""Randomized property checks shared by ``dsmcbf selftest`` and the test suite.

Each check returns a :class:`CheckResult`; none of them raises on a failed
property, only on programming errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import CraneParams, closed_loop_f_pi, crane_dynamics, drift, input_gain
from .filters import AugmentedState, feasibility_witness_holds
from .lyapunov import ConstraintKind, LyapunovFn
from .qp import QpProblem, solve_qp
from .sim import ScenarioConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def admissible_reference_range(cfg: ScenarioConfig, shrink: float = 0.05) -> tuple[float, float]:
    """Interval of references whose equilibrium satisfies every constraint, shrunk inward."""
    lo, hi = -math.inf, math.inf
    for c in cfg.constraints:
        if c.kind is ConstraintKind.POSITION_LOWER:
            lo = max(lo, c.bound)
        elif c.kind in (ConstraintKind.POSITION_UPPER, ConstraintKind.PAYLOAD_BOUND):
            hi = min(hi, c.bound)
    lo = -2.0 if not math.isfinite(lo) else lo + shrink
    hi = 2.0 if not math.isfinite(hi) else hi - shrink
    return lo, hi


def sample_safe_states(cfg: ScenarioConfig, n: int, rng: np.random.Generator,
                       max_tries: int = 10000) -> list[AugmentedState]:
    """Random augmented states with every DSM strictly positive.

    References are uniform over the admissible interval; plant states are
    drawn from a box sized by the smallest threshold at that reference and
    kept only when all margins are positive.
    """
    dsms = cfg.dsms()
    p = cfg.params
    kp = cfg.pi_gains.kp
    lo, hi = admissible_reference_range(cfg)
    out = []
    for _ in range(max_tries * n):
        if len(out) == n:
            break
        v = rng.uniform(lo, hi)
        gmin = min(d.gamma(v) for d in dsms)
        if not gmin > 0:
            continue
        half = np.array([math.sqrt(2 * gmin / kp),
                         min(math.acos(max(-1.0, 1 - gmin / (p.m_p * p.g * p.L))), 1.5),
                         math.sqrt(2 * gmin / p.m_c), math.sqrt(2 * gmin / (p.m_p * p.L ** 2))])
        d = rng.uniform(-1.0, 1.0, 4) * half
        s = np.array([v + d[0], d[1], d[2], d[3]])
        if all(dd.value(s, v) > 0 for dd in dsms):
            out.append(AugmentedState(s, v))
    if len(out) < n:
        raise RuntimeError(f"only {len(out)} of {n} safe states found")
    return out


def check_witness(cfg: ScenarioConfig, n: int, rng) -> CheckResult:
    """``(pi(x, v), 0)`` satisfies every DSM inequality and the input box."""
    dsms = cfg.dsms()
    u_max = next((c.bound for c in cfg.constraints if c.kind is ConstraintKind.INPUT_BOUND), None)
    fails = sum(not feasibility_witness_holds(a, dsms, cfg.params, cfg.pi_gains, u_max)
                for a in sample_safe_states(cfg, n, rng))
    return CheckResult("control-sharing witness", fails == 0, f"{fails} failures in {n} states")


def _fd_grad(fun, s, v, h=1e-6):
    g = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        g[i] = (fun(s + e, v) - fun(s - e, v)) / (2 * h)
    return g, (fun(s, v + h) - fun(s, v - h)) / (2 * h)


def check_gradients(cfg: ScenarioConfig, n: int, rng, rtol: float = 1e-5) -> CheckResult:
    """Analytic gradients of V and of every DSM against central differences."""
    V = LyapunovFn(cfg.params, cfg.pi_gains)
    dsms = cfg.dsms()
    worst = 0.0
    for _ in range(n):
        s = np.array([rng.uniform(-2, 2), rng.uniform(-1.4, 1.4), rng.uniform(-3, 3),
                      rng.uniform(-4, 4)])
        v = rng.uniform(-1, 1)
        pairs = [(V.grad(s, v), _fd_grad(V.value, s, v))]
        pairs += [(d.gradients(s, v), _fd_grad(d.value, s, v)) for d in dsms]
        for (ga, gva), (gf, gvf) in pairs:
            a = np.append(ga, gva)
            f = np.append(gf, gvf)
            scale = max(1.0, np.abs(a).max())
            worst = max(worst, np.abs(a - f).max() / scale)
    return CheckResult("gradients vs finite differences", worst <= rtol,
                       f"max relative error {worst:.2e} over {n} points")


def check_energy_decrease(cfg: ScenarioConfig, rng, steps: int = 2000, runs: int = 5,
                          tol: float = 1e-7) -> CheckResult:
    """V is non-increasing along prestabilized trajectories with a constant reference."""
    from ._backend import kernels

    V = LyapunovFn(cfg.params, cfg.pi_gains)
    worst = -math.inf
    g = cfg.pi_gains
    for _ in range(runs):
        v = rng.uniform(-1, 1)
        s = (v + rng.uniform(-1, 1), rng.uniform(-0.8, 0.8), rng.uniform(-1, 1),
             rng.uniform(-1, 1))
        prev = V.value(s, v)
        for _ in range(steps):
            s = kernels.crane_rk4_pd(s, v, g.kp, g.kd, cfg.dt, *cfg.params.tuple)
            cur = V.value(s, v)
            worst = max(worst, cur - prev)
            prev = cur
    return CheckResult("V non-increasing under pi", worst <= tol,
                       f"largest per-step increase {worst:.2e} J")


def _grid_qp_oracle(H, f, A, b, lo=-10.0, hi=10.0, step=1e-2):
    xs = np.arange(lo, hi + step / 2, step)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    Z = np.stack([X.ravel(), Y.ravel()], axis=1)
    ok = np.all(Z @ A.T + b >= 0, axis=1)
    if not ok.any():
        return None
    Zf = Z[ok]
    cost = 0.5 * np.einsum("ij,jk,ik->i", Zf, H, Zf) + Zf @ f
    return Zf[int(np.argmin(cost))]


def _refine(z, H, f, A, b):
    from scipy.optimize import minimize

    res = minimize(lambda x: 0.5 * x @ H @ x + f @ x, z, jac=lambda x: H @ x + f,
                   constraints=[{"type": "ineq", "fun": lambda x: A @ x + b,
                                 "jac": lambda x: A}],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    return res.x


def random_qp(rng, m_max: int = 6) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Random strictly convex 2-variable QP whose feasible set meets [-5, 5]^2."""
    L = rng.normal(size=(2, 2))
    H = L @ L.T + 0.5 * np.eye(2)
    f = rng.normal(scale=3.0, size=2)
    m = int(rng.integers(1, m_max + 1))
    A = rng.normal(size=(m, 2))
    anchor = rng.uniform(-5, 5, 2)
    b = -(A @ anchor) + rng.uniform(0.0, 2.0, m)
    return H, f, A, b


def check_qp_oracle(n: int, rng, cost_tol: float = 1e-6) -> CheckResult:
    """Solver minimizer against a grid search refined by projected local search."""
    worst = 0.0
    for _ in range(n):
        H, f, A, b = random_qp(rng)
        sol = solve_qp(QpProblem(H, f, A, b))
        z0 = _grid_qp_oracle(H, f, A, b, step=0.05)
        if z0 is None or not sol.optimal:
            if sol.optimal == (z0 is None):
                return CheckResult("QP vs grid oracle", False, "feasibility disagreement")
            continue
        z = _refine(z0, H, f, A, b)
        if np.min(A @ z + b) < -1e-9:
            z = z0
        c_or = 0.5 * z @ H @ z + f @ z
        c_qp = 0.5 * sol.z @ H @ sol.z + f @ sol.z
        worst = max(worst, c_qp - c_or)
    return CheckResult("QP vs grid oracle", worst <= cost_tol,
                       f"worst cost excess {worst:.2e} over {n} problems")


def check_control_affine(params: CraneParams, n: int, rng) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        s = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(-3, 3),
                      rng.uniform(-4, 4)])
        u = rng.uniform(-10, 10)
        diff = crane_dynamics(s, u, params) - (drift(s, params) + input_gain(s, params) * u)
        worst = max(worst, np.abs(diff).max())
    return CheckResult("control-affine split", worst <= 1e-12, f"max mismatch {worst:.2e}")


def check_passivity(cfg: ScenarioConfig, n: int, rng) -> CheckResult:
    """dV/dx . f_pi equals -kd xdot^2 (so it is never positive)."""
    V = LyapunovFn(cfg.params, cfg.pi_gains)
    worst = 0.0
    for _ in range(n):
        s = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(-3, 3),
                      rng.uniform(-4, 4)])
        v = rng.uniform(-1, 1)
        vdot = V.grad(s, v)[0] @ closed_loop_f_pi(s, v, cfg.params, cfg.pi_gains)
        worst = max(worst, abs(vdot + cfg.pi_gains.kd * s[2] ** 2) / max(1.0, abs(vdot)))
    return CheckResult("Vdot = -kd xdot^2 under pi", worst <= 1e-9, f"max mismatch {worst:.2e}")


def run_selftest(cfg: ScenarioConfig, seed: int = 0, quick: bool = True) -> list[CheckResult]:
    """Property suite on the given scenario (all checks use one seeded generator)."""
    rng = np.random.default_rng(seed)
    k = 1 if quick else 10
    return [
        check_control_affine(cfg.params, 200 * k, rng),
        check_passivity(cfg, 200 * k, rng),
        check_gradients(cfg, 100 * k, rng),
        check_witness(cfg, 1000 * k, rng),
        check_energy_decrease(cfg, rng, runs=2 * k),
        check_qp_oracle(50 * k, rng),
    ]


__all__ = ["CheckResult", "sample_safe_states", "admissible_reference_range", "check_witness",
           "check_gradients", "check_energy_decrease", "check_qp_oracle", "check_control_affine",
           "check_passivity", "run_selftest", "random_qp"]
