"""Crane Lyapunov function, threshold functions and Lyapunov-based safety margins.

A dynamic safety margin (DSM) is ``Gamma(v) - V(x, v)``: the gap between the
largest safe level of the Lyapunov function at reference ``v`` and its current
value. The closed-form thresholds below are checked against the brute-force
:func:`gamma_star_oracle`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ._backend import kernels
from .dynamics import CraneParams, PdGains, _seq, check_domain
from .errors import ConfigurationError


class ConstraintKind(str, Enum):
    POSITION_LOWER = "position-lower"
    POSITION_UPPER = "position-upper"
    INPUT_BOUND = "input-bound"
    ANGLE_BOUND = "angle-bound"
    PAYLOAD_BOUND = "payload-bound"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @property
    def index(self) -> int:
        """1-based constraint number (1..5) used throughout logs and configs."""
        return _KIND_CODES[self] + 1


_KIND_CODES = {
    ConstraintKind.POSITION_LOWER: 0,
    ConstraintKind.POSITION_UPPER: 1,
    ConstraintKind.INPUT_BOUND: 2,
    ConstraintKind.ANGLE_BOUND: 3,
    ConstraintKind.PAYLOAD_BOUND: 4,
}


@dataclass(frozen=True)
class ConstraintSpec:
    """One scalar constraint.

    ``bound`` carries the signed limit for position constraints (``x >= bound``
    or ``x <= bound``), the force magnitude for the input bound, the angle in
    radians for the angle bound and ``p_max`` for the payload bound.
    ``gamma_scale`` multiplies the closed-form threshold; values below 1 trade
    performance for extra margin, values above 1 are unsound and exist to
    exercise the threshold verifier.
    """

    kind: ConstraintKind
    bound: float
    gamma_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        if not self.gamma_scale > 0:
            raise ConfigurationError("gamma_scale must be positive")
        if self.kind is ConstraintKind.INPUT_BOUND and not self.bound > 0:
            raise ConfigurationError("u_max must be positive")
        if self.kind is ConstraintKind.ANGLE_BOUND and not 0 < self.bound < math.pi / 2:
            raise ConfigurationError("theta_max must lie in (0, pi/2)")
        if self.kind is ConstraintKind.PAYLOAD_BOUND and not self.bound > 0:
            raise ConfigurationError("p_max must be positive")

    def holds(self, s, u: float | None = None, L: float | None = None, tol: float = 0.0) -> bool:
        """Whether the plant state (and input, for the input bound) satisfies the constraint."""
        return self.violation(s, u, L) <= tol

    def violation(self, s, u: float | None = None, L: float | None = None) -> float:
        """Signed amount by which the constraint is exceeded (negative when satisfied)."""
        k = self.kind
        if k is ConstraintKind.POSITION_LOWER:
            return self.bound - s[0]
        if k is ConstraintKind.POSITION_UPPER:
            return s[0] - self.bound
        if k is ConstraintKind.INPUT_BOUND:
            if u is None:
                raise ValueError("input constraint needs u")
            return abs(u) - self.bound
        if k is ConstraintKind.ANGLE_BOUND:
            return abs(s[1]) - self.bound
        if L is None:
            raise ValueError("payload constraint needs L")
        return s[0] + L * math.sin(s[1]) - self.bound


@dataclass(frozen=True)
class LyapunovFn:
    """``V = 1/2 qdot' M(q) qdot + m_p g L (1 - cos theta) + 1/2 kp (x - v)^2``.

    Built from the gains of the controller it certifies (the prestabilizing
    law for the DSM-CBF filter, the nominal law for the ERG).
    """

    params: CraneParams
    gains: PdGains

    def value(self, s, v: float) -> float:
        p = self.params
        return kernels.lyap_value(_seq(s), float(v), p.m_c, p.m_p, p.L, p.g, self.gains.kp)

    __call__ = value

    def grad(self, s, v: float) -> tuple[np.ndarray, float]:
        """Analytic ``(dV/dx, dV/dv)``."""
        p = self.params
        gr = kernels.lyap_grad(_seq(s), float(v), p.m_c, p.m_p, p.L, p.g, self.gains.kp)
        return np.array(gr[:4]), gr[4]

    def lower_bound(self, s, v: float) -> float:
        """Quadratic under-estimator obtained with ``1 - cos t >= 2 t^2 / pi^2``."""
        p = self.params
        x, th, xd, thd = s
        M = np.array([[p.m_c + p.m_p, -p.m_p * p.L * math.cos(th)],
                      [-p.m_p * p.L * math.cos(th), p.m_p * p.L ** 2]])
        qd = np.array([xd, thd])
        return (0.5 * qd @ M @ qd + 4.0 / math.pi ** 2 * p.m_p * p.g * p.L * th ** 2
                + 0.5 * self.gains.kp * (x - v) ** 2)


def lyap_value(s, v: float, V: LyapunovFn) -> float:
    return V.value(s, v)


def lyap_grad(s, v: float, V: LyapunovFn) -> tuple[np.ndarray, float]:
    return V.grad(s, v)


# -- thresholds ----------------------------------------------------------------
#
# Position and payload thresholds use the signed square d*|d| of the distance
# from the reference to the bound. On the admissible side this is the usual
# quadratic; beyond the bound it turns negative so the margin can never be
# non-negative for an inadmissible reference. The result stays C^1.


def _signed_sq(d: float) -> tuple[float, float]:
    """d*|d| and its derivative 2|d|."""
    return d * abs(d), 2.0 * abs(d)


def payload_gain(params: CraneParams, gains: PdGains) -> float:
    p, kp = params, gains.kp
    return 4.0 * kp * p.m_p * p.g / (8.0 * p.m_p * p.g + p.L * kp * math.pi ** 2)


def gamma(v: float, spec: ConstraintSpec, params: CraneParams, gains: PdGains,
          angle_form: str = "cosine") -> tuple[float, float]:
    """Closed-form threshold ``Gamma_i(v)`` and its derivative in ``v``."""
    val, der = _gamma_unscaled(v, spec, params, gains, angle_form)
    return spec.gamma_scale * val, spec.gamma_scale * der


def _gamma_unscaled(v, spec, params, gains, angle_form):
    kp, kd = gains.kp, gains.kd
    k = spec.kind
    if k is ConstraintKind.POSITION_LOWER:
        s, ds = _signed_sq(v - spec.bound)
        return 0.5 * kp * s, 0.5 * kp * ds
    if k is ConstraintKind.POSITION_UPPER:
        s, ds = _signed_sq(spec.bound - v)
        return 0.5 * kp * s, -0.5 * kp * ds
    if k is ConstraintKind.INPUT_BOUND:
        mc = params.m_c
        return mc * spec.bound ** 2 / (2.0 * (mc * kp + kd ** 2)), 0.0
    if k is ConstraintKind.ANGLE_BOUND:
        base = params.m_p * params.g * params.L
        if angle_form == "cosine":
            return base * (1.0 - math.cos(spec.bound)), 0.0
        if angle_form == "linear":
            return base * (1.0 - spec.bound), 0.0
        raise ConfigurationError(f"unknown angle threshold form {angle_form!r}")
    c = payload_gain(params, gains)
    s, ds = _signed_sq(spec.bound - v)
    return c * s, -c * ds


def gamma_i(v: float, spec: ConstraintSpec, params: CraneParams, gains: PdGains,
            angle_form: str = "cosine") -> float:
    return gamma(v, spec, params, gains, angle_form)[0]


@dataclass(frozen=True)
class DsmSpec:
    """Lyapunov DSM for one constraint, with its linear class-K gain ``alpha``."""

    constraint: ConstraintSpec
    V: LyapunovFn
    alpha: float = 1.0
    angle_form: str = "cosine"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("class-K gain alpha must be positive")

    @property
    def index(self) -> int:
        return self.constraint.kind.index

    def gamma(self, v: float) -> float:
        return gamma(v, self.constraint, self.V.params, self.V.gains, self.angle_form)[0]

    def value(self, s, v: float) -> float:
        return self.gamma(v) - self.V.value(s, v)

    def gradients(self, s, v: float) -> tuple[np.ndarray, float]:
        _, dgam = gamma(v, self.constraint, self.V.params, self.V.gains, self.angle_form)
        dVdx, dVdv = self.V.grad(s, v)
        return -dVdx, dgam - dVdv

    def with_gains(self, gains: PdGains) -> "DsmSpec":
        """Same constraint rebuilt around a different PD law (thresholds included)."""
        return replace(self, V=LyapunovFn(self.V.params, gains))

    def with_alpha(self, alpha: float) -> "DsmSpec":
        return replace(self, alpha=alpha)


def dsm_value(s, v: float, d: DsmSpec) -> float:
    return d.value(s, v)


def dsm_gradients(s, v: float, d: DsmSpec) -> tuple[np.ndarray, float]:
    return d.gradients(s, v)


def make_dsms(constraints, params: CraneParams, gains: PdGains, alphas=None,
              angle_form: str = "cosine") -> list[DsmSpec]:
    V = LyapunovFn(params, gains)
    alphas = alphas or {}
    return [DsmSpec(c, V, alphas.get(c.kind.index, 1.0), angle_form) for c in constraints]


# -- brute-force threshold oracle ----------------------------------------------


@dataclass(frozen=True)
class OracleGrid:
    """Box and per-axis point count of the unsafe-set search grid."""

    points: int = 61
    x_half: float = 2.0
    theta_half: float = 0.5 * math.pi * 0.999
    xdot_half: float = 3.0
    thetadot_half: float = 4.0

    def axes(self):
        n = self.points
        return (np.linspace(-self.x_half, self.x_half, n),
                np.linspace(-self.theta_half, self.theta_half, n),
                np.linspace(-self.xdot_half, self.xdot_half, n),
                np.linspace(-self.thetadot_half, self.thetadot_half, n))


@dataclass
class OracleResult:
    value: float
    point: np.ndarray | None = None
    grid_value: float = math.inf
    steps: list = field(default_factory=list)


def _unsafe(spec: ConstraintSpec, s, v, params, gains) -> bool:
    return bool(kernels.is_unsafe(spec.kind.code, spec.bound, float(v), gains.kp, gains.kd,
                                  params.L, _seq(s)))


def gamma_star_oracle(v: float, spec: ConstraintSpec, params: CraneParams, gains: PdGains,
                      resolution: int | OracleGrid = 61, refine: bool = True,
                      detail: bool = False):
    """Numerical infimum of ``V(., v)`` over the unsafe set of one constraint.

    Scans a dense grid, then walks downhill from the best grid point with
    coordinate moves that stay unsafe, and finally polishes on the boundary
    with SLSQP. Every accepted point is unsafe (or on the boundary within
    1e-12), so the result never undercuts the true infimum by more than the
    polish tolerance. Returns ``inf`` when no grid point is unsafe.
    """
    grid = resolution if isinstance(resolution, OracleGrid) else OracleGrid(points=int(resolution))
    if grid.points < 2:
        raise ConfigurationError("oracle grid needs at least 2 points per axis")
    if spec.kind is ConstraintKind.INPUT_BOUND:
        # |pi| > u_max needs |x - v| near u_max / kp, usually outside the default box
        grid = replace(grid, x_half=max(grid.x_half, abs(v) + 1.25 * spec.bound / gains.kp))
    axes = grid.axes()
    p = params
    best, i, j, k, m = kernels.grid_scan(spec.kind.code, float(spec.bound), float(v),
                                         gains.kp, gains.kd, p.m_c, p.m_p, p.L, p.g,
                                         *axes)
    if not math.isfinite(best):
        return OracleResult(math.inf) if detail else math.inf
    x0 = np.array([axes[0][i], axes[1][j], axes[2][k], axes[3][m]])
    V = LyapunovFn(params, gains)
    res = OracleResult(best, x0, best)
    if refine:
        spacing = np.array([2 * grid.x_half, 2 * grid.theta_half,
                            2 * grid.xdot_half, 2 * grid.thetadot_half]) / (grid.points - 1)
        pt, val = _coordinate_descent(x0, best, spacing, spec, v, params, gains, V)
        pt, val = _polish(pt, val, spec, v, params, gains, V)
        res.point, res.value = pt, val
    return res if detail else res.value


def _coordinate_descent(x0, f0, spacing, spec, v, params, gains, V, min_step=1e-10):
    pt = x0.copy()
    val = f0
    step = spacing.copy()
    while step.max() > min_step:
        improved = False
        for ax in range(4):
            for sgn in (-1.0, 1.0):
                cand = pt.copy()
                cand[ax] += sgn * step[ax]
                if abs(cand[1]) >= 0.5 * math.pi:
                    continue
                if not _unsafe(spec, cand, v, params, gains):
                    continue
                cv = V.value(cand, v)
                if cv < val:
                    pt, val, improved = cand, cv, True
        if not improved:
            step *= 0.5
    return pt, val


def _boundary_fn(spec: ConstraintSpec, v, params, gains):
    """Scalar function that is >= 0 exactly on the closure of the unsafe set."""
    k = spec.kind
    if k is ConstraintKind.POSITION_LOWER:
        return lambda s: spec.bound - s[0]
    if k is ConstraintKind.POSITION_UPPER:
        return lambda s: s[0] - spec.bound
    if k is ConstraintKind.INPUT_BOUND:
        return lambda s: abs(-gains.kp * (s[0] - v) - gains.kd * s[2]) - spec.bound
    if k is ConstraintKind.ANGLE_BOUND:
        return lambda s: abs(s[1]) - spec.bound
    return lambda s: s[0] + params.L * math.sin(s[1]) - spec.bound


def _polish(pt, val, spec, v, params, gains, V):
    from scipy.optimize import minimize

    h = _boundary_fn(spec, v, params, gains)
    lim = 0.5 * math.pi * (1 - 1e-9)
    try:
        out = minimize(lambda s: V.value(s, v), pt, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": h}],
                       bounds=[(None, None), (-lim, lim), (None, None), (None, None)],
                       options={"ftol": 1e-14, "maxiter": 200})
    except (ValueError, ArithmeticError):
        return pt, val
    cand = np.asarray(out.x, dtype=float)
    if h(cand) >= -1e-12:
        cv = V.value(cand, v)
        if cv < val:
            return cand, cv
    return pt, val


def reference_admissible(v: float, constraints, params: CraneParams) -> bool:
    """Whether the equilibrium at ``v`` with zero input satisfies every constraint."""
    s = np.array([v, 0.0, 0.0, 0.0])
    return all(c.holds(s, 0.0, params.L) for c in constraints)


__all__ = [
    "ConstraintKind", "ConstraintSpec", "LyapunovFn", "DsmSpec", "OracleGrid",
    "OracleResult", "gamma", "gamma_i", "payload_gain", "dsm_value", "dsm_gradients",
    "make_dsms", "gamma_star_oracle", "lyap_value", "lyap_grad", "check_domain",
    "reference_admissible",
]
