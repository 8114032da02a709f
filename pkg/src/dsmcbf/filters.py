"""Constrained policies for the crane: DSM-CBF filter, ERG governor, candidate-CBF filter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import CraneParams, PdGains, drift, input_gain, nominal_kappa, pd_law
from .errors import ConfigurationError, SafetyContractViolation
from .lyapunov import ConstraintKind, ConstraintSpec, DsmSpec
from .qp import QpProblem, QpSolution, solve_qp

# Floor on the reference-rate weight; keeps the QP strictly convex when eta = 0.
ETA_FLOOR = 1e-6
# Tolerance on the DSMs at the initial augmented state.
PRECONDITION_TOL = 1e-9
# Tolerance once running; covers the sample-and-hold drift between QP solves.
RUNNING_TOL = 1e-6
# Margin (J) held back in every row so that sampling drift stays on the safe side.
DEFAULT_BACKOFF = 1e-3


@dataclass(frozen=True)
class ClassKLinear:
    gain: float

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigurationError("class-K gain must be positive")

    def __call__(self, c: float) -> float:
        return self.gain * c


@dataclass
class AugmentedState:
    plant: np.ndarray
    v: float

    def __post_init__(self):
        self.plant = np.asarray(self.plant, dtype=float)
        self.v = float(self.v)


@dataclass(frozen=True)
class CandidateCbf:
    """Hand-designed barrier candidate ``h_i`` with slope ``gamma`` and class-K gain.

    ``index`` follows h1..h5: lower position, upper position, lower angle,
    upper angle, payload. ``bound`` is the matching limit (signed for
    positions, theta_max in radians for both angle candidates, p_max for h5).
    """

    index: int
    gamma: float
    alpha_tilde: float
    bound: float

    def __post_init__(self):
        if self.index not in (1, 2, 3, 4, 5):
            raise ConfigurationError("candidate CBF index must be in 1..5")
        if not (self.gamma > 0 and self.alpha_tilde > 0):
            raise ConfigurationError("candidate CBF gains must be positive")

    def value_and_grad(self, s, L: float) -> tuple[float, np.ndarray]:
        x, th, xd, thd = s
        gm, b = self.gamma, self.bound
        if self.index == 1:
            return gm * (x - b) + xd, np.array([gm, 0.0, 1.0, 0.0])
        if self.index == 2:
            return gm * (b - x) - xd, np.array([-gm, 0.0, -1.0, 0.0])
        if self.index == 3:
            return gm * (b + th) + thd, np.array([0.0, gm, 0.0, 1.0])
        if self.index == 4:
            return gm * (b - th) - thd, np.array([0.0, -gm, 0.0, -1.0])
        c, sn = math.cos(th), math.sin(th)
        h = gm * (b - x - L * sn) - xd - L * thd * c
        return h, np.array([-gm, -gm * L * c + L * thd * sn, -1.0, -L * c])

    def value(self, s, L: float) -> float:
        return self.value_and_grad(s, L)[0]


def candidate_cbfs_for(constraints, gains: dict) -> list[CandidateCbf]:
    """Candidate CBFs matching a constraint list.

    ``gains`` maps candidate index to ``(gamma, alpha_tilde)``. The input bound
    becomes a box on the decision variable, so it yields no candidate.
    """
    out = []
    for c in constraints:
        k = c.kind
        if k is ConstraintKind.POSITION_LOWER:
            idx = [1]
        elif k is ConstraintKind.POSITION_UPPER:
            idx = [2]
        elif k is ConstraintKind.ANGLE_BOUND:
            idx = [3, 4]
        elif k is ConstraintKind.PAYLOAD_BOUND:
            idx = [5]
        else:
            continue
        for i in idx:
            gm, at = gains[i]
            out.append(CandidateCbf(i, gm, at, c.bound))
    return sorted(out, key=lambda h: h.index)


@dataclass
class FilterDecision:
    u: float
    rho: float
    status: str
    margins: dict = field(default_factory=dict)
    active: tuple = ()
    qp: QpSolution | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def input_bound(constraints) -> float | None:
    for c in constraints:
        if c.kind is ConstraintKind.INPUT_BOUND:
            return c.bound
    return None


def dsm_min_over_constraints(a: AugmentedState, dsms) -> tuple[int, float]:
    """Index (1-based constraint number) and value of the smallest margin; ties go low."""
    if not dsms:
        raise ConfigurationError("no DSMs configured")
    best = None
    for d in sorted(dsms, key=lambda d: d.index):
        val = d.value(a.plant, a.v)
        if best is None or val < best[1]:
            best = (d.index, val)
    return best


def dsm_cbf_qp(a: AugmentedState, r: float, dsms, params: CraneParams, kappa_gains: PdGains,
               eta: float, u_max: float | None, backoff: float = 0.0,
               witness_cap: bool = False) -> QpProblem:
    """QP over ``(u, rho)`` whose minimizer is the DSM-CBF decision.

    Each DSM gives the row ``dDelta/dx (f0 + g u) + dDelta/dv rho + alpha (Delta - backoff) >= 0``.
    With ``witness_cap`` the offset ``alpha (Delta - backoff)`` is raised to at
    least ``-dDelta/dx f_pi`` so that ``(pi(x, v), 0)`` satisfies every row even
    after the state has drifted slightly outside a margin's zero level. Both
    knobs default to off, which gives the plain continuous-time condition.
    """
    s = a.plant
    kap = nominal_kappa(s, r, kappa_gains)
    w = max(eta, ETA_FLOOR)
    H = np.diag([2.0, 2.0 * w])
    f = np.array([-2.0 * kap, -2.0 * w * (r - a.v)])
    f0 = drift(s, params)
    gcol = input_gain(s, params)
    A = np.empty((len(dsms), 2))
    b = np.empty(len(dsms))
    for i, d in enumerate(dsms):
        dx, dv = d.gradients(s, a.v)
        A[i] = (dx @ gcol, dv)
        offset = d.alpha * (d.value(s, a.v) - backoff)
        if witness_cap:
            f_pi = f0 + gcol * pd_law(s, a.v, d.V.gains)
            offset = max(offset, -float(dx @ f_pi))
        b[i] = dx @ f0 + offset
    lb = ub = None
    if u_max is not None:
        lb = np.array([-u_max, -np.inf])
        ub = np.array([u_max, np.inf])
    return QpProblem(H, f, A, b, lb, ub)


def dsm_cbf_step(a: AugmentedState, r: float, dsms, eta: float, params: CraneParams,
                 kappa_gains: PdGains, u_max: float | None = None,
                 precondition_tol: float = PRECONDITION_TOL, backoff: float = 0.0,
                 witness_cap: bool = False) -> FilterDecision:
    """Minimally modify ``(kappa(x), r - v)`` so every DSM keeps its CBF condition.

    Raises :class:`SafetyContractViolation` if the augmented state is outside
    the safe set (beyond ``precondition_tol``) or the QP is infeasible; neither
    can happen for a correctly configured control-sharing family.
    """
    margins = {d.index: d.value(a.plant, a.v) for d in dsms}
    low = min(margins.values(), default=0.0)
    if low < -precondition_tol:
        raise SafetyContractViolation(
            f"augmented state outside the safe set (min DSM {low:.3e})",
            {"margins": margins, "state": a.plant.tolist(), "v": a.v})
    sol = solve_qp(dsm_cbf_qp(a, r, dsms, params, kappa_gains, eta, u_max, backoff))
    if not sol.optimal and witness_cap:
        # The backed-off rows can conflict near corners of the safe set. Fall
        # back to the capped rows, which always admit (pi(x, v), 0), with the
        # reference frozen: a held rho loses kp rho^2 dt^2 / 2 per step on the
        # margins that are concave in v, and nothing here would restore it.
        full = dsm_cbf_qp(a, r, dsms, params, kappa_gains, eta, u_max, backoff, True)
        sol = solve_qp(QpProblem(full.H[:1, :1], full.f[:1], full.A[:, :1], full.b,
                                 None if full.lb is None else full.lb[:1],
                                 None if full.ub is None else full.ub[:1]))
        if sol.optimal:
            sol.z = np.append(sol.z, 0.0)
    if not sol.optimal:
        raise SafetyContractViolation(
            "DSM-CBF QP infeasible", {"margins": margins, "state": a.plant.tolist(), "v": a.v,
                                      "certificate": sol.certificate.tolist()})
    return FilterDecision(float(sol.z[0]), float(sol.z[1]), "ok", margins,
                          sol.active_set, sol)


def feasibility_witness_holds(a: AugmentedState, dsms, params: CraneParams, pi_gains: PdGains,
                              u_max: float | None, tol: float = 0.0) -> bool:
    """Whether ``(pi(x, v), 0)`` satisfies every DSM inequality and the input box."""
    s = a.plant
    u = pd_law(s, a.v, pi_gains)
    if u_max is not None and abs(u) > u_max + tol:
        return False
    f = drift(s, params) + input_gain(s, params) * u
    for d in dsms:
        dx, _ = d.gradients(s, a.v)
        if dx @ f + d.alpha * d.value(s, a.v) < -tol:
            return False
    return True


def erg_step(a: AugmentedState, r: float, dsms_kappa, kappa_gains: PdGains) -> tuple[float, float]:
    """Reference-governor law: ``u = kappa(x, v)``, ``rho = min_i Delta_i (r - v)``.

    ``dsms_kappa`` must be built around the nominal gains (see
    :meth:`DsmSpec.with_gains`).
    """
    u = pd_law(a.plant, a.v, kappa_gains)
    _, dmin = dsm_min_over_constraints(a, dsms_kappa)
    return u, dmin * (r - a.v)


def candidate_cbf_qp(s, r: float, cbfs, params: CraneParams, kappa_gains: PdGains,
                     u_max: float | None) -> QpProblem:
    kap = nominal_kappa(s, r, kappa_gains)
    f0 = drift(s, params)
    gcol = input_gain(s, params)
    A = np.empty((len(cbfs), 1))
    b = np.empty(len(cbfs))
    for i, h in enumerate(cbfs):
        val, dh = h.value_and_grad(s, params.L)
        A[i, 0] = dh @ gcol
        b[i] = dh @ f0 + h.alpha_tilde * val
    lb = ub = None
    if u_max is not None:
        lb, ub = np.array([-u_max]), np.array([u_max])
    return QpProblem(np.array([[2.0]]), np.array([-2.0 * kap]), A, b, lb, ub)


def candidate_cbf_step(s, r: float, cbfs, params: CraneParams, kappa_gains: PdGains,
                       u_max: float | None = None) -> FilterDecision:
    """Min-norm correction of ``kappa(x)``; infeasibility is returned, not raised."""
    s = np.asarray(s, dtype=float)
    margins = {h.index: h.value(s, params.L) for h in cbfs}
    sol = solve_qp(candidate_cbf_qp(s, r, cbfs, params, kappa_gains, u_max))
    if not sol.optimal:
        return FilterDecision(math.nan, 0.0, "infeasible", margins, (), sol)
    return FilterDecision(float(sol.z[0]), 0.0, "ok", margins, sol.active_set, sol)


@dataclass
class DsmCbfFilter:
    """Bundles the data of :func:`dsm_cbf_step` for repeated use in a simulation.

    ``sampled=True`` (the default) enables the back-off and witness cap meant
    for sample-and-hold use; ``sampled=False`` is the plain condition.
    """

    dsms: list[DsmSpec]
    params: CraneParams
    kappa_gains: PdGains
    eta: float
    u_max: float | None = None
    sampled: bool = True
    backoff: float = DEFAULT_BACKOFF

    def __call__(self, a: AugmentedState, r: float,
                 precondition_tol: float = PRECONDITION_TOL) -> FilterDecision:
        return dsm_cbf_step(a, r, self.dsms, self.eta, self.params, self.kappa_gains,
                            self.u_max, precondition_tol,
                            self.backoff if self.sampled else 0.0, self.sampled)


@dataclass
class CandidateCbfFilter:
    cbfs: list[CandidateCbf]
    params: CraneParams
    kappa_gains: PdGains
    u_max: float | None = None

    def __call__(self, s, r: float) -> FilterDecision:
        return candidate_cbf_step(s, r, self.cbfs, self.params, self.kappa_gains, self.u_max)


__all__ = [
    "ClassKLinear", "AugmentedState", "CandidateCbf", "FilterDecision", "DsmCbfFilter",
    "CandidateCbfFilter", "candidate_cbfs_for", "dsm_cbf_step", "dsm_cbf_qp", "erg_step",
    "candidate_cbf_step", "dsm_min_over_constraints", "feasibility_witness_holds",
    "input_bound", "ConstraintSpec",
]
