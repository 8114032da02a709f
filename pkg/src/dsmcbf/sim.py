"""Fixed-step closed-loop simulation of the crane under the four controllers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels
from .dynamics import CraneParams, PdGains, check_domain, crane_dynamics, payload_position
from .errors import ConfigurationError, ModelDomainError, SafetyContractViolation
from .filters import (DEFAULT_BACKOFF, PRECONDITION_TOL, RUNNING_TOL, AugmentedState,
                      CandidateCbfFilter, DsmCbfFilter, candidate_cbfs_for, erg_step,
                      input_bound)
from .lyapunov import ConstraintKind, ConstraintSpec, make_dsms

log = logging.getLogger(__name__)

CONTROLLERS = ("nominal", "erg", "cbf", "dsmcbf")

DEFAULT_ALPHAS = {1: 10.0, 2: 10.0, 3: 20.0, 4: 80.0, 5: 2.2}
DEFAULT_CBF_GAINS = {1: (6.0, 8.0), 2: (6.0, 8.0), 3: (6.0, 8.0), 4: (6.0, 8.0), 5: (4.0, 3.5)}


@dataclass
class ScenarioConfig:
    params: CraneParams = field(default_factory=CraneParams)
    pi_gains: PdGains = field(default_factory=lambda: PdGains(1.0, 0.1))
    kappa_gains: PdGains = field(default_factory=lambda: PdGains(10.0, 4.0))
    constraints: list = field(default_factory=list)
    alphas: dict = field(default_factory=lambda: dict(DEFAULT_ALPHAS))
    cbf_gains: dict = field(default_factory=lambda: dict(DEFAULT_CBF_GAINS))
    eta: float = 0.01
    r: float = 1.0
    x0: tuple = (0.0, 0.0, 0.0, 0.0)
    v0: float = 0.1
    dt: float = 1e-3
    horizon: float = 15.0
    controller: str = "dsmcbf"
    angle_form: str = "cosine"
    sampled: bool = True
    backoff: float = DEFAULT_BACKOFF
    name: str = "scenario"

    def validate(self) -> "ScenarioConfig":
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.horizon < 0:
            raise ConfigurationError("horizon must be non-negative")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}")
        if self.eta < 0:
            raise ConfigurationError("eta must be non-negative")
        if self.backoff < 0:
            raise ConfigurationError("backoff must be non-negative")
        if self.angle_form not in ("cosine", "linear"):
            raise ConfigurationError(f"unknown angle_form {self.angle_form!r}")
        if len(self.x0) != 4:
            raise ConfigurationError("x0 must have 4 entries")
        kinds = [c.kind for c in self.constraints]
        if len(set(kinds)) != len(kinds):
            raise ConfigurationError("each constraint kind may appear once")
        lo = [c.bound for c in self.constraints if c.kind is ConstraintKind.POSITION_LOWER]
        hi = [c.bound for c in self.constraints if c.kind is ConstraintKind.POSITION_UPPER]
        if lo and hi and not lo[0] < hi[0]:
            raise ConfigurationError("x_min must be below x_max")
        for c in self.constraints:
            if c.kind.index not in self.alphas or not self.alphas[c.kind.index] > 0:
                raise ConfigurationError(f"missing or non-positive alpha_{c.kind.index}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def dsms(self, gains: PdGains | None = None):
        return make_dsms(sorted(self.constraints, key=lambda c: c.kind.index), self.params,
                         gains or self.pi_gains, self.alphas, self.angle_form)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def crane_constraints(angle: bool) -> list[ConstraintSpec]:
    cons = [
        ConstraintSpec(ConstraintKind.POSITION_LOWER, -1.1),
        ConstraintSpec(ConstraintKind.POSITION_UPPER, 1.1),
        ConstraintSpec(ConstraintKind.INPUT_BOUND, 4.0),
        ConstraintSpec(ConstraintKind.PAYLOAD_BOUND, 1.1),
    ]
    if angle:
        cons.insert(3, ConstraintSpec(ConstraintKind.ANGLE_BOUND, math.radians(10.0)))
    return cons


def scenario_a(**kw) -> ScenarioConfig:
    """Reference crane without the angle constraint."""
    return ScenarioConfig(constraints=crane_constraints(False), name="scenario_a", **kw)


def scenario_b(**kw) -> ScenarioConfig:
    """Reference crane with the 10 degree angle constraint."""
    return ScenarioConfig(constraints=crane_constraints(True), name="scenario_b", **kw)


@dataclass
class TrajectoryLog:
    controller: str
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    dsm: np.ndarray
    h: np.ndarray
    status: list
    active: list
    events: list = field(default_factory=list)
    completed: bool = True

    @property
    def dmin(self) -> np.ndarray:
        """Smallest logged margin per sample (DSMs, or candidate CBFs for the CBF filter)."""
        src = self.h if self.controller == "cbf" else self.dsm
        with np.errstate(invalid="ignore"):
            out = np.full(len(self.t), np.nan)
            mask = ~np.all(np.isnan(src), axis=1) if src.size else np.zeros(len(self.t), bool)
            out[mask] = np.nanmin(src[mask], axis=1)
        return out

    def event_time(self, kind: str) -> float | None:
        for ev in self.events:
            if ev["kind"] == kind:
                return ev["t"]
        return None

    def violations(self, constraints, L: float) -> dict:
        """Largest violation per constraint index over the logged samples (0 if none)."""
        out = {}
        ok = ~np.isnan(self.u)
        for c in constraints:
            if c.kind is ConstraintKind.INPUT_BOUND:
                vals = np.abs(self.u[ok]) - c.bound
            else:
                vals = np.array([c.violation(s, None, L) for s in self.x])
            out[c.kind.index] = float(max(0.0, vals.max(initial=-np.inf)))
        return out

    def max_violation(self, constraints, L: float) -> float:
        return max(self.violations(constraints, L).values(), default=0.0)


def rk4_step(state, deriv, dt: float):
    """Classical RK4 for a generic vector field ``deriv(state) -> derivative``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = np.asarray(state, dtype=float)
    k1 = deriv(y)
    k2 = deriv(y + 0.5 * dt * k1)
    k3 = deriv(y + 0.5 * dt * k2)
    k4 = deriv(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def settling_time(log_or_t, x=None, r: float = 1.0, band: float = 0.02) -> float:
    """First logged time after which ``|x - r| <= band`` holds for the rest of the log.

    Accepts a :class:`TrajectoryLog` (position column, inf for runs cut short
    by an event) or explicit ``t, x`` arrays.
    """
    if not band > 0:
        raise ValueError("band must be positive")
    if isinstance(log_or_t, TrajectoryLog):
        if not log_or_t.completed:
            return math.inf
        t, pos = log_or_t.t, log_or_t.x[:, 0]
    else:
        t, pos = np.asarray(log_or_t), np.asarray(x)
    outside = np.abs(pos - r) > band
    if not outside.any():
        return float(t[0]) if len(t) else math.inf
    last = int(np.nonzero(outside)[0][-1])
    if last == len(t) - 1:
        return math.inf
    return float(t[last + 1])


class _Recorder:
    def __init__(self, n):
        self.t = np.full(n, np.nan)
        self.x = np.full((n, 4), np.nan)
        self.v = np.full(n, np.nan)
        self.u = np.full(n, np.nan)
        self.rho = np.full(n, np.nan)
        self.dsm = np.full((n, 5), np.nan)
        self.h = np.full((n, 5), np.nan)
        self.status = []
        self.active = []
        self.k = 0

    def add(self, t, x, v, u, rho, status, dsm=None, h=None, active=()):
        k = self.k
        self.t[k] = t
        self.x[k] = x
        self.v[k] = v
        self.u[k] = u
        self.rho[k] = rho
        for i, val in (dsm or {}).items():
            self.dsm[k, i - 1] = val
        for i, val in (h or {}).items():
            self.h[k, i - 1] = val
        self.status.append(status)
        self.active.append(tuple(active))
        self.k += 1

    def finish(self, controller, events, completed):
        k = self.k
        return TrajectoryLog(controller, self.t[:k], self.x[:k], self.v[:k], self.u[:k],
                             self.rho[:k], self.dsm[:k], self.h[:k], self.status,
                             self.active, events, completed)


def run_scenario(cfg: ScenarioConfig) -> TrajectoryLog:
    """Integrate the selected closed loop over ``cfg.horizon``.

    DSM-CBF and candidate-CBF inputs come from one QP per step held over the
    RK4 stages; nominal and ERG laws are re-evaluated at every stage.
    """
    cfg.validate()
    runner = {"nominal": _run_nominal, "erg": _run_erg,
              "cbf": _run_cbf, "dsmcbf": _run_dsmcbf}[cfg.controller]
    return runner(cfg)


def _times(cfg):
    n = cfg.n_steps
    return n, [k * cfg.dt for k in range(n + 1)]


def _domain_event(rec, events, t, exc):
    events.append({"kind": "domain_exit", "t": t, "detail": str(exc)})
    log.warning("domain exit at t=%.4f: %s", t, exc)


def _run_nominal(cfg):
    p, kg, r = cfg.params, cfg.kappa_gains, cfg.r
    n, times = _times(cfg)
    rec = _Recorder(n + 1)
    dsms = cfg.dsms()
    s = tuple(float(c) for c in cfg.x0)
    check_domain(s)
    events = []
    for k in range(n + 1):
        u = -kg.kp * (s[0] - r) - kg.kd * s[2]
        # margins of the DSM-CBF family at v = r, for comparison only
        rec.add(times[k], s, r, u, 0.0, "ok", dsm={d.index: d.value(s, r) for d in dsms})
        if k == n:
            break
        try:
            s = kernels.crane_rk4_pd(s, r, kg.kp, kg.kd, cfg.dt, *p.tuple)
        except ModelDomainError as exc:
            _domain_event(rec, events, times[k + 1], exc)
            return rec.finish("nominal", events, False)
    return rec.finish("nominal", events, True)


def _run_erg(cfg):
    p, kg, r = cfg.params, cfg.kappa_gains, cfg.r
    dsms = cfg.dsms(kg)
    n, times = _times(cfg)
    rec = _Recorder(n + 1)
    y = np.array(list(cfg.x0) + [cfg.v0], dtype=float)
    check_domain(y)
    events = []

    def field_(z):
        u, rho = erg_step(AugmentedState(z[:4], z[4]), r, dsms, kg)
        return np.append(crane_dynamics(z[:4], u, p), rho)

    for k in range(n + 1):
        a = AugmentedState(y[:4], y[4])
        u, rho = erg_step(a, r, dsms, kg)
        rec.add(times[k], y[:4], y[4], u, rho, "ok",
                dsm={d.index: d.value(a.plant, a.v) for d in dsms})
        if k == n:
            break
        try:
            y = rk4_step(y, field_, cfg.dt)
            check_domain(y)
        except ModelDomainError as exc:
            _domain_event(rec, events, times[k + 1], exc)
            return rec.finish("erg", events, False)
    return rec.finish("erg", events, True)


def _run_cbf(cfg):
    p, r = cfg.params, cfg.r
    flt = CandidateCbfFilter(candidate_cbfs_for(cfg.constraints, cfg.cbf_gains), p,
                             cfg.kappa_gains, input_bound(cfg.constraints))
    n, times = _times(cfg)
    rec = _Recorder(n + 1)
    s = tuple(float(c) for c in cfg.x0)
    check_domain(s)
    events = []
    for k in range(n + 1):
        dec = flt(s, r)
        rec.add(times[k], s, r, dec.u, 0.0, dec.status, h=dec.margins, active=dec.active)
        if not dec.ok:
            events.append({"kind": "infeasible", "t": times[k],
                           "detail": "candidate-CBF QP infeasible",
                           "certificate": dec.qp.certificate.tolist()})
            log.info("candidate-CBF QP infeasible at t=%.4f", times[k])
            return rec.finish("cbf", events, False)
        if k == n:
            break
        try:
            s = kernels.crane_rk4(s, dec.u, cfg.dt, *p.tuple)
        except ModelDomainError as exc:
            _domain_event(rec, events, times[k + 1], exc)
            return rec.finish("cbf", events, False)
    return rec.finish("cbf", events, True)


def _run_dsmcbf(cfg):
    p, r = cfg.params, cfg.r
    dsms = cfg.dsms()
    flt = DsmCbfFilter(dsms, p, cfg.kappa_gains, cfg.eta, input_bound(cfg.constraints),
                       cfg.sampled, cfg.backoff)
    n, times = _times(cfg)
    rec = _Recorder(n + 1)
    s = tuple(float(c) for c in cfg.x0)
    v = float(cfg.v0)
    check_domain(s)
    events = []
    for k in range(n + 1):
        a = AugmentedState(s, v)
        try:
            dec = flt(a, r, PRECONDITION_TOL if k == 0 else RUNNING_TOL)
        except SafetyContractViolation as exc:
            exc.diagnostics.update(t=times[k], controller="dsmcbf", scenario=cfg.name,
                                   log=rec.finish("dsmcbf", events, False))
            raise
        rec.add(times[k], s, v, dec.u, dec.rho, dec.status, dsm=dec.margins, active=dec.active)
        if k == n:
            break
        try:
            s = kernels.crane_rk4(s, dec.u, cfg.dt, *p.tuple)
        except ModelDomainError as exc:
            _domain_event(rec, events, times[k + 1], exc)
            return rec.finish("dsmcbf", events, False)
        v = v + cfg.dt * dec.rho
    return rec.finish("dsmcbf", events, True)


def run_all(cfg: ScenarioConfig, controllers=CONTROLLERS) -> dict:
    return {c: run_scenario(cfg.with_(controller=c)) for c in controllers}


def payload_trace(log: TrajectoryLog, params: CraneParams) -> np.ndarray:
    return np.array([payload_position(s, params) for s in log.x])
