"""Small dense convex QP solver with certified infeasibility.

Solves ``min 1/2 z'Hz + f'z  s.t.  A z + b >= 0,  lb <= z <= ub`` for a
handful of variables. Phase 1 is a least-distance program solved by
Lawson-Hanson NNLS: it returns either the minimum-norm feasible point or a
Farkas vector ``y >= 0`` with ``A'y = 0`` and ``b'y < 0``. Phase 2 is a primal
active-set method started from that point.

Box bounds are appended after the general rows, lower bound then upper bound
per variable, so indices in ``active_set`` and in certificates refer to that
stacked ordering.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import ConfigurationError, SolverFailure

FEAS_TOL = 1e-8
STAT_TOL = 1e-8
MAX_ITER = 200


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = self.f.size
        if self.H.shape != (n, n):
            raise ConfigurationError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float)).reshape(-1)
        if self.A.shape[0] != self.b.size:
            raise ConfigurationError("A and b row counts differ")
        for name in ("lb", "ub"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy())

    @property
    def n(self) -> int:
        return self.f.size

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """General rows followed by finite box rows, all as ``A z + b >= 0``."""
        rows = [self.A]
        offs = [self.b]
        eye = np.eye(self.n)
        for j in range(self.n):
            if self.lb is not None and np.isfinite(self.lb[j]):
                rows.append(eye[j:j + 1])
                offs.append(np.array([-self.lb[j]]))
            if self.ub is not None and np.isfinite(self.ub[j]):
                rows.append(-eye[j:j + 1])
                offs.append(np.array([self.ub[j]]))
        return np.vstack(rows), np.concatenate(offs)


@dataclass
class QpSolution:
    status: QpStatus
    z: np.ndarray | None = None
    active_set: tuple = ()
    kkt_residual: float = 0.0
    multipliers: np.ndarray | None = None
    certificate: np.ndarray | None = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


@dataclass
class FeasibilityResult:
    feasible: bool
    point: np.ndarray | None = None
    certificate: np.ndarray | None = None


def _row_scale(A, b):
    norms = np.sqrt((A * A).sum(axis=1) + b * b)
    norms[norms == 0.0] = 1.0
    return norms


def _phase1(A, b, n):
    m = b.size
    if m == 0:
        return FeasibilityResult(True, np.zeros(n))
    scale = _row_scale(A, b)
    As = A / scale[:, None]
    bs = b / scale
    ok, vec = kernels.ldp(As.tolist(), (-bs).tolist())
    if ok:
        z = np.array(vec)
        # far-away feasible sets lose digits in the NNLS residual; refine on the
        # residual system, whose minimum-norm correction is tiny
        for _ in range(3):
            slack = As @ z + bs
            tol = 1e-12 * (np.abs(As) @ np.abs(z) + np.abs(bs) + 1.0)
            if np.all(slack >= -tol):
                return FeasibilityResult(True, z)
            ok, dz = kernels.ldp(As.tolist(), (-slack).tolist())
            if not ok:
                break
            z = z + np.array(dz)
        slack = A @ z + b
        raise SolverFailure(f"phase 1 point violates constraints by {-slack.min():.3e}")
    y = np.array(vec) / scale
    # normalise so that b'y = -1
    by = float(b @ y)
    if not by < 0:
        raise SolverFailure("phase 1 produced an invalid Farkas vector")
    y = y / -by
    if np.abs(A.T @ y).max(initial=0.0) > 1e-8 * max(1.0, np.abs(y).max()):
        raise SolverFailure("phase 1 Farkas vector fails A'y = 0")
    return FeasibilityResult(False, certificate=y)


def phase1_feasibility(A, b, lb=None, ub=None, n: int | None = None) -> FeasibilityResult:
    """Find a point with ``A z + b >= 0`` inside the box, or a Farkas certificate.

    The certificate refers to the stacked rows (general rows, then box rows).
    """
    A = np.asarray(A, dtype=float)
    if n is None:
        if A.size:
            n = A.shape[-1]
        elif lb is not None:
            n = np.size(lb)
        elif ub is not None:
            n = np.size(ub)
        else:
            n = 1
    prob = QpProblem(np.eye(n), np.zeros(n), A.reshape(-1, n), b, lb, ub)
    As, bs = prob.stacked()
    return _phase1(As, bs, n)


def _check_pd(H):
    if not np.allclose(H, H.T, rtol=1e-12, atol=1e-14):
        raise ConfigurationError("QP Hessian is not symmetric")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ConfigurationError("QP Hessian is not positive definite") from None


def solve_qp(p: QpProblem, max_iter: int = MAX_ITER) -> QpSolution:
    """Global minimizer of a strictly convex QP, or a certified infeasibility."""
    _check_pd(p.H)
    A, b = p.stacked()
    n = p.n
    feas = _phase1(A, b, n)
    if not feas.feasible:
        return QpSolution(QpStatus.INFEASIBLE, certificate=feas.certificate)
    H = p.H.tolist()
    f = p.f.tolist()
    Al = A.tolist()
    bl = b.tolist()
    z, W, _, iters = kernels.qp_active_set(H, f, Al, bl, feas.point.tolist(), FEAS_TOL, max_iter)
    W = list(W)
    # re-solve the final KKT system from scratch so residuals are not accumulated
    if W:
        z, lam = kernels.kkt_solve(H, f, Al, bl, W)
    else:
        z, lam = kernels.kkt_solve(H, f, Al, bl, [])
    z = np.array(z)
    y = np.zeros(b.size)
    y[W] = lam
    res = kkt_residuals(p.H, p.f, A, b, z, y)
    sol = QpSolution(QpStatus.OPTIMAL, z, tuple(W), max(res.values()), y, iterations=iters,
                     residuals=res)
    if res["primal"] > FEAS_TOL or res["dual"] > FEAS_TOL or res["stationarity"] > STAT_TOL:
        raise SolverFailure(f"QP solution failed verification: {res}")
    return sol


def kkt_residuals(H, f, A, b, z, y) -> dict:
    """Stationarity, primal, dual and complementarity residuals (infinity norm)."""
    slack = A @ z + b
    scale = max(1.0, float(np.abs(f).max(initial=0.0)), float(np.abs(H @ z).max(initial=0.0)))
    return {
        "stationarity": float(np.abs(H @ z + f - A.T @ y).max(initial=0.0)) / scale,
        "primal": float(max(0.0, -slack.min(initial=0.0))),
        "dual": float(max(0.0, -y.min(initial=0.0))),
        "complementarity": float(np.abs(y * slack).max(initial=0.0)),
    }


def check_certificate(A, b, y, tol: float = 1e-8) -> bool:
    """Whether ``y`` proves ``A z + b >= 0`` has no solution."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    return bool(np.all(y >= 0) and np.abs(A.T @ y).max(initial=0.0) <= tol * max(1.0, np.abs(y).max())
                and b @ y < 0)
