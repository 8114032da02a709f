"""Pure-Python implementation of the numerical kernels.

Mirrors ``_ckernels.pyx`` function for function. It is used when the compiled
extension is unavailable or when ``DSMCBF_BACKEND=python`` is set, and serves
as the readable reference for the compiled version.

State vectors are ``[x, theta, xdot, thetadot]``. Kernels take plain floats
and sequences and return tuples; the public modules wrap them in numpy.
"""
from math import cos, sin, fabs, sqrt, pi

from .errors import ModelDomainError, SolverFailure

HALF_PI = 0.5 * pi

KIND_POS_LOWER = 0
KIND_POS_UPPER = 1
KIND_INPUT = 2
KIND_ANGLE = 3
KIND_PAYLOAD = 4

QP_OPTIMAL = 0
QP_INFEASIBLE = 1


def _check_domain(theta):
    if not fabs(theta) < HALF_PI:
        raise ModelDomainError(f"payload angle {theta!r} outside (-pi/2, pi/2)")


def crane_rhs(s, u, mc, mp, L, g):
    x, th, xd, thd = s[0], s[1], s[2], s[3]
    _check_domain(th)
    c = cos(th)
    sn = sin(th)
    det = mp * L * L * (mc + mp * sn * sn)
    # B u - V_m qdot - G, then closed-form inverse of M
    r1 = u - mp * L * sn * thd * thd
    r2 = -mp * g * L * sn
    xdd = (mp * L * L * r1 + mp * L * c * r2) / det
    thdd = (mp * L * c * r1 + (mc + mp) * r2) / det
    return (xd, thd, xdd, thdd)


def crane_input_gain(s, mc, mp, L):
    """Column g(x) of the control-affine split f0(x) + g(x) u."""
    th = s[1]
    _check_domain(th)
    sn = sin(th)
    det = mp * L * L * (mc + mp * sn * sn)
    return (0.0, 0.0, mp * L * L / det, mp * L * cos(th) / det)


def crane_rk4(s, u, dt, mc, mp, L, g):
    """One RK4 step with the input held constant over the step."""
    h2 = 0.5 * dt
    k1 = crane_rhs(s, u, mc, mp, L, g)
    s2 = [s[i] + h2 * k1[i] for i in range(4)]
    k2 = crane_rhs(s2, u, mc, mp, L, g)
    s3 = [s[i] + h2 * k2[i] for i in range(4)]
    k3 = crane_rhs(s3, u, mc, mp, L, g)
    s4 = [s[i] + dt * k3[i] for i in range(4)]
    k4 = crane_rhs(s4, u, mc, mp, L, g)
    out = tuple(s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                for i in range(4))
    _check_domain(out[1])
    return out


def _pd_rhs(s, ref, kp, kd, mc, mp, L, g):
    return crane_rhs(s, -kp * (s[0] - ref) - kd * s[2], mc, mp, L, g)


def crane_rk4_pd(s, ref, kp, kd, dt, mc, mp, L, g):
    """One RK4 step of the crane under the PD law re-evaluated at every stage."""
    h2 = 0.5 * dt
    k1 = _pd_rhs(s, ref, kp, kd, mc, mp, L, g)
    s2 = [s[i] + h2 * k1[i] for i in range(4)]
    k2 = _pd_rhs(s2, ref, kp, kd, mc, mp, L, g)
    s3 = [s[i] + h2 * k2[i] for i in range(4)]
    k3 = _pd_rhs(s3, ref, kp, kd, mc, mp, L, g)
    s4 = [s[i] + dt * k3[i] for i in range(4)]
    k4 = _pd_rhs(s4, ref, kp, kd, mc, mp, L, g)
    out = tuple(s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                for i in range(4))
    _check_domain(out[1])
    return out


def lyap_value(s, v, mc, mp, L, g, kp):
    x, th, xd, thd = s[0], s[1], s[2], s[3]
    c = cos(th)
    kin = 0.5 * ((mc + mp) * xd * xd - 2.0 * mp * L * c * xd * thd + mp * L * L * thd * thd)
    e = x - v
    return kin + mp * g * L * (1.0 - c) + 0.5 * kp * e * e


def lyap_grad(s, v, mc, mp, L, g, kp):
    """Returns (dV/dx, dV/dtheta, dV/dxdot, dV/dthetadot, dV/dv)."""
    x, th, xd, thd = s[0], s[1], s[2], s[3]
    c = cos(th)
    sn = sin(th)
    e = x - v
    return (
        kp * e,
        mp * L * sn * xd * thd + mp * g * L * sn,
        (mc + mp) * xd - mp * L * c * thd,
        -mp * L * c * xd + mp * L * L * thd,
        -kp * e,
    )


def _is_unsafe(kind, bound, v, kp, kd, L, x, th, xd):
    if kind == KIND_POS_LOWER:
        return x < bound
    if kind == KIND_POS_UPPER:
        return x > bound
    if kind == KIND_INPUT:
        return fabs(-kp * (x - v) - kd * xd) > bound
    if kind == KIND_ANGLE:
        return fabs(th) > bound
    return x + L * sin(th) > bound


def is_unsafe(kind, bound, v, kp, kd, L, s):
    return _is_unsafe(kind, bound, v, kp, kd, L, s[0], s[1], s[2])


def grid_scan(kind, bound, v, kp, kd, mc, mp, L, g, xs, ths, xds, thds):
    """Minimum of V over the unsafe grid points; (inf, -1, -1, -1, -1) if none."""
    xs = list(xs)
    ths = list(ths)
    xds = list(xds)
    thds = list(thds)
    best = float("inf")
    arg = (-1, -1, -1, -1)
    M11 = mc + mp
    ML2 = mp * L * L
    for j, th in enumerate(ths):
        c = cos(th)
        pend = mp * g * L * (1.0 - c)
        cross = mp * L * c
        for i, x in enumerate(xs):
            e = x - v
            pos = 0.5 * kp * e * e + pend
            if pos >= best:
                continue
            if kind != KIND_INPUT and not _is_unsafe(kind, bound, v, kp, kd, L, x, th, 0.0):
                continue
            for k, xd in enumerate(xds):
                if kind == KIND_INPUT and not fabs(-kp * e - kd * xd) > bound:
                    continue
                base = pos + 0.5 * M11 * xd * xd
                for m, thd in enumerate(thds):
                    val = base - cross * xd * thd + 0.5 * ML2 * thd * thd
                    if val < best:
                        best = val
                        arg = (i, j, k, m)
    return (best,) + arg


# ---------------------------------------------------------------------------
# small dense linear algebra


def _solve_dense(M, rhs):
    """Gaussian elimination with partial pivoting; M is overwritten."""
    n = len(rhs)
    b = list(rhs)
    for col in range(n):
        piv = col
        big = fabs(M[col][col])
        for r in range(col + 1, n):
            if fabs(M[r][col]) > big:
                big = fabs(M[r][col])
                piv = r
        if big == 0.0:
            raise SolverFailure("singular KKT system")
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            b[col], b[piv] = b[piv], b[col]
        inv = 1.0 / M[col][col]
        for r in range(col + 1, n):
            fac = M[r][col] * inv
            if fac != 0.0:
                row = M[r]
                prow = M[col]
                for cc in range(col, n):
                    row[cc] -= fac * prow[cc]
                b[r] -= fac * b[col]
    out = [0.0] * n
    for r in range(n - 1, -1, -1):
        acc = b[r]
        row = M[r]
        for cc in range(r + 1, n):
            acc -= row[cc] * out[cc]
        out[r] = acc / row[r]
    return out


def _lstsq_cols(E, cols, f):
    """Least squares on a column subset of E via Gram-Schmidt with reorthogonalisation."""
    k = len(f)
    p = len(cols)
    Q = []
    R = [[0.0] * p for _ in range(p)]
    for jj, col in enumerate(cols):
        q = [E[r][col] for r in range(k)]
        for _ in range(2):
            for ii in range(jj):
                qi = Q[ii]
                dot = 0.0
                for r in range(k):
                    dot += qi[r] * q[r]
                R[ii][jj] += dot
                for r in range(k):
                    q[r] -= dot * qi[r]
        nrm = sqrt(sum(t * t for t in q))
        if nrm == 0.0:
            raise SolverFailure("rank-deficient passive set in NNLS")
        R[jj][jj] = nrm
        Q.append([t / nrm for t in q])
    qtf = [sum(Q[jj][r] * f[r] for r in range(k)) for jj in range(p)]
    s = [0.0] * p
    for jj in range(p - 1, -1, -1):
        acc = qtf[jj]
        for cc in range(jj + 1, p):
            acc -= R[jj][cc] * s[cc]
        s[jj] = acc / R[jj][jj]
    return s


def nnls(E, f, maxiter=200):
    """Lawson-Hanson non-negative least squares, min ||E u - f||, u >= 0."""
    k = len(f)
    m = len(E[0]) if k else 0
    u = [0.0] * m
    passive = []
    tol = 1e-13 * max(1.0, max((fabs(E[r][c]) for r in range(k) for c in range(m)), default=1.0))
    it = 0

    def gradient():
        res = [f[r] - sum(E[r][c] * u[c] for c in range(m)) for r in range(k)]
        return [sum(E[r][c] * res[r] for r in range(k)) for c in range(m)]

    w = gradient()
    while True:
        cand = -1
        wmax = tol
        for c in range(m):
            if c not in passive and w[c] > wmax:
                wmax = w[c]
                cand = c
        if cand < 0 or len(passive) >= k:
            break
        passive.append(cand)
        passive.sort()
        while True:
            it += 1
            if it > maxiter:
                raise SolverFailure("NNLS iteration cap exceeded")
            s = _lstsq_cols(E, passive, f)
            if all(sj > 0.0 for sj in s):
                for idx, c in enumerate(passive):
                    u[c] = s[idx]
                break
            alpha = 2.0
            for idx, c in enumerate(passive):
                if s[idx] <= 0.0:
                    a = u[c] / (u[c] - s[idx])
                    if a < alpha:
                        alpha = a
            for idx, c in enumerate(passive):
                u[c] += alpha * (s[idx] - u[c])
            passive = [c for c in passive if u[c] > tol]
            for c in range(m):
                if c not in passive:
                    u[c] = 0.0
            if not passive:
                break
        w = gradient()
    res = [sum(E[r][c] * u[c] for c in range(m)) - f[r] for r in range(k)]
    return u, res


def ldp(G, h):
    """Least-distance program min ||w|| s.t. G w >= h.

    Returns ``(True, w)`` with the minimum-norm feasible point or
    ``(False, y)`` with ``y >= 0``, ``G^T y = 0``, ``h^T y = 1``.
    """
    m = len(h)
    n = len(G[0]) if m else 0
    if m == 0:
        return True, [0.0] * n
    E = [[G[i][j] for i in range(m)] for j in range(n)]
    E.append(list(h))
    f = [0.0] * n + [1.0]
    y, res = nnls(E, f)
    last = -res[n]
    # at the NNLS optimum ||res||^2 == -res[n]; a vanishing residual certifies infeasibility
    if last <= 1e-12:
        return False, y
    return True, [-res[j] / res[n] for j in range(n)]


def qp_active_set(H, f, A, b, z0, tol, maxiter):
    """Primal active-set method for min 1/2 z'Hz + f'z s.t. A z + b >= 0.

    ``z0`` must be feasible. The working set starts from the constraints
    active at ``z0`` (lowest indices first, linearly independent only). The
    constraint dropped is the lowest-index one with a negative multiplier and
    blocking ties are broken towards the lowest index.

    Returns ``(z, working_set, multipliers, iterations)``.
    """
    n = len(f)
    m = len(b)
    z = list(z0)
    W = []
    rows = []
    for i in range(m):
        if len(W) >= n:
            break
        slack = sum(A[i][j] * z[j] for j in range(n)) + b[i]
        if fabs(slack) <= tol and _independent(rows, A[i]):
            W.append(i)
            rows.append(list(A[i]))
    for it in range(1, maxiter + 1):
        p, lam = _eqp_step(H, f, A, W, z)
        if max(fabs(t) for t in p) <= tol * max(1.0, max(fabs(t) for t in z)):
            drop = -1
            for idx, i in enumerate(W):
                if lam[idx] < -tol:
                    drop = idx
                    break
            if drop < 0:
                return z, W, lam, it
            del W[drop]
            continue
        alpha = 1.0
        block = -1
        for i in range(m):
            if i in W:
                continue
            ap = sum(A[i][j] * p[j] for j in range(n))
            if ap < -1e-14:
                slack = sum(A[i][j] * z[j] for j in range(n)) + b[i]
                a = max(slack, 0.0) / -ap
                if a < alpha:
                    alpha = a
                    block = i
        z = [z[j] + alpha * p[j] for j in range(n)]
        if block >= 0:
            W.append(block)
            W.sort()
    raise SolverFailure(f"active-set iteration cap {maxiter} exceeded")


def _independent(rows, a):
    if not rows:
        return any(t != 0.0 for t in a)
    # Gram-Schmidt residual of a against the accepted rows
    basis = []
    for r in rows:
        q = list(r)
        for bq in basis:
            d = sum(x * y for x, y in zip(bq, q))
            q = [x - d * y for x, y in zip(q, bq)]
        nq = sqrt(sum(t * t for t in q))
        if nq > 0.0:
            basis.append([t / nq for t in q])
    q = list(a)
    na = sqrt(sum(t * t for t in q))
    for bq in basis:
        d = sum(x * y for x, y in zip(bq, q))
        q = [x - d * y for x, y in zip(q, bq)]
    return sqrt(sum(t * t for t in q)) > 1e-10 * na


def _eqp_step(H, f, A, W, z):
    """Step p and multipliers for the equality-constrained subproblem on W."""
    n = len(f)
    w = len(W)
    size = n + w
    K = [[0.0] * size for _ in range(size)]
    rhs = [0.0] * size
    for i in range(n):
        for j in range(n):
            K[i][j] = H[i][j]
        rhs[i] = -(sum(H[i][j] * z[j] for j in range(n)) + f[i])
    for idx, c in enumerate(W):
        for j in range(n):
            K[j][n + idx] = -A[c][j]
            K[n + idx][j] = A[c][j]
    sol = _solve_dense(K, rhs)
    return sol[:n], sol[n:]


def kkt_solve(H, f, A, b, W):
    """Solve the KKT system with W held as equalities: returns (z, multipliers)."""
    n = len(f)
    size = n + len(W)
    K = [[0.0] * size for _ in range(size)]
    rhs = [0.0] * size
    for i in range(n):
        for j in range(n):
            K[i][j] = H[i][j]
        rhs[i] = -f[i]
    for idx, c in enumerate(W):
        for j in range(n):
            K[j][n + idx] = -A[c][j]
            K[n + idx][j] = A[c][j]
        rhs[n + idx] = -b[c]
    sol = _solve_dense(K, rhs)
    return sol[:n], sol[n:]
