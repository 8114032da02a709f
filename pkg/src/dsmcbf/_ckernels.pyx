# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels.

Same functions, arguments and return types as ``_pykernels``; the Python
module is the readable reference. Work arrays are fixed-size C buffers, so
the QP kernels accept at most ``MAXN`` variables and ``MAXM`` constraints.
"""
from libc.math cimport cos, sin, fabs, sqrt, INFINITY, M_PI

import numpy as np

from .errors import ModelDomainError, SolverFailure

cdef enum:
    MAXN = 8
    MAXM = 64
    MAXK = 9  # MAXN + 1 rows in the NNLS matrix of an LDP
    MAXKKT = 16  # MAXN variables plus at most MAXN working constraints

KIND_POS_LOWER = 0
KIND_POS_UPPER = 1
KIND_INPUT = 2
KIND_ANGLE = 3
KIND_PAYLOAD = 4

QP_OPTIMAL = 0
QP_INFEASIBLE = 1

cdef double HALF_PI = 0.5 * M_PI


cdef inline int _domain_ok(double th) noexcept nogil:
    return fabs(th) < HALF_PI


cdef _domain_error(double th):
    raise ModelDomainError(f"payload angle {th!r} outside (-pi/2, pi/2)")


cdef inline void _rhs(const double *s, double u, double mc, double mp, double L, double g,
                      double *out) noexcept nogil:
    cdef double c = cos(s[1])
    cdef double sn = sin(s[1])
    cdef double det = mp * L * L * (mc + mp * sn * sn)
    cdef double r1 = u - mp * L * sn * s[3] * s[3]
    cdef double r2 = -mp * g * L * sn
    out[0] = s[2]
    out[1] = s[3]
    out[2] = (mp * L * L * r1 + mp * L * c * r2) / det
    out[3] = (mp * L * c * r1 + (mc + mp) * r2) / det


def crane_rhs(s, double u, double mc, double mp, double L, double g):
    cdef double st[4]
    cdef double out[4]
    cdef int i
    for i in range(4):
        st[i] = s[i]
    if not _domain_ok(st[1]):
        _domain_error(st[1])
    _rhs(st, u, mc, mp, L, g, out)
    return (out[0], out[1], out[2], out[3])


def crane_input_gain(s, double mc, double mp, double L):
    cdef double th = s[1]
    if not _domain_ok(th):
        _domain_error(th)
    cdef double sn = sin(th)
    cdef double det = mp * L * L * (mc + mp * sn * sn)
    return (0.0, 0.0, mp * L * L / det, mp * L * cos(th) / det)


cdef int _rk4(double *s, double u, double kp, double kd, double ref, int pd, double dt,
              double mc, double mp, double L, double g) noexcept nogil:
    """In-place RK4 step; returns 0 on a domain exit at any stage."""
    cdef double k[4][4]
    cdef double tmp[4]
    cdef double h2 = 0.5 * dt
    cdef double uu
    cdef int i, st
    cdef double fac
    for st in range(4):
        if st == 0:
            for i in range(4):
                tmp[i] = s[i]
        else:
            fac = dt if st == 3 else h2
            for i in range(4):
                tmp[i] = s[i] + fac * k[st - 1][i]
        if not _domain_ok(tmp[1]):
            return 0
        uu = -kp * (tmp[0] - ref) - kd * tmp[2] if pd else u
        _rhs(tmp, uu, mc, mp, L, g, k[st])
    for i in range(4):
        s[i] = s[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])
    return _domain_ok(s[1])


def crane_rk4(s, double u, double dt, double mc, double mp, double L, double g):
    """One RK4 step with the input held constant over the step."""
    cdef double st[4]
    cdef int i
    for i in range(4):
        st[i] = s[i]
    if not _rk4(st, u, 0.0, 0.0, 0.0, 0, dt, mc, mp, L, g):
        _domain_error(st[1])
    return (st[0], st[1], st[2], st[3])


def crane_rk4_pd(s, double ref, double kp, double kd, double dt, double mc, double mp,
                 double L, double g):
    """One RK4 step of the crane under the PD law re-evaluated at every stage."""
    cdef double st[4]
    cdef int i
    for i in range(4):
        st[i] = s[i]
    if not _rk4(st, 0.0, kp, kd, ref, 1, dt, mc, mp, L, g):
        _domain_error(st[1])
    return (st[0], st[1], st[2], st[3])


def lyap_value(s, double v, double mc, double mp, double L, double g, double kp):
    cdef double x = s[0], th = s[1], xd = s[2], thd = s[3]
    cdef double c = cos(th)
    cdef double kin = 0.5 * ((mc + mp) * xd * xd - 2.0 * mp * L * c * xd * thd
                             + mp * L * L * thd * thd)
    cdef double e = x - v
    return kin + mp * g * L * (1.0 - c) + 0.5 * kp * e * e


def lyap_grad(s, double v, double mc, double mp, double L, double g, double kp):
    """Returns (dV/dx, dV/dtheta, dV/dxdot, dV/dthetadot, dV/dv)."""
    cdef double x = s[0], th = s[1], xd = s[2], thd = s[3]
    cdef double c = cos(th)
    cdef double sn = sin(th)
    cdef double e = x - v
    return (
        kp * e,
        mp * L * sn * xd * thd + mp * g * L * sn,
        (mc + mp) * xd - mp * L * c * thd,
        -mp * L * c * xd + mp * L * L * thd,
        -kp * e,
    )


cdef inline int _unsafe(int kind, double bound, double v, double kp, double kd, double L,
                        double x, double th, double xd) noexcept nogil:
    if kind == 0:
        return x < bound
    if kind == 1:
        return x > bound
    if kind == 2:
        return fabs(-kp * (x - v) - kd * xd) > bound
    if kind == 3:
        return fabs(th) > bound
    return x + L * sin(th) > bound


def is_unsafe(int kind, double bound, double v, double kp, double kd, double L, s):
    return bool(_unsafe(kind, bound, v, kp, kd, L, s[0], s[1], s[2]))


def grid_scan(int kind, double bound, double v, double kp, double kd, double mc, double mp,
              double L, double g, xs, ths, xds, thds):
    """Minimum of V over the unsafe grid points; (inf, -1, -1, -1, -1) if none."""
    cdef double[::1] X = _vec(xs)
    cdef double[::1] TH = _vec(ths)
    cdef double[::1] XD = _vec(xds)
    cdef double[::1] THD = _vec(thds)
    cdef Py_ssize_t nx = X.shape[0], nth = TH.shape[0], nxd = XD.shape[0], nthd = THD.shape[0]
    cdef Py_ssize_t i, j, k, m
    cdef Py_ssize_t bi = -1, bj = -1, bk = -1, bm = -1
    cdef double best = INFINITY
    cdef double M11 = mc + mp, ML2 = mp * L * L
    cdef double c, pend, cross, e, pos, base, val, xd, th
    with nogil:
        for j in range(nth):
            th = TH[j]
            c = cos(th)
            pend = mp * g * L * (1.0 - c)
            cross = mp * L * c
            for i in range(nx):
                e = X[i] - v
                pos = 0.5 * kp * e * e + pend
                if pos >= best:
                    continue
                if kind != 2 and not _unsafe(kind, bound, v, kp, kd, L, X[i], th, 0.0):
                    continue
                for k in range(nxd):
                    xd = XD[k]
                    if kind == 2 and not fabs(-kp * e - kd * xd) > bound:
                        continue
                    base = pos + 0.5 * M11 * xd * xd
                    for m in range(nthd):
                        val = base - cross * xd * THD[m] + 0.5 * ML2 * THD[m] * THD[m]
                        if val < best:
                            best = val
                            bi = i
                            bj = j
                            bk = k
                            bm = m
    return (best, bi, bj, bk, bm)


cdef double[::1] _vec(seq):
    return np.ascontiguousarray(seq, dtype=np.float64)


# ---------------------------------------------------------------------------
# small dense linear algebra


cdef int _solve_dense_c(double *M, double *b, int n, double *out) noexcept nogil:
    """Gaussian elimination with partial pivoting on row-major ``M``; returns 0 if singular."""
    cdef int col, r, cc, piv
    cdef double big, t, inv, fac, acc
    for col in range(n):
        piv = col
        big = fabs(M[col * n + col])
        for r in range(col + 1, n):
            if fabs(M[r * n + col]) > big:
                big = fabs(M[r * n + col])
                piv = r
        if big == 0.0:
            return 0
        if piv != col:
            for cc in range(n):
                t = M[col * n + cc]
                M[col * n + cc] = M[piv * n + cc]
                M[piv * n + cc] = t
            t = b[col]
            b[col] = b[piv]
            b[piv] = t
        inv = 1.0 / M[col * n + col]
        for r in range(col + 1, n):
            fac = M[r * n + col] * inv
            if fac != 0.0:
                for cc in range(col, n):
                    M[r * n + cc] -= fac * M[col * n + cc]
                b[r] -= fac * b[col]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for cc in range(r + 1, n):
            acc -= M[r * n + cc] * out[cc]
        out[r] = acc / M[r * n + r]
    return 1


cdef int _lstsq_cols_c(double *E, int k, int m, int *cols, int p, double *f, double *s) noexcept nogil:
    """Least squares on columns ``cols`` of the k-by-m matrix E; returns 0 if rank deficient."""
    cdef double Q[MAXK][MAXK]
    cdef double R[MAXK][MAXK]
    cdef double q[MAXK]
    cdef double qtf[MAXK]
    cdef int jj, ii, r, rep, cc
    cdef double dot, nrm, acc
    for jj in range(p):
        for ii in range(p):
            R[jj][ii] = 0.0
    for jj in range(p):
        for r in range(k):
            q[r] = E[r * m + cols[jj]]
        for rep in range(2):
            for ii in range(jj):
                dot = 0.0
                for r in range(k):
                    dot += Q[ii][r] * q[r]
                R[ii][jj] += dot
                for r in range(k):
                    q[r] -= dot * Q[ii][r]
        nrm = 0.0
        for r in range(k):
            nrm += q[r] * q[r]
        nrm = sqrt(nrm)
        if nrm == 0.0:
            return 0
        R[jj][jj] = nrm
        for r in range(k):
            Q[jj][r] = q[r] / nrm
    for jj in range(p):
        acc = 0.0
        for r in range(k):
            acc += Q[jj][r] * f[r]
        qtf[jj] = acc
    for jj in range(p - 1, -1, -1):
        acc = qtf[jj]
        for cc in range(jj + 1, p):
            acc -= R[jj][cc] * s[cc]
        s[jj] = acc / R[jj][jj]
    return 1


cdef int _nnls_c(double *E, int k, int m, double *f, double *u, double *res, int maxiter) noexcept nogil:
    """Lawson-Hanson NNLS; returns 1 on success, -1 on iteration cap, -2 if rank deficient."""
    cdef int passive[MAXK]
    cdef int inpass[MAXM]
    cdef double w[MAXM]
    cdef double s[MAXK]
    cdef int np_ = 0, it = 0, c, r, idx, cand, ii, jj, tmp
    cdef double tol, big = 1.0, wmax, alpha, a, acc
    for r in range(k):
        for c in range(m):
            if fabs(E[r * m + c]) > big:
                big = fabs(E[r * m + c])
    tol = 1e-13 * big
    for c in range(m):
        u[c] = 0.0
        inpass[c] = 0
    while True:
        # gradient E'(f - E u)
        for r in range(k):
            acc = f[r]
            for c in range(m):
                acc -= E[r * m + c] * u[c]
            res[r] = acc
        for c in range(m):
            acc = 0.0
            for r in range(k):
                acc += E[r * m + c] * res[r]
            w[c] = acc
        cand = -1
        wmax = tol
        for c in range(m):
            if not inpass[c] and w[c] > wmax:
                wmax = w[c]
                cand = c
        if cand < 0 or np_ >= k:
            break
        # insert keeping the passive list sorted
        passive[np_] = cand
        np_ += 1
        inpass[cand] = 1
        ii = np_ - 1
        while ii > 0 and passive[ii - 1] > passive[ii]:
            tmp = passive[ii - 1]
            passive[ii - 1] = passive[ii]
            passive[ii] = tmp
            ii -= 1
        while True:
            it += 1
            if it > maxiter:
                return -1
            if not _lstsq_cols_c(E, k, m, passive, np_, f, s):
                return -2
            ii = 1
            for idx in range(np_):
                if not s[idx] > 0.0:
                    ii = 0
                    break
            if ii:
                for idx in range(np_):
                    u[passive[idx]] = s[idx]
                break
            alpha = 2.0
            for idx in range(np_):
                c = passive[idx]
                if s[idx] <= 0.0:
                    a = u[c] / (u[c] - s[idx])
                    if a < alpha:
                        alpha = a
            for idx in range(np_):
                c = passive[idx]
                u[c] += alpha * (s[idx] - u[c])
            jj = 0
            for idx in range(np_):
                c = passive[idx]
                if u[c] > tol:
                    passive[jj] = c
                    jj += 1
                else:
                    inpass[c] = 0
            np_ = jj
            for c in range(m):
                if not inpass[c]:
                    u[c] = 0.0
            if np_ == 0:
                break
    for r in range(k):
        acc = -f[r]
        for c in range(m):
            acc += E[r * m + c] * u[c]
        res[r] = acc
    return 1


def _check_sizes(int n, int m):
    if n > MAXN or m > MAXM:
        raise ValueError(f"compiled kernels support at most {MAXN} variables and {MAXM} rows")


def nnls(E, f, maxiter=200):
    """Lawson-Hanson non-negative least squares, min ||E u - f||, u >= 0."""
    cdef int k = len(f)
    cdef int m = len(E[0]) if k else 0
    if k > MAXK or m > MAXM:
        raise ValueError(f"compiled NNLS supports at most {MAXK} rows and {MAXM} columns")
    cdef double Ec[MAXK * MAXM]
    cdef double fc[MAXK]
    cdef double u[MAXM]
    cdef double res[MAXK]
    cdef int r, c, st
    for r in range(k):
        fc[r] = f[r]
        row = E[r]
        for c in range(m):
            Ec[r * m + c] = row[c]
    st = _nnls_c(Ec, k, m, fc, u, res, maxiter)
    if st == -1:
        raise SolverFailure("NNLS iteration cap exceeded")
    if st == -2:
        raise SolverFailure("rank-deficient passive set in NNLS")
    return [u[c] for c in range(m)], [res[r] for r in range(k)]


def ldp(G, h):
    """Least-distance program min ||w|| s.t. G w >= h.

    Returns ``(True, w)`` with the minimum-norm feasible point or
    ``(False, y)`` with ``y >= 0``, ``G^T y = 0``, ``h^T y = 1``.
    """
    cdef int m = len(h)
    cdef int n = len(G[0]) if m else 0
    if m == 0:
        return True, [0.0] * n
    _check_sizes(n, m)
    cdef double Ec[MAXK * MAXM]
    cdef double fc[MAXK]
    cdef double y[MAXM]
    cdef double res[MAXK]
    cdef int i, j, st
    for i in range(m):
        row = G[i]
        for j in range(n):
            Ec[j * m + i] = row[j]
        Ec[n * m + i] = h[i]
    for j in range(n):
        fc[j] = 0.0
    fc[n] = 1.0
    st = _nnls_c(Ec, n + 1, m, fc, y, res, 200)
    if st == -1:
        raise SolverFailure("NNLS iteration cap exceeded")
    if st == -2:
        raise SolverFailure("rank-deficient passive set in NNLS")
    if -res[n] <= 1e-12:
        return False, [y[i] for i in range(m)]
    return True, [-res[j] / res[n] for j in range(n)]


# ---------------------------------------------------------------------------
# active-set QP


cdef int _independent_c(double *A, int n, int *W, int nw, int cand) noexcept nogil:
    cdef double basis[MAXN][MAXN]
    cdef double q[MAXN]
    cdef int nb = 0, ii, jj, j
    cdef double d, nq, na
    for ii in range(nw):
        for j in range(n):
            q[j] = A[W[ii] * n + j]
        for jj in range(nb):
            d = 0.0
            for j in range(n):
                d += basis[jj][j] * q[j]
            for j in range(n):
                q[j] -= d * basis[jj][j]
        nq = 0.0
        for j in range(n):
            nq += q[j] * q[j]
        nq = sqrt(nq)
        if nq > 0.0:
            for j in range(n):
                basis[nb][j] = q[j] / nq
            nb += 1
    na = 0.0
    for j in range(n):
        q[j] = A[cand * n + j]
        na += q[j] * q[j]
    na = sqrt(na)
    if nb == 0:
        return na > 0.0
    for jj in range(nb):
        d = 0.0
        for j in range(n):
            d += basis[jj][j] * q[j]
        for j in range(n):
            q[j] -= d * basis[jj][j]
    nq = 0.0
    for j in range(n):
        nq += q[j] * q[j]
    return sqrt(nq) > 1e-10 * na


cdef int _kkt_c(double *H, double *f, double *A, double *b, int n, int *W, int nw,
                double *z, int step, double *sol) noexcept nogil:
    """KKT solve on working set W. ``step`` selects the step form (rhs -(Hz+f), 0)."""
    cdef double K[MAXKKT * MAXKKT]
    cdef double rhs[MAXKKT]
    cdef int size = n + nw, i, j, idx, c
    cdef double acc
    for i in range(size * size):
        K[i] = 0.0
    for i in range(n):
        acc = f[i]
        for j in range(n):
            K[i * size + j] = H[i * n + j]
            if step:
                acc += H[i * n + j] * z[j]
        rhs[i] = -acc
    for idx in range(nw):
        c = W[idx]
        for j in range(n):
            K[j * size + n + idx] = -A[c * n + j]
            K[(n + idx) * size + j] = A[c * n + j]
        rhs[n + idx] = 0.0 if step else -b[c]
    return _solve_dense_c(K, rhs, size, sol)


cdef void _load(H, f, A, b, int n, int m, double *Hc, double *fc, double *Ac, double *bc):
    cdef int i, j
    for i in range(n):
        fc[i] = f[i]
        row = H[i]
        for j in range(n):
            Hc[i * n + j] = row[j]
    for i in range(m):
        bc[i] = b[i]
        row = A[i]
        for j in range(n):
            Ac[i * n + j] = row[j]


def qp_active_set(H, f, A, b, z0, double tol, int maxiter):
    """Primal active-set method for min 1/2 z'Hz + f'z s.t. A z + b >= 0.

    Same contract as the Python reference: ``z0`` feasible, lowest-index
    drop and blocking rules. Returns ``(z, working_set, multipliers, iterations)``.
    """
    cdef int n = len(f)
    cdef int m = len(b)
    _check_sizes(n, m)
    cdef double Hc[MAXN * MAXN]
    cdef double fc[MAXN]
    cdef double Ac[MAXM * MAXN]
    cdef double bc[MAXM]
    cdef double z[MAXN]
    cdef double sol[MAXKKT]
    cdef int W[MAXN]
    cdef int inW[MAXM]
    cdef int nw = 0, i, j, it, drop, block, idx, ok
    cdef double slack, pmax, zmax, alpha, ap, a
    _load(H, f, A, b, n, m, Hc, fc, Ac, bc)
    for j in range(n):
        z[j] = z0[j]
    for i in range(m):
        inW[i] = 0
    for i in range(m):
        if nw >= n:
            break
        slack = bc[i]
        for j in range(n):
            slack += Ac[i * n + j] * z[j]
        if fabs(slack) <= tol and _independent_c(Ac, n, W, nw, i):
            W[nw] = i
            inW[i] = 1
            nw += 1
    for it in range(1, maxiter + 1):
        ok = _kkt_c(Hc, fc, Ac, bc, n, W, nw, z, 1, sol)
        if not ok:
            raise SolverFailure("singular KKT system")
        pmax = 0.0
        zmax = 1.0
        for j in range(n):
            if fabs(sol[j]) > pmax:
                pmax = fabs(sol[j])
            if fabs(z[j]) > zmax:
                zmax = fabs(z[j])
        if pmax <= tol * zmax:
            drop = -1
            for idx in range(nw):
                if sol[n + idx] < -tol:
                    drop = idx
                    break
            if drop < 0:
                return ([z[j] for j in range(n)], [W[idx] for idx in range(nw)],
                        [sol[n + idx] for idx in range(nw)], it)
            inW[W[drop]] = 0
            for idx in range(drop, nw - 1):
                W[idx] = W[idx + 1]
            nw -= 1
            continue
        alpha = 1.0
        block = -1
        for i in range(m):
            if inW[i]:
                continue
            ap = 0.0
            for j in range(n):
                ap += Ac[i * n + j] * sol[j]
            if ap < -1e-14:
                slack = bc[i]
                for j in range(n):
                    slack += Ac[i * n + j] * z[j]
                a = (slack if slack > 0.0 else 0.0) / -ap
                if a < alpha:
                    alpha = a
                    block = i
        for j in range(n):
            z[j] += alpha * sol[j]
        if block >= 0:
            if nw >= MAXN:
                raise SolverFailure("working set exceeds the number of variables")
            idx = nw
            while idx > 0 and W[idx - 1] > block:
                W[idx] = W[idx - 1]
                idx -= 1
            W[idx] = block
            inW[block] = 1
            nw += 1
    raise SolverFailure(f"active-set iteration cap {maxiter} exceeded")


def kkt_solve(H, f, A, b, W):
    """Solve the KKT system with W held as equalities: returns (z, multipliers)."""
    cdef int n = len(f)
    cdef int m = len(b)
    cdef int nw = len(W)
    _check_sizes(n, m)
    if nw > MAXN:
        raise ValueError("working set larger than the compiled limit")
    cdef double Hc[MAXN * MAXN]
    cdef double fc[MAXN]
    cdef double Ac[MAXM * MAXN]
    cdef double bc[MAXM]
    cdef double sol[MAXKKT]
    cdef int Wc[MAXN]
    cdef int idx, j
    _load(H, f, A, b, n, m, Hc, fc, Ac, bc)
    for idx in range(nw):
        Wc[idx] = W[idx]
    if not _kkt_c(Hc, fc, Ac, bc, n, Wc, nw, NULL, 0, sol):
        raise SolverFailure("singular KKT system")
    return [sol[j] for j in range(n)], [sol[n + idx] for idx in range(nw)]
