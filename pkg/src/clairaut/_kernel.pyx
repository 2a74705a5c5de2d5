# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend: tape interpretation, velocity resolution with
implicit-function derivatives, and the fixed-step RK4 loop.

Status codes must match ``_pykernel``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, log, sqrt, pow, fabs, isfinite, ceil

cnp.import_array()

cdef enum:
    OK = 0
    NO_CONVERGENCE = 1
    SINGULAR_JACOBIAN = 2
    DOMAIN = 3
    F_SINGULAR = 4

cdef enum:
    OP_CONST = 0
    OP_ADD = 1
    OP_SUB = 2
    OP_MUL = 3
    OP_DIV = 4
    OP_NEG = 5
    OP_POW = 6
    OP_SIN = 7
    OP_COS = 8
    OP_EXP = 9
    OP_LOG = 10
    OP_SQRT = 11


cdef double[3] RESTART
RESTART[0] = 0.0
RESTART[1] = 1.0
RESTART[2] = -1.0


cdef struct CTape:
    int n_ins
    int n_in
    int n_out
    int* op
    int* a
    int* b
    double* c
    int* outs
    double* slots


cdef int run_tape(CTape* t, const double* x, double* out) noexcept nogil:
    cdef int k, s
    cdef double* sl = t.slots
    cdef double v
    for k in range(t.n_in):
        sl[k] = x[k]
    for k in range(t.n_ins):
        s = t.n_in + k
        if t.op[k] == OP_CONST:
            sl[s] = t.c[k]
        elif t.op[k] == OP_ADD:
            sl[s] = sl[t.a[k]] + sl[t.b[k]]
        elif t.op[k] == OP_SUB:
            sl[s] = sl[t.a[k]] - sl[t.b[k]]
        elif t.op[k] == OP_MUL:
            sl[s] = sl[t.a[k]] * sl[t.b[k]]
        elif t.op[k] == OP_DIV:
            sl[s] = sl[t.a[k]] / sl[t.b[k]]
        elif t.op[k] == OP_NEG:
            sl[s] = -sl[t.a[k]]
        elif t.op[k] == OP_POW:
            if t.c[k] == 2.0:
                v = sl[t.a[k]]
                sl[s] = v * v
            else:
                sl[s] = pow(sl[t.a[k]], t.c[k])
        elif t.op[k] == OP_SIN:
            sl[s] = sin(sl[t.a[k]])
        elif t.op[k] == OP_COS:
            sl[s] = cos(sl[t.a[k]])
        elif t.op[k] == OP_EXP:
            sl[s] = exp(sl[t.a[k]])
        elif t.op[k] == OP_LOG:
            sl[s] = log(sl[t.a[k]])
        else:
            sl[s] = sqrt(sl[t.a[k]])
    for k in range(t.n_out):
        v = sl[t.outs[k]]
        if not isfinite(v):
            return DOMAIN
        out[k] = v
    return OK


cdef int lu_factor(double* A, int* piv, int m, double rtol) noexcept nogil:
    """In-place row-major LU with partial pivoting; 1 if a pivot is negligible."""
    cdef int i, j, k, p
    cdef double scale = 0.0, best, tmp
    for i in range(m * m):
        if fabs(A[i]) > scale:
            scale = fabs(A[i])
    if scale == 0.0:
        return 1
    for k in range(m):
        p = k
        best = fabs(A[k * m + k])
        for i in range(k + 1, m):
            if fabs(A[i * m + k]) > best:
                best = fabs(A[i * m + k])
                p = i
        if best <= rtol * scale:
            return 1
        piv[k] = p
        if p != k:
            for j in range(m):
                tmp = A[k * m + j]
                A[k * m + j] = A[p * m + j]
                A[p * m + j] = tmp
        for i in range(k + 1, m):
            A[i * m + k] /= A[k * m + k]
            for j in range(k + 1, m):
                A[i * m + j] -= A[i * m + k] * A[k * m + j]
    return 0


cdef void lu_solve(const double* A, const int* piv, double* b, int m) noexcept nogil:
    cdef int i, j
    cdef double tmp
    for i in range(m):
        if piv[i] != i:
            tmp = b[i]
            b[i] = b[piv[i]]
            b[piv[i]] = tmp
    for i in range(m):
        for j in range(i):
            b[i] -= A[i * m + j] * b[j]
    for i in range(m - 1, -1, -1):
        for j in range(i + 1, m):
            b[i] -= A[i * m + j] * b[j]
        b[i] /= A[i * m + i]


cdef class _TapeHolder:
    cdef CTape t
    cdef object keep

    def __init__(self, tape):
        op = np.ascontiguousarray(tape.op, dtype=np.intc)
        a = np.ascontiguousarray(tape.a, dtype=np.intc)
        b = np.ascontiguousarray(tape.b, dtype=np.intc)
        c = np.ascontiguousarray(tape.c, dtype=np.float64)
        outs = np.ascontiguousarray(tape.outputs, dtype=np.intc)
        slots = np.zeros(max(tape.n_slots, 1), dtype=np.float64)
        self.keep = (op, a, b, c, outs, slots)
        self.t.n_ins = len(op)
        self.t.n_in = tape.n_inputs
        self.t.n_out = len(outs)
        self.t.op = <int*>cnp.PyArray_DATA(op)
        self.t.a = <int*>cnp.PyArray_DATA(a)
        self.t.b = <int*>cnp.PyArray_DATA(b)
        self.t.c = <double*>cnp.PyArray_DATA(c)
        self.t.outs = <int*>cnp.PyArray_DATA(outs)
        self.t.slots = <double*>cnp.PyArray_DATA(slots)


cdef class Kernel:
    cdef public int n, r, m
    cdef public double rank_rtol, newton_tol
    cdef public int newton_maxit
    cdef public int n_full
    cdef _TapeHolder full, newton
    cdef int[::1] reg, deg
    # scratch
    cdef double[::1] x, nout, fout, u, R, Wrr, M, warm
    cdef int[::1] piv, pivF
    cdef double[::1] V, h, dH0dq, dH0dp, dhdq, dhdp, dVdq, Fm, D, vd, zeros
    cdef double[::1] k1, k2, k3, k4, ytmp, dy
    cdef double H0
    cdef int iters
    cdef double resid
    backend = "cython"

    def __init__(self, full, newton, n, reg, deg, rank_rtol, newton_tol, newton_maxit):
        self.n = n
        self.r = len(reg)
        self.m = len(deg)
        # padded so that &reg[0] is valid when a set is empty
        self.reg = np.concatenate([np.asarray(reg, dtype=np.intc), [0]]).astype(np.intc)
        self.deg = np.concatenate([np.asarray(deg, dtype=np.intc), [0]]).astype(np.intc)
        self.rank_rtol = rank_rtol
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self.full = _TapeHolder(full)
        self.newton = _TapeHolder(newton)
        self.n_full = full.n_outputs
        r, m = self.r, self.m
        z = lambda k: np.zeros(max(k, 1))
        self.x = z(2 * n)
        self.nout = z(newton.n_outputs)
        self.fout = z(full.n_outputs)
        self.u = z(n)
        self.R = z(r)
        self.Wrr = z(r * r)
        self.M = z(r * r)
        self.warm = z(r)
        self.piv = np.zeros(max(max(r, m), 1), dtype=np.intc)
        self.pivF = np.zeros(max(m, 1), dtype=np.intc)
        self.V = z(r)
        self.h = z(m)
        self.dH0dq = z(n)
        self.dH0dp = z(r)
        self.dhdq = z(m * n)
        self.dhdp = z(m * r)
        self.dVdq = z(r * n)
        self.Fm = z(m * m)
        self.D = z(m)
        self.vd = z(m)
        self.zeros = z(m)
        self.k1 = z(n + r)
        self.k2 = z(n + r)
        self.k3 = z(n + r)
        self.k4 = z(n + r)
        self.ytmp = z(n + r)
        self.dy = z(n + r)

    def evaluate(self, x):
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        out = np.zeros(self.n_full)
        cdef double[::1] ov = out
        if run_tape(&self.full.t, &xv[0], &ov[0]) != OK:
            return DOMAIN, None
        return OK, out

    cdef int _newton(self, const double* p) noexcept nogil:
        cdef int r = self.r, i, it = 0
        cdef int* reg = &self.reg[0]
        cdef double* x = &self.x[0]
        cdef double* u = x + self.n
        cdef double* nout = &self.nout[0]
        cdef double* Wrr = &self.Wrr[0]
        cdef double* R = &self.R[0]
        cdef double res
        cdef int st
        while True:
            st = run_tape(&self.newton.t, x, nout)
            if st != OK:
                return st
            res = 0.0
            for i in range(r):
                R[i] = p[i] - nout[i]
                if fabs(R[i]) > res:
                    res = fabs(R[i])
            self.resid = res
            if res <= self.newton_tol:
                return OK
            if it == self.newton_maxit:
                return NO_CONVERGENCE
            for i in range(r * r):
                Wrr[i] = nout[r + i]
            if lu_factor(Wrr, &self.piv[0], r, self.rank_rtol):
                return SINGULAR_JACOBIAN
            lu_solve(Wrr, &self.piv[0], R, r)
            for i in range(r):
                u[reg[i]] += R[i]
            it += 1
            self.iters += 1

    cdef int _local(self, const double* q, const double* p, const double* vdeg,
                    const double* guess) noexcept nogil:
        cdef int n = self.n, r = self.r, m = self.m
        cdef int i, j, a, b, A, st = 0, attempt
        cdef double s
        cdef int* reg = &self.reg[0]
        cdef int* deg = &self.deg[0]
        cdef double* x = &self.x[0]
        cdef double* u = x + n
        cdef double* nout = &self.nout[0]
        cdef double* W
        cdef double* Lvq
        cdef double* Lv
        cdef double* Lq
        cdef double* fo = &self.fout[0]
        cdef double* M = &self.M[0]
        cdef double* Wrr = &self.Wrr[0]
        cdef double* R = &self.R[0]
        for i in range(n):
            x[i] = q[i]
        for a in range(m):
            u[deg[a]] = vdeg[a]
        for i in range(r):
            u[reg[i]] = guess[i]
        self.iters = 0
        self.resid = 0.0
        if r > 0:
            # restart from shifted guesses when Newton stalls on a singular iterate
            for attempt in range(3):
                for i in range(r):
                    u[reg[i]] = guess[i] + RESTART[attempt]
                st = self._newton(p)
                if st == OK:
                    break
            if st != OK:
                return st
        st = run_tape(&self.full.t, x, fo)
        if st != OK:
            return st
        Lv = fo + 1
        Lq = fo + 1 + n
        W = fo + 1 + 2 * n
        Lvq = fo + 1 + 2 * n + n * n
        for i in range(r):
            self.V[i] = u[reg[i]]
        if r > 0:
            for i in range(r):
                for j in range(r):
                    Wrr[i * r + j] = W[reg[i] * n + reg[j]]
            if lu_factor(Wrr, &self.piv[0], r, self.rank_rtol):
                return SINGULAR_JACOBIAN
            # M = W_rr^{-1}, column by column
            for j in range(r):
                for i in range(r):
                    R[i] = 1.0 if i == j else 0.0
                lu_solve(Wrr, &self.piv[0], R, r)
                for i in range(r):
                    M[i * r + j] = R[i]
        # dV/dq = -M Lvq[reg, :]
        for i in range(r):
            for A in range(n):
                s = 0.0
                for j in range(r):
                    s += M[i * r + j] * Lvq[reg[j] * n + A]
                self.dVdq[i * n + A] = -s
        for a in range(m):
            self.h[a] = -Lv[deg[a]]
            for j in range(r):
                s = 0.0
                for i in range(r):
                    s += W[deg[a] * n + reg[i]] * M[i * r + j]
                self.dhdp[a * r + j] = -s
            for A in range(n):
                s = Lvq[deg[a] * n + A]
                for i in range(r):
                    s += W[deg[a] * n + reg[i]] * self.dVdq[i * n + A]
                self.dhdq[a * n + A] = -s
        s = -fo[0]
        for i in range(r):
            s += p[i] * self.V[i]
        for b in range(m):
            s += Lv[deg[b]] * vdeg[b]
        self.H0 = s
        for j in range(r):
            s = self.V[j]
            for b in range(m):
                s -= self.dhdp[b * r + j] * vdeg[b]
            self.dH0dp[j] = s
        for A in range(n):
            s = -Lq[A]
            for b in range(m):
                s -= self.dhdq[b * n + A] * vdeg[b]
            self.dH0dq[A] = s
        return OK

    def local(self, q, p, vdeg, guess):
        cdef int n = self.n, r = self.r, m = self.m
        p_arr = np.zeros(max(r, 1))
        v_arr = np.zeros(max(m, 1))
        g_arr = np.zeros(max(r, 1))
        p_arr[:r] = np.asarray(p, dtype=np.float64).reshape(-1)
        v_arr[:m] = np.asarray(vdeg, dtype=np.float64).reshape(-1)
        g_arr[:r] = np.asarray(guess, dtype=np.float64).reshape(-1)
        cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64).reshape(-1)
        cdef double[::1] pv = p_arr
        cdef double[::1] vv = v_arr
        cdef double[::1] gv = g_arr
        st = self._local(&qv[0], &pv[0], &vv[0], &gv[0])
        if st != OK:
            return st, (self.iters, self.resid)
        V = np.array(self.V[:r])
        h = np.array(self.h[:m])
        dH0dq = np.array(self.dH0dq[:n])
        dH0dp = np.array(self.dH0dp[:r])
        dhdq = np.array(self.dhdq[:m * n]).reshape(m, n)
        dhdp = np.array(self.dhdp[:m * r]).reshape(m, r)
        return OK, (V, self.H0, h, dH0dq, dH0dp, dhdq, dhdp, self.iters, self.resid)

    cdef int _rhs(self, const double* y, double* dy, int convention, double fsign) noexcept nogil:
        cdef int n = self.n, r = self.r, m = self.m
        cdef int i, a, b, st
        cdef double s
        cdef int* reg = &self.reg[0]
        cdef int* deg = &self.deg[0]
        cdef double* F = &self.Fm[0]
        cdef double* D = &self.D[0]
        cdef double* v = &self.vd[0]
        st = self._local(y, y + n, &self.zeros[0], &self.warm[0])
        if st != OK:
            return st
        for i in range(r):
            self.warm[i] = self.V[i]
        if m > 0:
            for a in range(m):
                for b in range(m):
                    s = self.dhdq[a * n + deg[b]] - self.dhdq[b * n + deg[a]]
                    for i in range(r):
                        s += (self.dhdq[a * n + reg[i]] * self.dhdp[b * r + i]
                              - self.dhdq[b * n + reg[i]] * self.dhdp[a * r + i])
                    if convention == 0:
                        F[b * m + a] = fsign * s
                    else:
                        F[a * m + b] = fsign * s
                s = self.dH0dq[deg[a]]
                for i in range(r):
                    s += (self.dH0dq[reg[i]] * self.dhdp[a * r + i]
                          - self.dhdq[a * n + reg[i]] * self.dH0dp[i])
                D[a] = s
                v[a] = s
            if lu_factor(F, &self.pivF[0], m, self.rank_rtol):
                return F_SINGULAR
            lu_solve(F, &self.pivF[0], v, m)
        for i in range(r):
            s = self.dH0dp[i]
            for b in range(m):
                s += v[b] * self.dhdp[b * r + i]
            dy[reg[i]] = s
            s = -self.dH0dq[reg[i]]
            for b in range(m):
                s -= v[b] * self.dhdq[b * n + reg[i]]
            dy[n + i] = s
        for b in range(m):
            dy[deg[b]] = v[b]
        return OK

    def rhs(self, y, int convention, double fsign):
        cdef int n = self.n, r = self.r, m = self.m
        cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
        dy = np.zeros(n + r)
        cdef double[::1] dv = dy
        st = self._rhs(&yv[0], &dv[0], convention, fsign)
        if st != OK:
            return st, None
        return OK, (dy, np.array(self.vd[:m]), self.H0)

    def integrate(self, y0, double t0, double t1, double dt, int convention, double fsign, guess):
        cdef int n = self.n, r = self.r, m = self.m, N = n + r
        cdef Py_ssize_t nsteps = max(1, <Py_ssize_t>ceil((t1 - t0) / dt - 1e-9))
        ts_a = np.empty(nsteps + 1)
        Y_a = np.empty((nsteps + 1, N))
        VD_a = np.empty((nsteps + 1, m))
        H_a = np.empty(nsteps + 1)
        cdef double[::1] ts = ts_a
        cdef double[:, ::1] Y = Y_a
        cdef double[:, ::1] VD = VD_a
        cdef double[::1] H = H_a
        cdef double[::1] y = np.array(y0, dtype=np.float64)
        cdef double* k1 = &self.k1[0]
        cdef double* k2 = &self.k2[0]
        cdef double* k3 = &self.k3[0]
        cdef double* k4 = &self.k4[0]
        cdef double* yt = &self.ytmp[0]
        cdef double t = t0, hstep
        cdef Py_ssize_t count = 0
        cdef int st, i, a
        g = np.asarray(guess, dtype=np.float64).reshape(-1)
        for i in range(r):
            self.warm[i] = g[i]
        with nogil:
            st = self._rhs(&y[0], k1, convention, fsign)
            while True:
                if st != OK:
                    break
                ts[count] = t
                for i in range(N):
                    Y[count, i] = y[i]
                for a in range(m):
                    VD[count, a] = self.vd[a]
                H[count] = self.H0
                count += 1
                if count == nsteps + 1:
                    break
                hstep = (t1 - t) if count == nsteps else dt
                for i in range(N):
                    yt[i] = y[i] + 0.5 * hstep * k1[i]
                st = self._rhs(yt, k2, convention, fsign)
                if st != OK:
                    break
                for i in range(N):
                    yt[i] = y[i] + 0.5 * hstep * k2[i]
                st = self._rhs(yt, k3, convention, fsign)
                if st != OK:
                    break
                for i in range(N):
                    yt[i] = y[i] + hstep * k3[i]
                st = self._rhs(yt, k4, convention, fsign)
                if st != OK:
                    break
                for i in range(N):
                    y[i] = y[i] + (hstep / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                t = t1 if count == nsteps else t0 + count * dt
                st = self._rhs(&y[0], k1, convention, fsign)
        return st, count, ts_a, Y_a, VD_a, H_a
