"""Pure-Python kernel backend.

Mirrors ``_kernel.pyx`` operation for operation; used when the compiled
extension is unavailable or ``CLAIRAUT_PURE_PYTHON`` is set.
"""

import math

import numpy as np
from scipy.linalg import lu_factor, lu_solve

OK = 0
NO_CONVERGENCE = 1
SINGULAR_JACOBIAN = 2
DOMAIN = 3
F_SINGULAR = 4

RESTART = (0.0, 1.0, -1.0)


def _factor(A, rtol):
    """LU with partial pivoting; ``None`` when a pivot falls below ``rtol * max|A|``."""
    scale = np.abs(A).max() if A.size else 0.0
    if scale == 0.0:
        return None
    lu, piv = lu_factor(A, check_finite=False)
    if np.abs(np.diag(lu)).min() <= rtol * scale:
        return None
    return lu, piv


class Kernel:
    backend = "python"

    def __init__(self, full, newton, n, reg, deg, rank_rtol, newton_tol, newton_maxit):
        self.n = int(n)
        self.reg = np.asarray(reg, dtype=np.intp)
        self.deg = np.asarray(deg, dtype=np.intp)
        self.r = len(self.reg)
        self.m = len(self.deg)
        self.rank_rtol = float(rank_rtol)
        self.newton_tol = float(newton_tol)
        self.newton_maxit = int(newton_maxit)
        self._full = full.python_function()
        self._newton = newton.python_function()
        self.n_full = full.n_outputs
        self._warm = np.zeros(self.r)

    def evaluate(self, x):
        try:
            out = self._full(list(map(float, x)))
        except (ValueError, ZeroDivisionError, OverflowError):
            return DOMAIN, None
        return OK, np.asarray(out, dtype=float)

    def _call(self, fn, x):
        try:
            out = np.asarray(fn(x), dtype=float)
        except (ValueError, ZeroDivisionError, OverflowError):
            return None
        if not np.all(np.isfinite(out)):
            return None
        return out

    def _newton_solve(self, q, p, u, iters):
        r, reg = self.r, self.reg
        it = 0
        while True:
            out = self._call(self._newton, [*q, *u])
            if out is None:
                return DOMAIN, iters, 0.0
            R = p - out[:r]
            resid = float(np.abs(R).max())
            if resid <= self.newton_tol:
                return OK, iters, resid
            if it == self.newton_maxit:
                return NO_CONVERGENCE, iters, resid
            fac = _factor(out[r:].reshape(r, r), self.rank_rtol)
            if fac is None:
                return SINGULAR_JACOBIAN, iters, resid
            u[reg] += lu_solve(fac, R, check_finite=False)
            it += 1
            iters += 1

    def local(self, q, p, vdeg, guess):
        n, r, m = self.n, self.r, self.m
        reg, deg = self.reg, self.deg
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        vdeg = np.asarray(vdeg, dtype=float)
        u = np.zeros(n)
        u[deg] = vdeg
        u[reg] = guess
        iters = 0
        resid = 0.0
        if r:
            # restart from shifted guesses when Newton stalls on a singular iterate
            for shift in RESTART:
                u[reg] = np.asarray(guess, dtype=float) + shift
                status, iters, resid = self._newton_solve(q, p, u, iters)
                if status == OK:
                    break
            if status != OK:
                return status, (iters, resid)
        out = self._call(self._full, [*q, *u])
        if out is None:
            return DOMAIN, (iters, resid)
        L = out[0]
        Lv = out[1:1 + n]
        Lq = out[1 + n:1 + 2 * n]
        W = out[1 + 2 * n:1 + 2 * n + n * n].reshape(n, n)
        Lvq = out[1 + 2 * n + n * n:].reshape(n, n)
        V = u[reg]
        if r:
            fac = _factor(W[np.ix_(reg, reg)], self.rank_rtol)
            if fac is None:
                return SINGULAR_JACOBIAN, (iters, resid)
            M = lu_solve(fac, np.eye(r), check_finite=False)
        else:
            M = np.zeros((0, 0))
        dVdq = -M @ Lvq[reg, :]
        Wdr = W[np.ix_(deg, reg)]
        dhdp = -Wdr @ M
        dhdq = -Lvq[deg, :] - Wdr @ dVdq
        h = -Lv[deg]
        H0 = float(p @ V - L + Lv[deg] @ vdeg)
        dH0dp = V - vdeg @ dhdp
        dH0dq = -Lq - vdeg @ dhdq
        return OK, (V.copy(), H0, h, dH0dq, dH0dp, dhdq, dhdp, iters, resid)

    def rhs(self, y, convention, fsign):
        """Time derivative of ``y = (q, p_regular)`` with degenerate velocities
        solved from the curvature system; full-rank curvature only."""
        n, r, m = self.n, self.r, self.m
        reg, deg = self.reg, self.deg
        status, res = self.local(y[:n], y[n:], np.zeros(m), self._warm)
        if status:
            return status, None
        V, H0, h, dH0dq, dH0dp, dhdq, dhdp = res[:7]
        self._warm = V
        if m:
            hq_r = dhdq[:, reg]
            F = dhdq[:, deg] - dhdq[:, deg].T + hq_r @ dhdp.T - dhdp @ hq_r.T
            F *= fsign
            D = dH0dq[deg] + dhdp @ dH0dq[reg] - hq_r @ dH0dp
            fac = _factor(F.T if convention == 0 else F, self.rank_rtol)
            if fac is None:
                return F_SINGULAR, None
            v = lu_solve(fac, D, check_finite=False)
        else:
            v = np.zeros(0)
        dy = np.empty(n + r)
        dy[reg] = dH0dp + v @ dhdp
        dy[n:] = -dH0dq[reg] - v @ dhdq[:, reg]
        dy[deg] = v
        return OK, (dy, v, H0)

    def integrate(self, y0, t0, t1, dt, convention, fsign, guess):
        """Fixed-step RK4 from ``t0`` to ``t1``; the last step is shortened."""
        n, r, m = self.n, self.r, self.m
        nsteps = max(1, math.ceil((t1 - t0) / dt - 1e-9))
        ts = np.empty(nsteps + 1)
        Y = np.empty((nsteps + 1, n + r))
        VD = np.empty((nsteps + 1, m))
        H = np.empty(nsteps + 1)
        y = np.array(y0, dtype=float)
        self._warm = np.array(guess, dtype=float)
        t = t0
        count = 0
        status, res = self.rhs(y, convention, fsign)
        while True:
            if status:
                return status, count, ts, Y, VD, H
            k1, v, H0 = res
            ts[count] = t
            Y[count] = y
            VD[count] = v
            H[count] = H0
            count += 1
            if count == nsteps + 1:
                return OK, count, ts, Y, VD, H
            h = t1 - t if count == nsteps else dt
            status, res = self.rhs(y + 0.5 * h * k1, convention, fsign)
            if status:
                return status, count, ts, Y, VD, H
            k2 = res[0]
            status, res = self.rhs(y + 0.5 * h * k2, convention, fsign)
            if status:
                return status, count, ts, Y, VD, H
            k3 = res[0]
            status, res = self.rhs(y + h * k3, convention, fsign)
            if status:
                return status, count, ts, Y, VD, H
            k4 = res[0]
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = t1 if count == nsteps else t0 + count * dt
            status, res = self.rhs(y, convention, fsign)
