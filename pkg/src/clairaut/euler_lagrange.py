"""Euler-Lagrange oracle, independent of the transform pipeline.

Derivatives ``dL/dv``, ``dL/dq`` and ``W`` are compiled straight from the
expression tree with the numpy backend and evaluated on whole trajectories
at once.  Regular velocities are reconstructed by a separate vectorised
Newton iteration, and time derivatives come from 4th-order finite-difference
stencils on the (possibly non-uniform) sample times.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as E
from .errors import NoConvergence, TooFewSamples

STENCIL = 5


def stencil_weights(t):
    """First-derivative weights on a 5-point window around every sample.

    Returns ``(index, weights)`` with ``index`` of shape ``(N, 5)`` into the
    samples and matching ``weights``.  Interior samples get the centred
    window, the first and last two get one-sided windows.  Weights solve the
    moment equations exactly, so a shortened final step is handled too.
    """
    t = np.asarray(t, dtype=float)
    N = len(t)
    if N < STENCIL:
        raise TooFewSamples(f"need at least {STENCIL} samples for 4th-order differencing, got {N}")
    start = np.clip(np.arange(N) - STENCIL // 2, 0, N - STENCIL)
    index = start[:, None] + np.arange(STENCIL)
    dt = t[index] - t[:, None]
    scale = np.abs(dt).max(axis=1, keepdims=True)
    x = dt / scale
    # moment matrix A[k, j] = x_j^k; the first derivative picks out k = 1
    A = x[:, None, :] ** np.arange(STENCIL)[None, :, None]
    rhs = np.zeros((N, STENCIL))
    rhs[:, 1] = 1.0
    w = np.linalg.solve(A, rhs[..., None])[..., 0] / scale
    return index, w


def time_derivative(t, Y):
    """4th-order derivative of the sampled series ``Y`` (rows are samples)."""
    index, w = stencil_weights(t)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        return np.einsum("nk,nk->n", w, Y[index])
    return np.einsum("nk,nkj->nj", w, Y[index])


def _broadcast(values, N):
    return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (N,)) for v in values], axis=-1)


class LagrangeOracle:
    """Vectorised ``dL/dv``, ``dL/dq`` and ``W`` for one Lagrangian."""

    def __init__(self, lagrangian, table, newton_tol=1e-12, newton_maxit=50):
        self.table = table
        self.n = table.n
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        L = E.substitute(lagrangian, table.parameters)
        q, v = table.coordinates, table.velocities
        Lv = [E.diff(L, s) for s in v]
        Lq = [E.diff(L, s) for s in q]
        W = [E.diff(g, s) for g in Lv for s in v]
        self._L = E.lambdify([L], q + v, backend="numpy")
        self._first = E.lambdify(Lv + Lq, q + v, backend="numpy")
        self._W = E.lambdify(W, q + v, backend="numpy")
        self._scalar = E.lambdify(Lv + Lq + W, q + v)

    def _args(self, q, v):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return [*q.T, *v.T], q.shape[0]

    def lagrangian(self, q, v):
        args, N = self._args(q, v)
        with np.errstate(all="ignore"):
            return _broadcast(self._L(*args), N)[:, 0]

    def first(self, q, v):
        """``(dL/dv, dL/dq)``, each of shape ``(N, n)``."""
        args, N = self._args(q, v)
        with np.errstate(all="ignore"):
            out = _broadcast(self._first(*args), N)
        return out[:, : self.n], out[:, self.n :]

    def hessian(self, q, v):
        args, N = self._args(q, v)
        with np.errstate(all="ignore"):
            return _broadcast(self._W(*args), N).reshape(N, self.n, self.n)

    def regular_velocities(self, q, p, v_deg, regular, degenerate, seed):
        """Solve ``p_i = dL/dv^i`` row by row with vectorised Newton.

        ``seed`` is the starting guess for the regular velocities; rows whose
        Jacobian is singular are nudged by one unit, as the transform does.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        N = q.shape[0]
        reg, deg = list(regular), list(degenerate)
        u = np.zeros((N, self.n))
        if deg:
            u[:, deg] = v_deg
        if not reg:
            return u
        u[:, reg] = seed
        p = np.atleast_2d(np.asarray(p, dtype=float)).reshape(N, len(reg))
        ix = np.ix_(reg, reg)
        for _ in range(self.newton_maxit):
            Lv, _ = self.first(q, u)
            R = p - Lv[:, reg]
            if np.abs(R).max() <= self.newton_tol:
                return u
            J = self.hessian(q, u)[:, ix[0], ix[1]]
            det = np.abs(np.linalg.det(J))
            bad = ~(det > 1e-300)
            if bad.any():
                u[np.ix_(np.flatnonzero(bad), reg)] += 1.0
                J[bad] = np.eye(len(reg))
                R[bad] = 0.0
            u[:, reg] += np.linalg.solve(J, R[..., None])[..., 0]
        Lv, _ = self.first(q, u)
        resid = float(np.abs(p - Lv[:, reg]).max())
        if resid > self.newton_tol:
            raise NoConvergence(f"oracle Newton residual {resid:.3e}", residual=resid)
        return u

    def standard_rhs(self, q, p, guess):
        """Standard Hamilton equations ``(dq/dt, dp/dt) = (V, dL/dq)`` at one point.

        ``V`` solves ``p = dL/dv`` for a nonsingular Lagrangian by scalar
        Newton from ``guess``.  Returns ``(dq, dp, V)``.
        """
        n = self.n
        v = np.array(guess, dtype=float)
        for restart in (0.0, 1.0, -1.0):
            u = v + restart
            for _ in range(self.newton_maxit + 1):
                out = np.asarray(self._scalar(*q, *u), dtype=float)
                R = p - out[:n]
                if np.abs(R).max() <= self.newton_tol:
                    return u, out[n : 2 * n], u
                J = out[2 * n :].reshape(n, n)
                try:
                    u = u + np.linalg.solve(J, R)
                except np.linalg.LinAlgError:
                    break
        raise NoConvergence("oracle Newton failed for the standard Hamiltonian")


@dataclass
class ELResidual:
    """Per-sample Euler-Lagrange residual components.

    ``regular``     ``d/dt(dL/dv^i) - dL/dq^i``
    ``degenerate``  ``d/dt(dL/dv^a) - dL/dq^a``
    ``kinematic``   ``dq^A/dt - v^A`` with ``v`` the reconstructed velocities
    ``unsplit``     all ``n`` Lagrange equations with velocities taken from
                    differencing ``q`` instead of the recorded ones
    """

    t: np.ndarray
    regular: np.ndarray
    degenerate: np.ndarray
    kinematic: np.ndarray
    unsplit: np.ndarray

    @property
    def per_sample(self):
        """Max-norm over the regular, degenerate and kinematic components."""
        parts = [np.abs(a).max(axis=1) for a in (self.regular, self.degenerate, self.kinematic) if a.shape[1]]
        return np.max(parts, axis=0) if parts else np.zeros(len(self.t))

    @property
    def max(self):
        return float(self.per_sample.max()) if len(self.t) else 0.0

    @property
    def unsplit_max(self):
        return float(np.abs(self.unsplit).max()) if self.unsplit.size else 0.0


def el_residual(oracle, split, t, q, p, v_deg):
    """Euler-Lagrange residuals along sampled ``(t, q, p_i, v^a)``.

    Parameters
    ----------
    oracle : LagrangeOracle
    split : IndexSplit
    t : (N,) array
    q : (N, n) array
    p : (N, r) array
    v_deg : (N, n-r) array
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float).reshape(len(t), split.n)
    reg, deg = list(split.regular), list(split.degenerate)
    qdot = time_derivative(t, q)
    u = oracle.regular_velocities(q, p, v_deg, reg, deg, qdot[:, reg])
    Lv, Lq = oracle.first(q, u)
    dLv = time_derivative(t, Lv)
    regular = dLv[:, reg] - Lq[:, reg]
    degenerate = dLv[:, deg] - Lq[:, deg]
    kinematic = qdot - u
    Lv_fd, Lq_fd = oracle.first(q, qdot)
    unsplit = time_derivative(t, Lv_fd) - Lq_fd
    return ELResidual(t, regular, degenerate, kinematic, unsplit)
