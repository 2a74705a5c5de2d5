"""Mixed envelope/general Clairaut-Legendre transform of a Lagrangian.

:class:`ClairautSystem` resolves the regular velocities by Newton iteration
and evaluates the physical Hamiltonian ``H0(q, p_i)``, the degenerate-direction
Hamiltonians ``h_a(q, p_i)``, the mixed Clairaut-Hamilton function, and the
gradients of ``H0`` and ``h_a`` through the implicit-function rule.
"""

import threading
from collections import OrderedDict, namedtuple

import numpy as np

from . import expr as E
from . import kernel as K
from .analysis import default_samples, hessian, split as split_indices
from .config import DEFAULT_TOLERANCES
from .errors import (
    DependenceOnVelocity,
    DomainError,
    ModelSingular,
    NoConvergence,
    SingularJacobian,
)

LocalData = namedtuple(
    "LocalData",
    "V H0 h dH0_dq dH0_dp dh_dq dh_dp iterations residual",
)
LocalData.__doc__ = """Everything the dynamics needs at one point ``(q, p_i)``.

``V`` are the resolved regular velocities, ``dh_dq`` is ``(n-r) x n`` and
``dh_dp`` is ``(n-r) x r``.
"""

Resolution = namedtuple("Resolution", "velocities residual iterations")

#: second probe for the velocity-independence checks
PROBE = 0.7071067811865476


class ClairautSystem:
    """A Lagrangian together with its index split and compiled kernel.

    Parameters
    ----------
    lagrangian : Expr
        Lagrangian over the coordinate and velocity symbols of ``table``.
    table : SymbolTable
    split : IndexSplit, optional
        Computed from the Hessian at default sample points when omitted.
    tolerances : Tolerances, optional
    backend : {"cython", "python"}, optional
        Kernel implementation; defaults to the one selected at import.
    """

    curvature_sign = 1.0

    def __init__(self, lagrangian, table, split=None, tolerances=None, backend=None, samples=None):
        self.lagrangian = lagrangian
        self.table = table
        self.tolerances = tolerances or DEFAULT_TOLERANCES
        self.hessian = hessian(lagrangian, table)
        if split is None:
            tol = self.tolerances
            if samples is None:
                samples = default_samples(table, tol.n_samples, tol.seed)
            split = split_indices(self.hessian, samples, tol.rank_rtol)
        self.split = split
        self.kernel = K.build_kernel(self.hessian, split, self.tolerances, backend)
        self.backend = self.kernel.backend
        self._lock = threading.Lock()
        self._cache = OrderedDict()

    def with_curvature_sign(self, sign):
        """Copy whose curvature matrix is multiplied by ``sign`` (fault injection)."""
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other._lock = threading.Lock()
        other._cache = OrderedDict()
        other.curvature_sign = float(sign)
        return other

    # -- shape ---------------------------------------------------------------

    @property
    def n(self):
        return self.split.n

    @property
    def r(self):
        return self.split.rank

    @property
    def m(self):
        return self.n - self.split.rank

    @property
    def regular(self):
        return self.split.regular

    @property
    def degenerate(self):
        return self.split.degenerate

    @property
    def regular_names(self):
        return tuple(self.table.coordinates[k] for k in self.regular)

    @property
    def degenerate_names(self):
        return tuple(self.table.coordinates[k] for k in self.degenerate)

    @property
    def momentum_names(self):
        return self.table.momentum_names(self.regular)

    def degenerate_index(self, alpha):
        """Position of ``alpha`` within the degenerate set (name or position)."""
        if isinstance(alpha, str):
            return self.degenerate_names.index(alpha)
        if not 0 <= alpha < self.m:
            raise IndexError(f"degenerate index {alpha} out of range")
        return int(alpha)

    # -- kernel access -------------------------------------------------------

    def _raise(self, status, info, q, u):
        iters, resid = info
        if status == K.NO_CONVERGENCE:
            raise NoConvergence(
                f"Newton did not converge after {iters} iterations (residual {resid:.3e})",
                residual=resid,
            )
        if status == K.SINGULAR_JACOBIAN:
            raise SingularJacobian("regular Hessian minor is singular at this point")
        if status == K.DOMAIN:
            self._locate_domain_error(q, u)
        raise RuntimeError(f"kernel status {status}")

    def _locate_domain_error(self, q, u):
        binding = dict(zip(self.table.coordinates, q))
        binding.update(zip(self.table.velocities, u))
        binding.update(self.table.parameters)
        h = self.hessian
        for e in [h.lagrangian, *h.gradient_v, *h.gradient_q]:
            E.evaluate(e, binding)
        for row in h.matrix + h.mixed:
            for e in row:
                E.evaluate(e, binding)
        raise DomainError("non-finite value in the Lagrangian derivatives")

    def local(self, q, p, v_deg=None, guess=None):
        """Resolve velocities and evaluate ``H0``, ``h_a`` and their gradients."""
        q = np.asarray(q, dtype=float).reshape(self.n)
        p = np.asarray(p, dtype=float).reshape(self.r)
        v_deg = np.zeros(self.m) if v_deg is None else np.asarray(v_deg, dtype=float).reshape(self.m)
        guess = np.zeros(self.r) if guess is None else np.asarray(guess, dtype=float).reshape(self.r)
        key = (q.tobytes(), p.tobytes(), v_deg.tobytes(), guess.tobytes())
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
            out = self._evaluate(q, p, v_deg, guess)
            self._cache[key] = out
            if len(self._cache) > 32:
                self._cache.popitem(last=False)
            return out

    def local_uncached(self, q, p, guess):
        """:meth:`local` with zero probe velocities and no cache (integrator use)."""
        return self._evaluate(q, p, np.zeros(self.m), guess)

    def _evaluate(self, q, p, v_deg, guess):
        status, res = self.kernel.local(q, p, v_deg, guess)
        if status != K.OK:
            u = np.zeros(self.n)
            u[list(self.degenerate)] = v_deg
            u[list(self.regular)] = guess
            self._raise(status, res, q, u)
        return LocalData(*res)

    def _full_velocity(self, V, v_deg):
        u = np.zeros(self.n)
        u[list(self.regular)] = V
        u[list(self.degenerate)] = v_deg
        return u

    def lagrangian_value(self, q, v):
        x = np.concatenate([np.asarray(q, dtype=float), np.asarray(v, dtype=float)])
        status, out = self.kernel.evaluate(x)
        if status != K.OK:
            self._locate_domain_error(x[: self.n], x[self.n :])
        return float(out[0])

    # -- transform operations ------------------------------------------------

    def resolve_velocities(self, q, p, v_deg=None, guess=None):
        """Regular velocities ``V^i(q, p_i, v^a)`` solving ``p_i = dL/dv^i``."""
        d = self.local(q, p, v_deg, guess)
        return Resolution(d.V, d.residual, d.iterations)

    def h_alpha(self, q, p, check=True):
        """``h_a = -dL/dv^a`` at the resolved regular velocities."""
        h = self.local(q, p).h
        if check and self.m:
            h2 = self.local(q, p, np.full(self.m, PROBE)).h
            if np.abs(h - h2).max() > self.tolerances.probe_tol:
                raise DependenceOnVelocity(
                    "h_a changes with the unresolved velocities; the index split is invalid here"
                )
        return h

    def h_mix(self, q, p, pbar_deg, v_deg):
        """Mixed Clairaut-Hamilton function ``p_i V^i + pbar_a v^a - L``."""
        pbar_deg = np.asarray(pbar_deg, dtype=float).reshape(self.m)
        v_deg = np.asarray(v_deg, dtype=float).reshape(self.m)
        V = self.local(q, p, v_deg).V
        u = self._full_velocity(V, v_deg)
        p = np.asarray(p, dtype=float).reshape(self.r)
        return float(p @ V + pbar_deg @ v_deg - self.lagrangian_value(q, u))

    def h_physical(self, q, p, pbar_deg=None, v_deg=None, check=True):
        """Physical Hamiltonian ``H_mix - (pbar_b + h_b) v^b``."""
        pbar_deg = np.zeros(self.m) if pbar_deg is None else np.asarray(pbar_deg, dtype=float)
        v_deg = np.zeros(self.m) if v_deg is None else np.asarray(v_deg, dtype=float)
        h = self.h_alpha(q, p, check=check)
        value = self.h_mix(q, p, pbar_deg, v_deg) - float((pbar_deg + h) @ v_deg)
        if check and self.m:
            other = self.h_mix(q, p, pbar_deg + PROBE, v_deg + PROBE)
            other -= float((pbar_deg + PROBE + h) @ (v_deg + PROBE))
            if abs(other - value) > self.tolerances.probe_tol * (1.0 + abs(value)):
                raise DependenceOnVelocity("H0 changes with the probe momenta or velocities")
        return value

    def h_standard(self, q, p):
        """Full Legendre transform ``p_B V^B - L``; nonsingular models only."""
        if self.r < self.n:
            raise ModelSingular(f"Hessian rank {self.r} < {self.n}: no standard Hamiltonian")
        V = self.local(q, p).V
        return float(np.asarray(p, dtype=float) @ V - self.lagrangian_value(q, V))

    def h_general(self, q, pbar, c):
        """General (linear in ``pbar``) solution ``pbar_B c^B - L(q, c)``."""
        pbar = np.asarray(pbar, dtype=float)
        c = np.asarray(c, dtype=float)
        return float(pbar @ c - self.lagrangian_value(q, c))

    def derivatives(self, q, p):
        """Gradients of ``H0`` and every ``h_a`` with respect to ``q^A`` and ``p_i``."""
        d = self.local(q, p)
        return {"dH0_dq": d.dH0_dq, "dH0_dp": d.dH0_dp, "dh_dq": d.dh_dq, "dh_dp": d.dh_dp}

    def clairaut_residual(self, H, q, pbar, step=None):
        return clairaut_residual(H, self.lagrangian_value, q, pbar, step or self.tolerances.fd_step)


def clairaut_residual(H, lagrangian, q, pbar, step=1e-6):
    """``H - [pbar . dH/dpbar - L(q, dH/dpbar)]`` with central differences.

    ``H(q, pbar)`` and ``lagrangian(q, v)`` are plain callables.
    """
    q = np.asarray(q, dtype=float)
    pbar = np.asarray(pbar, dtype=float)
    grad = np.empty_like(pbar)
    for k in range(len(pbar)):
        e = np.zeros_like(pbar)
        e[k] = step
        grad[k] = (H(q, pbar + e) - H(q, pbar - e)) / (2.0 * step)
    return float(H(q, pbar) - (pbar @ grad - lagrangian(q, grad)))
