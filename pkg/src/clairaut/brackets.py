"""Regular Poisson bracket, q^a-total derivative, curvature and the F-bracket.

Observables are scalar functions on the restricted phase space ``(q^A, p_i)``
that expose a gradient split into ``(d/dq^A, d/dp_i)``.

Two index conventions exist for contracting the inverse curvature ``Fbar``
with the q^a-total derivative:

``"A"``  ``v^b = D_a H0 Fbar^{ab}`` (contract with the first index)
``"B"``  ``v^a = Fbar^{ab} D_b H0`` (contract with the second index)

The bracket uses the same placement, so ``{X, Y}_F`` adds
``{X, h_a} Fbar^{ba} D_b Y`` under "A" and ``{X, h_a} Fbar^{ab} D_b Y``
under "B".
"""

from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from .errors import FNotInvertible

CONVENTIONS = ("A", "B")


@dataclass(frozen=True)
class PhasePoint:
    """A point of the restricted phase space; ``t`` is carried for output only."""

    q: np.ndarray
    p: np.ndarray
    v: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        if self.v is not None:
            object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(-1))


class Observable:
    """Base class: ``value(at)`` and ``grad(at) -> (dX/dq, dX/dp)``."""

    def __init__(self, system):
        self.system = system

    def value(self, at):
        raise NotImplementedError

    def grad(self, at):
        raise NotImplementedError

    def __call__(self, at):
        return self.value(at)


class ExpressionObservable(Observable):
    """Observable given as an expression over coordinates and regular momenta.

    Momentum symbols follow :func:`clairaut.expr.momentum_name` (``q1 -> p1``).
    """

    def __init__(self, system, source):
        super().__init__(system)
        table = system.table.extended(system.momentum_names)
        self.expr = E.parse(source, table) if isinstance(source, str) else source
        self.expr = E.substitute(self.expr, table.parameters)
        args = table.coordinates + system.momentum_names
        grads = [E.diff(self.expr, s) for s in args]
        self._fn = E.lambdify([self.expr, *grads], args)
        self._n = system.n

    def __repr__(self):
        return f"ExpressionObservable({E.to_source(self.expr)!r})"

    def value(self, at):
        return float(self._fn(*at.q, *at.p)[0])

    def grad(self, at):
        out = np.asarray(self._fn(*at.q, *at.p)[1:], dtype=float)
        return out[: self._n], out[self._n :]


class HamiltonianObservable(Observable):
    """The physical Hamiltonian ``H0``."""

    def value(self, at):
        return float(self.system.local(at.q, at.p).H0)

    def grad(self, at):
        d = self.system.local(at.q, at.p)
        return d.dH0_dq, d.dH0_dp

    def __repr__(self):
        return "H0"


class DegenerateHamiltonian(Observable):
    """One of the degenerate-direction Hamiltonians ``h_a``."""

    def __init__(self, system, alpha):
        super().__init__(system)
        self.alpha = system.degenerate_index(alpha)

    def value(self, at):
        return float(self.system.local(at.q, at.p).h[self.alpha])

    def grad(self, at):
        d = self.system.local(at.q, at.p)
        return d.dh_dq[self.alpha], d.dh_dp[self.alpha]

    def __repr__(self):
        return f"h[{self.system.degenerate_names[self.alpha]}]"


class FunctionObservable(Observable):
    """Observable from a callable ``f(at)``; gradient by central differences."""

    def __init__(self, system, fn, step=1e-6, name=None):
        super().__init__(system)
        self.fn = fn
        self.step = step
        self.name = name or getattr(fn, "__name__", "f")

    def __repr__(self):
        return self.name

    def value(self, at):
        return float(self.fn(at))

    def grad(self, at):
        h = self.step
        gq = np.empty(len(at.q))
        gp = np.empty(len(at.p))
        for k in range(len(at.q)):
            e = np.zeros(len(at.q))
            e[k] = h
            gq[k] = (self.fn(PhasePoint(at.q + e, at.p)) - self.fn(PhasePoint(at.q - e, at.p))) / (2 * h)
        for k in range(len(at.p)):
            e = np.zeros(len(at.p))
            e[k] = h
            gp[k] = (self.fn(PhasePoint(at.q, at.p + e)) - self.fn(PhasePoint(at.q, at.p - e))) / (2 * h)
        return gq, gp


def hamiltonian(system):
    return HamiltonianObservable(system)


def h_observable(system, alpha):
    return DegenerateHamiltonian(system, alpha)


def observable(system, source):
    return ExpressionObservable(system, source)


def _regular(X, Y):
    system = X.system if X.system is not None else Y.system
    return list(system.regular)


def poisson(X, Y, at):
    """Regular Poisson bracket: sum over regular indices only."""
    reg = _regular(X, Y)
    if not reg:
        return 0.0
    xq, xp = X.grad(at)
    yq, yp = Y.grad(at)
    return float(xq[reg] @ yp - yq[reg] @ xp)


def _poisson_grads(xq, xp, yq, yp, reg):
    if not reg:
        return 0.0
    return float(xq[reg] @ yp - yq[reg] @ xp)


def d_alpha(X, alpha, system, at):
    """q^a-total derivative ``dX/dq^a + {X, h_a}``."""
    a = system.degenerate_index(alpha)
    d = system.local(at.q, at.p)
    xq, xp = X.grad(at)
    return float(xq[system.degenerate[a]]) + _poisson_grads(
        xq, xp, d.dh_dq[a], d.dh_dp[a], list(system.regular)
    )


def d_all(xq, xp, system, d):
    """Vector of ``D_a X`` over all degenerate indices."""
    reg = list(system.regular)
    out = np.asarray(xq, dtype=float)[list(system.degenerate)].copy()
    if reg:
        out += d.dh_dp @ xq[reg] - d.dh_dq[:, reg] @ xp
    return out


def _bracket_with_h(xq, xp, system, d):
    """Vector of ``{X, h_a}`` over all degenerate indices."""
    reg = list(system.regular)
    if not reg:
        return np.zeros(system.m)
    return d.dh_dp @ xq[reg] - d.dh_dq[:, reg] @ xp


def curvature_F(system, at):
    """``F_ab = dh_a/dq^b - dh_b/dq^a + {h_a, h_b}`` as an ``(n-r) x (n-r)`` array."""
    return curvature_from_local(system, system.local(at.q, at.p))


def curvature_from_local(system, d):
    """Curvature from already evaluated :class:`LocalData`."""
    deg = list(system.degenerate)
    reg = list(system.regular)
    G = d.dh_dq[:, deg]
    F = G - G.T
    if reg:
        hq = d.dh_dq[:, reg]
        F = F + hq @ d.dh_dp.T - d.dh_dp @ hq.T
    return system.curvature_sign * F


@dataclass
class FInverse:
    """Result of :func:`invert_F`.

    ``inverse`` is the exact inverse when ``rank == size``; otherwise it is
    the Moore-Penrose pseudo-inverse and ``kernel`` holds an orthonormal basis
    of the null space as columns.
    """

    inverse: np.ndarray
    rank: int
    kernel: np.ndarray
    singular_values: np.ndarray = field(repr=False, default=None)

    @property
    def full_rank(self):
        return self.rank == self.inverse.shape[0]


def _canonical_kernel(P, tol):
    """Orthonormal basis of range(P) from Gram-Schmidt on P e_1, P e_2, ...

    Independent of SVD sign and rotation choices, so it varies continuously
    with the projector.
    """
    m = P.shape[0]
    basis = []
    for k in range(m):
        v = P[:, k].copy()
        for b in basis:
            v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > tol:
            basis.append(v / nv)
    return np.array(basis).T.reshape(m, len(basis))


def invert_F(F, tol=1e-9):
    """Inverse, rank and kernel of an antisymmetric curvature matrix."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    m = F.shape[0]
    if m == 0:
        return FInverse(np.zeros((0, 0)), 0, np.zeros((0, 0)), np.zeros(0))
    if not F.any():
        # rank 0: every direction is free and the pseudo-inverse vanishes
        return FInverse(np.zeros((m, m)), 0, np.eye(m), np.zeros(m))
    U, s, Vt = np.linalg.svd(F)
    rank = 0 if s[0] == 0.0 else int(np.count_nonzero(s > tol * s[0]))
    if rank == m:
        return FInverse(np.linalg.inv(F), m, np.zeros((m, 0)), s)
    Vr = Vt[:rank].T
    pinv = Vr @ np.diag(1.0 / s[:rank]) @ U[:, :rank].T
    P = np.eye(m) - Vr @ Vr.T
    kernel = _canonical_kernel(P, 0.5)
    return FInverse(pinv, rank, kernel, s)


def contract(Fbar, vec, convention):
    """``Fbar^{ab} vec_b`` for convention B, ``vec_a Fbar^{ab}`` for A."""
    if convention == "B":
        return Fbar @ vec
    if convention == "A":
        return Fbar.T @ vec
    raise ValueError(f"unknown convention {convention!r}")


def bracket_F(X, Y, system, at, convention="B", tol=None):
    """The F-bracket ``{X, Y} + {X, h_a} Fbar D Y``.

    Raises :class:`FNotInvertible` when the curvature is rank deficient.
    """
    base = poisson(X, Y, at)
    if system.m == 0:
        return base
    tol = system.tolerances.rank_rtol if tol is None else tol
    inv = invert_F(curvature_F(system, at), tol)
    if not inv.full_rank:
        raise FNotInvertible(f"curvature has rank {inv.rank} < {system.m}")
    d = system.local(at.q, at.p)
    xq, xp = X.grad(at)
    yq, yp = Y.grad(at)
    xh = _bracket_with_h(xq, xp, system, d)
    dy = d_all(yq, yp, system, d)
    return base + float(xh @ contract(inv.inverse, dy, convention))


def jacobi_sum(X, Y, Z, system, at, convention="B", step=1e-5):
    """Cyclic sum ``{X,{Y,Z}_F}_F + {Y,{Z,X}_F}_F + {Z,{X,Y}_F}_F``.

    Inner brackets are wrapped as :class:`FunctionObservable` and
    differentiated numerically.
    """

    def inner(A, B):
        return FunctionObservable(
            system, lambda pt: bracket_F(A, B, system, pt, convention), step=step
        )

    return (
        bracket_F(X, inner(Y, Z), system, at, convention)
        + bracket_F(Y, inner(Z, X), system, at, convention)
        + bracket_F(Z, inner(X, Y), system, at, convention)
    )
