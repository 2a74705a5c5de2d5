"""Degenerate-velocity resolution, gauge injection and RK4 integration.

The state is ``y = (q^A, p_i)``.  At every stage the degenerate velocities
solve ``F v = D H0`` (convention "B", or ``F^T v = D H0`` under "A"); the
regular equations then read

    dq^i/dt = dH0/dp_i + dh_b/dp_i v^b
    dp_i/dt = -dH0/dq^i - dh_b/dq^i v^b
    dq^a/dt = v^a

When ``F`` is invertible at the initial point the whole run is handed to the
compiled kernel; otherwise (gauge directions present) every stage goes
through :func:`resolve_degenerate_velocities` in Python.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from . import kernel as K
from .brackets import (
    HamiltonianObservable,
    PhasePoint,
    bracket_F,
    contract,
    curvature_F,
    curvature_from_local,
    d_all,
    invert_F,
    poisson,
)
from .errors import (
    ClairautError,
    DomainError,
    FNotInvertible,
    InconsistentSystem,
    IntegrationAborted,
    MissingGauge,
    NoConvergence,
    SingularJacobian,
    TooFewSamples,
)
from .euler_lagrange import LagrangeOracle, el_residual, time_derivative

CONVENTION_CODE = {"A": 0, "B": 1}


@dataclass
class GaugeReport:
    """Rank of the curvature at one point and the free velocity directions."""

    rank_F: int
    gauge_count: int
    kernel: np.ndarray

    def as_dict(self):
        return {
            "rank_F": self.rank_F,
            "gauge_count": self.gauge_count,
            "kernel": self.kernel.T.tolist(),
        }


def gauge_report(system, at):
    if system.m == 0:
        return GaugeReport(0, 0, np.zeros((0, 0)))
    inv = invert_F(curvature_F(system, at), system.tolerances.rank_rtol)
    return GaugeReport(inv.rank, system.m - inv.rank, inv.kernel)


class GaugeChoice:
    """Prescribed degenerate velocities as expressions in ``(t, q^A, p_i)``.

    One expression per degenerate velocity (missing ones are zero).  Only the
    component along the kernel of ``F`` is used; the image component is fixed
    by the equations of motion.
    """

    def __init__(self, system, sources=None):
        sources = dict(sources or {})
        self.names = tuple(system.table.velocity_of(c) for c in system.degenerate_names)
        unknown = set(sources) - set(self.names)
        if unknown:
            raise ValueError(f"gauge given for non-degenerate velocities: {sorted(unknown)}")
        table = system.table.extended(system.momentum_names + ("t",))
        self.exprs = []
        for name in self.names:
            src = sources.get(name, 0.0)
            e = E.parse(src, table) if isinstance(src, str) else E.as_expr(src)
            self.exprs.append(E.substitute(e, table.parameters))
        self.sources = {name: E.to_source(e) for name, e in zip(self.names, self.exprs)}
        args = ("t",) + table.coordinates + system.momentum_names
        self._fn = E.lambdify(self.exprs, args) if self.exprs else None

    @classmethod
    def zero(cls, system):
        return cls(system, {})

    def __call__(self, t, q, p):
        if self._fn is None:
            return np.zeros(0)
        return np.array(self._fn(t, *q, *p), dtype=float)

    def __repr__(self):
        return f"GaugeChoice({self.sources})"


def _solve_degenerate(system, d, t, q, p, gauge, convention):
    """Degenerate velocities and the curvature rank from local data ``d``."""
    m = system.m
    if m == 0:
        return np.zeros(0), 0
    F = curvature_from_local(system, d)
    D = d_all(d.dH0_dq, d.dH0_dp, system, d)
    inv = invert_F(F, system.tolerances.rank_rtol)
    v = contract(inv.inverse, D, convention)
    M = F if convention == "B" else F.T
    gap = float(np.abs(D - M @ v).max())
    if gap > system.tolerances.consistency_tol:
        raise InconsistentSystem(
            f"F v = D H0 has no solution: residual {gap:.3e} off the image of F (rank {inv.rank})",
            residual=gap,
        )
    if inv.rank < m:
        if gauge is None:
            raise MissingGauge(f"{m - inv.rank} gauge direction(s) need a gauge choice")
        g = gauge(t, q, p)
        v = v + inv.kernel @ (inv.kernel.T @ g)
    return v, inv.rank


def resolve_degenerate_velocities(system, at, gauge=None, convention="B"):
    """Degenerate velocities ``v^a`` at a phase point."""
    d = system.local(at.q, at.p)
    return _solve_degenerate(system, d, at.t, at.q, at.p, gauge, convention)[0]


def vector_field(system, t, y, gauge=None, convention="B", guess=None):
    """``(dy/dt, v^a, H0, V^i)`` at ``y = (q, p_i)``."""
    n = system.n
    q, p = y[:n], y[n:]
    if guess is None:
        d = system.local(q, p)
    else:
        d = system.local_uncached(q, p, np.asarray(guess, dtype=float))
    v, _ = _solve_degenerate(system, d, t, q, p, gauge, convention)
    reg = list(system.regular)
    dy = np.empty(n + system.r)
    dy[reg] = d.dH0_dp + v @ d.dh_dp
    dy[list(system.degenerate)] = v
    dy[n:] = -d.dH0_dq[reg] - v @ d.dh_dq[:, reg]
    return dy, v, d.H0, d.V


def rk4(f, t, y, h):
    """One classical Runge-Kutta step of ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(system, state, dt, gauge=None, convention="B"):
    """One RK4 step; ``v^a`` is re-resolved at every stage."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.concatenate([state.q, state.p])

    def f(t, y):
        return vector_field(system, t, y, gauge, convention)[0]

    y1 = rk4(f, state.t, y, dt)
    t1 = state.t + dt
    v = vector_field(system, t1, y1, gauge, convention)[1]
    return PhasePoint(y1[: system.n], y1[system.n :], v, t1)


@dataclass
class Trajectory:
    """Samples ``(t, q, p_i, v^a, H0)`` plus Euler-Lagrange diagnostics."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    v: np.ndarray
    H0: np.ndarray
    convention: str
    path: str
    gauge: GaugeReport = None
    notes: list = field(default_factory=list)
    el: object = None

    def __len__(self):
        return len(self.t)

    @property
    def el_residual_max(self):
        """Per-sample EL residual max-norm (NaN when too few samples)."""
        if self.el is None:
            return np.full(len(self.t), np.nan)
        return self.el.per_sample

    def point(self, k):
        return PhasePoint(self.q[k], self.p[k], self.v[k], self.t[k])


def oracle_for(system):
    """Cached :class:`LagrangeOracle` for a system."""
    oracle = system.__dict__.get("_el_oracle")
    if oracle is None:
        tol = system.tolerances
        oracle = LagrangeOracle(system.lagrangian, system.table, tol.newton_tol, tol.newton_maxit)
        system.__dict__["_el_oracle"] = oracle
    return oracle


def _kernel_error(status):
    if status == K.NO_CONVERGENCE:
        return NoConvergence("Newton did not converge during integration")
    if status == K.SINGULAR_JACOBIAN:
        return SingularJacobian("regular Hessian minor became singular during integration")
    if status == K.DOMAIN:
        return DomainError("non-finite value in the Lagrangian derivatives during integration")
    if status == K.F_SINGULAR:
        return FNotInvertible("curvature became singular during integration")
    return ClairautError(f"kernel status {status}")


def _steps(t0, t1, dt):
    return max(1, math.ceil((t1 - t0) / dt - 1e-9))


def _integrate_kernel(system, y0, t0, t1, dt, convention, guess):
    status, count, ts, Y, VD, H = system.kernel.integrate(
        y0, t0, t1, dt, CONVENTION_CODE[convention], system.curvature_sign, guess
    )
    return status, count, ts[:count], Y[:count], VD[:count], H[:count]


def _integrate_python(system, y0, t0, t1, dt, gauge, convention, guess):
    nsteps = _steps(t0, t1, dt)
    n, r, m = system.n, system.r, system.m
    ts = np.empty(nsteps + 1)
    Y = np.empty((nsteps + 1, n + r))
    VD = np.empty((nsteps + 1, m))
    H = np.empty(nsteps + 1)
    warm = [np.asarray(guess, dtype=float)]

    def field_at(t, y):
        dy, v, H0, V = vector_field(system, t, y, gauge, convention, warm[0])
        warm[0] = V
        return dy, v, H0

    def f(t, y):
        return field_at(t, y)[0]

    y = np.array(y0, dtype=float)
    t = t0
    count = 0
    try:
        while True:
            _, v, H0 = field_at(t, y)
            ts[count], Y[count], VD[count], H[count] = t, y, v, H0
            count += 1
            if count == nsteps + 1:
                break
            h = t1 - t if count == nsteps else dt
            y = rk4(f, t, y, h)
            t = t1 if count == nsteps else t0 + count * dt
    except ClairautError as exc:
        return exc, count, ts[:count], Y[:count], VD[:count], H[:count]
    return None, count, ts, Y, VD, H


def integrate(system, initial, t0, t1, dt, gauge=None, convention="B", guess=None, diagnostics=True):
    """Fixed-step RK4 trajectory from ``t0`` to ``t1``.

    The last step is shortened to land on ``t1``.  Failures raise
    :class:`IntegrationAborted` carrying the partial :class:`Trajectory`.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if convention not in CONVENTION_CODE:
        raise ValueError(f"unknown convention {convention!r}")
    n, r = system.n, system.r
    q0 = np.asarray(initial.q, dtype=float)
    p0 = np.asarray(initial.p, dtype=float)
    y0 = np.concatenate([q0, p0])
    guess = np.zeros(r) if guess is None else np.asarray(guess, dtype=float)
    start = PhasePoint(q0, p0, None, t0)
    report = gauge_report(system, start)
    notes = []
    if report.gauge_count == 0:
        if gauge is not None and system.m:
            notes.append("gauge ignored: curvature is invertible")
        path = system.backend
        status, count, ts, Y, VD, H = _integrate_kernel(system, y0, t0, t1, dt, convention, guess)
        error = None if status == K.OK else _kernel_error(status)
    else:
        path = "python"
        error, count, ts, Y, VD, H = _integrate_python(
            system, y0, t0, t1, dt, gauge, convention, guess
        )
    traj = Trajectory(ts, Y[:, :n], Y[:, n:], VD, H, convention, path, report, notes)
    if error is not None:
        raise IntegrationAborted(error, traj, t0)
    if diagnostics:
        attach_diagnostics(system, traj)
    return traj


def attach_diagnostics(system, traj):
    """Compute the Euler-Lagrange residual of ``traj`` in place."""
    try:
        traj.el = el_residual(oracle_for(system), system.split, traj.t, traj.q, traj.p, traj.v)
    except TooFewSamples:
        traj.el = None
    return traj


@dataclass
class ObservableEvolution:
    """Time series of an observable and its time-evolution residuals.

    ``bracket_residual`` compares ``dX/dt`` with ``{X, H0}_F``;
    ``chain_residual`` compares it with ``{X, H0} + D_b X v^b``.
    """

    observable: str
    t: np.ndarray
    values: np.ndarray
    dXdt: np.ndarray
    bracket: np.ndarray
    chain: np.ndarray
    samples: np.ndarray

    @property
    def bracket_residual(self):
        return float(np.abs(self.dXdt[self.samples] - self.bracket).max())

    @property
    def chain_residual(self):
        return float(np.abs(self.dXdt[self.samples] - self.chain).max())


def evolve_observable(X, along, stride=1, convention=None):
    """Differentiate ``X`` along a trajectory and compare with the brackets.

    Brackets are evaluated on interior samples (every ``stride``-th).
    """
    system = X.system
    convention = convention or along.convention
    N = len(along)
    values = np.array([X.value(along.point(k)) for k in range(N)])
    dXdt = time_derivative(along.t, values)
    samples = np.arange(2, N - 2, max(1, int(stride)))
    H = HamiltonianObservable(system)
    bracket = np.empty(len(samples))
    chain = np.empty(len(samples))
    for j, k in enumerate(samples):
        pt = along.point(k)
        bracket[j] = bracket_F(X, H, system, pt, convention)
        base = poisson(X, H, pt)
        if system.m:
            xq, xp = X.grad(pt)
            base += float(d_all(xq, xp, system, system.local(pt.q, pt.p)) @ pt.v)
        chain[j] = base
    return ObservableEvolution(repr(X), along.t, values, dXdt, bracket, chain, samples)
