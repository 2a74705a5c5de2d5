"""Velocity Hessian, numerical rank and the regular/degenerate index split."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import expr as E
from .config import DEFAULT_TOLERANCES
from .errors import RankNotConstant, SplitUnstable


class HessianField:
    """Exact second velocity derivatives ``W_AB`` of a Lagrangian.

    Also keeps the first derivatives and the mixed ``d2L/dv^A dq^B`` block,
    which the transform needs and which share most of the work.
    """

    def __init__(self, lagrangian, table):
        self.lagrangian = lagrangian
        self.table = table
        q, v = table.coordinates, table.velocities
        self.gradient_v = [E.diff(lagrangian, s) for s in v]
        self.gradient_q = [E.diff(lagrangian, s) for s in q]
        self.matrix = [[E.diff(g, s) for s in v] for g in self.gradient_v]
        self.mixed = [[E.diff(g, s) for s in q] for g in self.gradient_v]
        flat = [w for row in self.matrix for w in row]
        params = dict(table.parameters)
        flat = [E.substitute(w, params) for w in flat]
        self._fn = E.lambdify(flat, q + v)

    @property
    def n(self):
        return self.table.n

    def at(self, q, v):
        """Numerical ``n x n`` Hessian at ``(q, v)``."""
        vals = self._fn(*q, *v)
        return np.array(vals, dtype=float).reshape(self.n, self.n)

    def __call__(self, point):
        q, v = point
        return self.at(q, v)


def hessian(lagrangian, table):
    return HessianField(lagrangian, table)


@dataclass(frozen=True)
class IndexSplit:
    """Partition of coordinate indices (0-based) into regular and degenerate."""

    n: int
    rank: int
    regular: tuple
    degenerate: tuple
    condition_number: float = 1.0

    @property
    def permutation(self):
        return self.regular + self.degenerate

    def __post_init__(self):
        if sorted(self.permutation) != list(range(self.n)):
            raise ValueError("split is not a permutation of the coordinate indices")
        if len(self.regular) != self.rank:
            raise ValueError("rank does not match the number of regular indices")

    @classmethod
    def trivial(cls, n):
        return cls(n, n, tuple(range(n)), ())


def default_samples(table, count=None, seed=None):
    """Phase points ``(q, v)`` drawn uniformly from ``[-1, 1]``."""
    count = DEFAULT_TOLERANCES.n_samples if count is None else count
    seed = DEFAULT_TOLERANCES.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(count, 2 * table.n))
    return [(row[: table.n], row[table.n :]) for row in pts]


def _as_matrix(W, point):
    if isinstance(W, HessianField):
        return W(point)
    return np.atleast_2d(np.asarray(W, dtype=float))


def rank_at(W, point=None, tol=DEFAULT_TOLERANCES.rank_rtol):
    """Count singular values above ``tol * sigma_max`` (0 for a zero matrix)."""
    M = _as_matrix(W, point)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def split(W, samples, tol=DEFAULT_TOLERANCES.rank_rtol):
    """Choose regular indices by column-pivoted QR at the first sample.

    The rank must agree at every sample and the chosen principal minor must
    stay nonsingular at every sample; otherwise :class:`RankNotConstant` or
    :class:`SplitUnstable` is raised.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("split needs at least one sample point")
    mats = [_as_matrix(W, pt) for pt in samples]
    n = mats[0].shape[0]
    r = rank_at(mats[0], tol=tol)
    for k, M in enumerate(mats[1:], start=1):
        rk = rank_at(M, tol=tol)
        if rk != r:
            raise RankNotConstant(
                f"Hessian rank {rk} at sample {k} differs from rank {r} at sample 0",
                sample=k,
            )
    if r == 0:
        return IndexSplit(n, 0, (), tuple(range(n)))
    if r == n:
        regular = tuple(range(n))
    else:
        # dgeqp3 takes the first column of maximal norm, so ties go to the lowest index
        _, _, piv = scipy.linalg.qr(mats[0], pivoting=True, mode="economic")
        regular = tuple(sorted(int(k) for k in piv[:r]))
    degenerate = tuple(k for k in range(n) if k not in regular)
    cond = 1.0
    idx = np.ix_(regular, regular)
    for k, M in enumerate(mats):
        smax = np.linalg.svd(M, compute_uv=False)[0]
        s = np.linalg.svd(M[idx], compute_uv=False)
        if s[-1] <= tol * smax:
            raise SplitUnstable(
                f"regular minor {list(regular)} is singular at sample {k}", sample=k
            )
        cond = max(cond, float(s[0] / s[-1]))
    return IndexSplit(n, r, regular, degenerate, cond)
