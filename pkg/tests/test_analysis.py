import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clairaut import expr as E
from clairaut.analysis import IndexSplit, default_samples, hessian, rank_at, split
from clairaut.errors import RankNotConstant, SplitUnstable

T1 = E.SymbolTable(["q1"])
T2 = E.SymbolTable(["q1", "q2"])


def W_of(source, table, q, v):
    return hessian(E.parse(source, table), table).at(q, v)


def test_hessian_examples():
    assert np.array_equal(W_of("0.5*d(q1)^2", T1, [0.3], [1.7]), [[1.0]])
    W = W_of("0.5*(d(q1) - q2)^2", T2, [0.1, 0.2], [0.3, 0.4])
    assert np.array_equal(W, [[1.0, 0.0], [0.0, 0.0]])
    W = W_of("0.5*(q2*d(q1) - q1*d(q2))", T2, [0.1, 0.2], [0.3, 0.4])
    assert np.array_equal(W, np.zeros((2, 2)))


def test_hessian_symmetric_and_matches_finite_differences(rng):
    table = T2
    L = E.parse("exp(q1*d(q2)) + d(q1)^3*q2 + sin(d(q1)*d(q2))", table)
    field = hessian(L, table)
    grad = E.lambdify(field.gradient_v, table.coordinates + table.velocities)
    for _ in range(10):
        q, v = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        W = field.at(q, v)
        assert np.abs(W - W.T).max() <= 1e-14
        h = 1e-6
        fd = np.empty((2, 2))
        for b in range(2):
            e = np.zeros(2)
            e[b] = h
            fd[:, b] = (np.array(grad(*q, *(v + e))) - np.array(grad(*q, *(v - e)))) / (2 * h)
        assert np.abs(W - fd).max() <= 1e-6 * max(1.0, np.abs(W).max())


@pytest.mark.parametrize(
    "W, rank",
    [
        ([[1, 0], [0, 0]], 1),
        ([[2, 1], [1, 0.5]], 1),
        (np.zeros((3, 3)), 0),
        (np.eye(4), 4),
    ],
)
def test_rank_at_examples(W, rank):
    assert rank_at(np.array(W, dtype=float)) == rank


def test_split_examples():
    s = split([[1, 0], [0, 0]], [None] * 3)
    assert (s.rank, s.regular, s.degenerate) == (1, (0,), (1,))
    s = split(np.eye(3), [None])
    assert (s.rank, s.degenerate) == (3, ())
    s = split(np.zeros((2, 2)), [None])
    assert (s.rank, s.regular, s.degenerate) == (0, (), (0, 1))


def test_split_from_lagrangian_field():
    table = T2
    W = hessian(E.parse("0.5*(d(q1) - q2)^2", table), table)
    s = split(W, default_samples(table))
    assert s == IndexSplit(2, 1, (0,), (1,), s.condition_number)


def test_split_prefers_nonzero_column():
    table = T2
    W = hessian(E.parse("0.5*d(q2)^2 + q1*d(q1)", table), table)
    s = split(W, default_samples(table))
    assert (s.regular, s.degenerate) == ((1,), (0,))


def test_rank_not_constant():
    table = T1
    W = hessian(E.parse("0.25*d(q1)^4", table), table)
    samples = [(np.array([0.0]), np.array([1.0])), (np.array([0.0]), np.array([0.0]))]
    with pytest.raises(RankNotConstant):
        split(W, samples)


def test_split_unstable():
    # rank 1 everywhere, but the weight moves from column 1 to column 2
    table = T2
    W = hessian(E.parse("0.5*(q2*d(q1) + (1 - q2)*d(q2))^2", table), table)
    samples = [(np.array([0.0, 1.0]), np.zeros(2)), (np.array([0.0, 0.0]), np.zeros(2))]
    with pytest.raises(SplitUnstable):
        split(W, samples)


def test_index_split_validation():
    with pytest.raises(ValueError):
        IndexSplit(2, 1, (0,), (0,))
    with pytest.raises(ValueError):
        IndexSplit(2, 2, (0,), (1,))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_rank_of_outer_product_is_at_most_one(a, b):
    M = np.outer(a, b)
    expected = 0 if not np.any(M) else 1
    if expected and np.abs(M).max() < 1e-100:
        return
    assert rank_at(M) == expected
