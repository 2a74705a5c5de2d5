import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from clairaut.brackets import (
    PhasePoint,
    bracket_F,
    contract,
    curvature_F,
    d_alpha,
    hamiltonian,
    h_observable,
    invert_F,
    jacobi_sum,
    observable,
    poisson,
)
from clairaut.errors import FNotInvertible
from clairaut.models import load_model
from clairaut.verification import evaluate_witnesses, load_witnesses
from conftest import central_gradient, make_system

FIRST_ORDER = "0.5*(q2*d(q1) - q1*d(q2)) - 0.5*(q1^2 + q2^2)"
MIXED = "0.5*(d(q1) - q2*d(q3))^2 + 0.5*(q3*d(q2) - q2*d(q3)) - 0.5*q1^2"
# rank 1 in velocities, p-dependent h_a, full-rank 2x2 curvature
CURVED = "0.5*exp(q3)*(d(q1) - 0.5*q2*d(q3))^2 + q1*q3*d(q2) + sin(q2)*d(q3) - 0.5*q1^2"


@pytest.fixture
def mixed(backend):
    return make_system(MIXED, ["q1", "q2", "q3"], backend=backend)


@pytest.fixture
def curved(backend):
    return make_system(CURVED, ["q1", "q2", "q3"], backend=backend)


def random_point(system, rng, scale=1.0):
    return PhasePoint(rng.uniform(-scale, scale, system.n), rng.uniform(-scale, scale, system.r))


# -- poisson -----------------------------------------------------------------


def test_poisson_examples(backend, rng):
    s = make_system("0.5*(d(q1) - q2)^2", ["q1", "q2"], backend=backend)
    at = random_point(s, rng)
    assert poisson(observable(s, "q1"), observable(s, "p1"), at) == 1.0
    X = observable(s, "sin(q1)*p1^2 + q2*q1")
    assert poisson(X, X, at) == 0.0
    fo = make_system(FIRST_ORDER, ["q1", "q2"], backend=backend)
    assert poisson(observable(fo, "q1"), observable(fo, "q2"), PhasePoint([0.3, 0.4], [])) == 0.0


def test_poisson_ignores_degenerate_coordinates(mixed, rng):
    at = random_point(mixed, rng)
    # q2, q3 are degenerate: no conjugate momenta on the restricted space
    assert poisson(observable(mixed, "q2"), observable(mixed, "q3*p1"), at) == 0.0
    assert poisson(observable(mixed, "q1*q2"), observable(mixed, "p1"), at) == pytest.approx(at.q[1])


# -- d_alpha -----------------------------------------------------------------


def test_d_alpha_examples(backend, rng):
    fo = make_system(FIRST_ORDER, ["q1", "q2"], backend=backend)
    for _ in range(5):
        at = random_point(fo, rng)
        assert d_alpha(observable(fo, "3.0"), 0, fo, at) == 0.0
        H = hamiltonian(fo)
        for a in (0, 1):
            assert d_alpha(H, a, fo, at) == pytest.approx(at.q[a], abs=1e-12)


def test_d_alpha_of_h_alpha_is_partial(curved, rng):
    for _ in range(5):
        at = random_point(curved, rng)
        for a, idx in enumerate(curved.degenerate):
            h = h_observable(curved, a)
            partial = central_gradient(lambda q: curved.local(q, at.p).h[a], at.q)[idx]
            assert d_alpha(h, a, curved, at) == pytest.approx(partial, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_d_alpha_is_a_derivation(x):
    s = make_system(CURVED, ["q1", "q2", "q3"])
    at = PhasePoint(x[:3], x[3:])
    fx, fy = "sin(q1)*p1 + q2^2", "exp(q3)*p1^2 - q1*q2"
    X, Y, XY = observable(s, fx), observable(s, fy), observable(s, f"({fx})*({fy})")
    for a in range(s.m):
        lhs = d_alpha(XY, a, s, at)
        rhs = X.value(at) * d_alpha(Y, a, s, at) + Y.value(at) * d_alpha(X, a, s, at)
        assert abs(lhs - rhs) <= 1e-8


# -- curvature ---------------------------------------------------------------


def test_curvature_examples(backend, rng):
    fo = make_system("0.5*(q2*d(q1) - q1*d(q2))", ["q1", "q2"], backend=backend)
    F = curvature_F(fo, PhasePoint(rng.uniform(-1, 1, 2), []))
    assert np.array_equal(F, [[0.0, -1.0], [1.0, 0.0]])
    g = make_system("0.5*(d(q1) - q2)^2", ["q1", "q2"], backend=backend)
    assert np.array_equal(curvature_F(g, PhasePoint([0.1, 0.2], [0.3])), [[0.0]])


def test_curvature_mixed_hand_form(mixed, rng):
    for _ in range(10):
        at = random_point(mixed, rng)
        F = curvature_F(mixed, at)
        expected = -(1.0 + at.p[0])
        assert F == pytest.approx(np.array([[0.0, expected], [-expected, 0.0]]), abs=1e-12)


def test_curvature_matches_finite_differences(curved, rng):
    for _ in range(10):
        at = random_point(curved, rng)
        z = np.concatenate([at.q, at.p])
        deg, reg, n = list(curved.degenerate), list(curved.regular), curved.n
        grads = [central_gradient(lambda w, a=a: curved.local(w[:n], w[n:]).h[a], z) for a in range(curved.m)]
        F_fd = np.zeros((curved.m, curved.m))
        for a in range(curved.m):
            for b in range(curved.m):
                ga, gb = grads[a], grads[b]
                pb = ga[reg] @ gb[n:] - gb[reg] @ ga[n:]
                F_fd[a, b] = ga[deg[b]] - gb[deg[a]] + pb
        F = curvature_F(curved, at)
        assert np.abs(F - F_fd).max() <= 1e-6
        assert np.abs(F + F.T).max() <= 1e-12


# -- invert_F ----------------------------------------------------------------


def test_invert_F_examples():
    inv = invert_F(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert inv.rank == 2 and inv.full_rank
    assert np.allclose(inv.inverse, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-15)
    assert inv.kernel.shape[1] == 0
    inv = invert_F(np.zeros((1, 1)))
    assert inv.rank == 0 and np.array_equal(np.abs(inv.kernel), [[1.0]])
    inv = invert_F(np.zeros((2, 2)))
    assert inv.rank == 0 and inv.kernel.shape == (2, 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_invert_F_properties(x):
    A = np.zeros((4, 4))
    A[np.triu_indices(4, 1)] = x
    F = A - A.T
    inv = invert_F(F)
    if inv.full_rank:
        # the 1e-10 bound is meaningful for reasonably conditioned F only
        assume(np.linalg.cond(F) < 1e4)
        assert np.abs(F @ inv.inverse - np.eye(4)).max() <= 1e-10
    else:
        K = inv.kernel
        assert inv.rank + K.shape[1] == 4
        assert np.abs(K.T @ K - np.eye(K.shape[1])).max() <= 1e-10
        assert np.abs(F @ K).max() <= 1e-8 * max(1.0, np.abs(F).max())


def test_invert_F_rank_deficient_3x3():
    # odd dimension: antisymmetric matrices are singular
    F = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 3.0], [-2.0, -3.0, 0.0]])
    inv = invert_F(F)
    assert inv.rank == 2 and inv.kernel.shape == (3, 1)
    k = inv.kernel[:, 0]
    assert np.abs(F @ k).max() <= 1e-12


def test_contract_conventions():
    Fbar = np.array([[0.0, 2.0], [-2.0, 0.0]])
    v = np.array([1.0, 3.0])
    assert np.array_equal(contract(Fbar, v, "B"), Fbar @ v)
    assert np.array_equal(contract(Fbar, v, "A"), -(Fbar @ v))


# -- F-bracket ---------------------------------------------------------------


def test_bracket_F_reduces_to_poisson(backend, rng):
    s = make_system("0.5*d(q1)^2 + 0.1*d(q1)^4 - cos(q1)", ["q1"], backend=backend)
    X, Y = observable(s, "sin(q1)*p1"), observable(s, "q1^2 + exp(p1)")
    for _ in range(10):
        at = random_point(s, rng)
        assert abs(bracket_F(X, Y, s, at) - poisson(X, Y, at)) <= 1e-12


def test_bracket_F_mixed_hand_form(mixed, rng):
    q1, q2 = observable(mixed, "q1"), observable(mixed, "q2")
    for _ in range(10):
        at = random_point(mixed, rng, scale=0.5)
        c = -at.q[1] / (1.0 + at.p[0])
        assert bracket_F(q1, q2, mixed, at) == pytest.approx(c, abs=1e-12)
        assert bracket_F(q2, q1, mixed, at) == pytest.approx(0.0, abs=1e-12)


def test_bracket_F_requires_full_rank(backend):
    g = make_system("0.5*(d(q1) - q2)^2", ["q1", "q2"], backend=backend)
    X = observable(g, "q1")
    with pytest.raises(FNotInvertible):
        bracket_F(X, X, g, PhasePoint([0.0, 0.0], [0.0]))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=4, max_size=4),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_bracket_F_is_bilinear(x, a, b):
    s = make_system(CURVED, ["q1", "q2", "q3"])
    at = PhasePoint(x[:3], x[3:])
    fx, fy, fz = "q1*p1 + sin(q2)", "q3^2 - p1*q2", "cos(q1)*q3 + p1^2"
    X, Y, Z = (observable(s, f) for f in (fx, fy, fz))
    comb = observable(s, f"({a!r})*({fx}) + ({b!r})*({fy})")
    lhs = bracket_F(comb, Z, s, at)
    rhs = a * bracket_F(X, Z, s, at) + b * bracket_F(Y, Z, s, at)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
    lhs = bracket_F(Z, comb, s, at)
    rhs = a * bracket_F(Z, X, s, at) + b * bracket_F(Z, Y, s, at)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_jacobi_mixed_hand_form(mixed, rng):
    X, Y, Z = observable(mixed, "q1"), observable(mixed, "q2"), observable(mixed, "q1 + q2")
    for _ in range(3):
        at = random_point(mixed, rng, scale=0.5)
        expected = 2.0 * at.q[1] / (1.0 + at.p[0]) ** 2
        assert jacobi_sum(X, Y, Z, mixed, at) == pytest.approx(expected, abs=1e-5)


def test_frozen_witnesses_regression(backend):
    w = load_witnesses()
    systems = {"mixed": load_model("mixed").build_system(backend)}
    anti, jac = evaluate_witnesses(systems, w)
    assert abs(anti) > 1e-3 and abs(jac) > 1e-3
    assert anti == pytest.approx(w["anticommutator"]["value"], abs=1e-9)
    assert jac == pytest.approx(w["jacobi"]["value"], abs=1e-5)
    # independent hand forms of the mixed-model bracket
    wa, wj = w["anticommutator"], w["jacobi"]
    assert anti == pytest.approx(-wa["q"][1] / (1.0 + wa["p"][0]), abs=1e-12)
    assert jac == pytest.approx(2.0 * wj["q"][1] / (1.0 + wj["p"][0]) ** 2, abs=1e-5)
