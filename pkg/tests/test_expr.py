import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from clairaut import expr as E
from clairaut.errors import DomainError, ParseError, UnboundSymbolError, UnknownSymbolError

TABLE = E.SymbolTable(["q1", "q2"], {"k": 2.0})
SYMS = ["q1", "q2", "v1", "v2"]


# -- parse -------------------------------------------------------------------


def test_parse_velocity_power():
    assert E.parse("0.5*d(q1)^2", TABLE) == E.Mul(E.Const(0.5), E.Pow(E.Sym("v1"), 2))


def test_parse_rejects_unknown_function():
    with pytest.raises(UnknownSymbolError) as info:
        E.parse("d(q1)*q2 - V(q1)", TABLE)
    assert info.value.name == "V"
    assert '"V"' in str(info.value)


def test_parse_double_minus_precedence():
    assert E.parse("q1 - -q2", TABLE) == E.Sub(E.Sym("q1"), E.Neg(E.Sym("q2")))


@pytest.mark.parametrize(
    "source, binding, expected",
    [
        ("-q1^2", {"q1": 3.0}, -9.0),
        ("2^3^2", {}, 512.0),
        ("q1*q2/q1", {"q1": 2.0, "q2": 5.0}, 5.0),
        ("k*q1", {"q1": 1.5}, 3.0),
        ("sin(q1)^2 + cos(q1)^2", {"q1": 0.7}, 1.0),
    ],
)
def test_parse_precedence_and_parameters(source, binding, expected):
    e = E.substitute(E.parse(source, TABLE), TABLE.parameters)
    assert E.evaluate(e, binding) == pytest.approx(expected, rel=1e-15)


def test_parse_error_reports_location():
    with pytest.raises(ParseError) as info:
        E.parse("q1 +\n  * 2", TABLE)
    assert (info.value.line, info.value.column) == (2, 3)


def test_parse_unknown_symbol_names_token():
    with pytest.raises(UnknownSymbolError) as info:
        E.parse("q1 + q3", TABLE)
    assert info.value.name == "q3"


# -- evaluate ----------------------------------------------------------------


def test_eval_examples():
    assert E.evaluate(E.Mul(E.Const(0.5), E.Pow(E.Sym("v1"), 2)), {"v1": 2}) == 2.0
    assert E.evaluate(E.Sym("q1"), {"q1": -3.5}) == -3.5


def test_eval_division_by_zero_names_subtree():
    e = E.Div(E.Const(1), E.Sym("q1"))
    with pytest.raises(DomainError) as info:
        E.evaluate(e, {"q1": 0})
    assert info.value.subtree == e


def test_eval_log_of_nonpositive():
    e = E.parse("q1 + log(q2)", TABLE)
    with pytest.raises(DomainError) as info:
        E.evaluate(e, {"q1": 1.0, "q2": -1.0})
    assert str(info.value.subtree) == "log(q2)"


def test_eval_unbound_symbol():
    with pytest.raises(UnboundSymbolError):
        E.evaluate(E.parse("q1 + q2", TABLE), {"q1": 1.0})


def test_eval_is_deterministic():
    e = E.parse("exp(sin(q1)*v2) / (1 + q2^2)", TABLE)
    b = {"q1": 0.3, "q2": -1.1, "v2": 0.9}
    assert len({E.evaluate(e, b) for _ in range(5)}) == 1


# -- diff --------------------------------------------------------------------


def test_diff_examples():
    e = E.parse("0.5*d(q1)^2", TABLE)
    assert E.diff(e, "v1") == E.Sym("v1")
    assert E.diff(E.parse("0.5*(d(q1) - q2)^2", TABLE), "v2") == E.Const(0.0)
    d = E.diff(E.parse("0.5*(q2*d(q1) - q1*d(q2))", TABLE), "q2")
    for v1 in (-1.3, 0.0, 2.2):
        assert E.evaluate(d, {"v1": v1, "q1": 0.4, "v2": 7.0}) == pytest.approx(0.5 * v1, abs=1e-15)


# -- random expression trees ---------------------------------------------------

leaves = st.one_of(
    st.sampled_from(SYMS).map(E.Sym),
    st.floats(-3, 3, allow_nan=False).map(lambda x: E.Const(round(x, 3))),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda ab: E.add(*ab)),
        st.tuples(children, children).map(lambda ab: E.sub(*ab)),
        st.tuples(children, children).map(lambda ab: E.mul(*ab)),
        children.map(E.neg),
        st.tuples(children, st.sampled_from([2.0, 3.0])).map(lambda ab: E.power(*ab)),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda ab: E.call(*ab)),
        children.map(lambda a: E.call("exp", E.call("sin", a))),
        children.map(lambda a: E.div(a, E.add(E.Const(2.0), E.call("cos", a)))),
    )


trees = st.recursive(leaves, _extend, max_leaves=8)
points = st.fixed_dictionaries({s: st.floats(-1.5, 1.5) for s in SYMS})


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(trees, points, st.sampled_from(SYMS))
def test_diff_matches_central_difference(e, at, s):
    h = 1e-6
    f = lambda x: E.evaluate(e, {**at, s: x})  # noqa: E731
    fd = (f(at[s] + h) - f(at[s] - h)) / (2 * h)
    exact = E.evaluate(E.diff(e, s), at)
    scale = max(1.0, abs(exact), abs(f(at[s])))
    assert abs(exact - fd) <= 1e-6 * scale


@settings(max_examples=150, deadline=None)
@given(trees, points)
def test_print_parse_round_trip(e, at):
    back = E.parse(E.to_source(e), TABLE)
    a, b = E.evaluate(e, at), E.evaluate(back, at)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(trees, points, st.sampled_from(SYMS), st.sampled_from(SYMS))
def test_mixed_partials_commute(e, at, a, b):
    ab = E.evaluate(E.diff(E.diff(e, a), b), at)
    ba = E.evaluate(E.diff(E.diff(e, b), a), at)
    assert ab == pytest.approx(ba, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(trees, points)
def test_diff_of_absent_symbol_is_zero(e, at):
    absent = E.Sym("q9")
    assert "q9" not in E.free_symbols(e)
    d = E.diff(e, absent.name)
    assert E.evaluate(d, {**at, "q9": 1.0}) == 0.0
    assert E.free_symbols(E.diff(e, "q1")) <= E.free_symbols(e)


@settings(max_examples=60, deadline=None)
@given(trees, points)
def test_lambdify_backends_agree_with_evaluate(e, at):
    ref = E.evaluate(e, at)
    f = E.lambdify([e], SYMS)
    g = E.lambdify([e], SYMS, backend="numpy")
    args = [at[s] for s in SYMS]
    assert np.asarray(f(*args), dtype=float).ravel()[0] == pytest.approx(ref, rel=1e-13, abs=1e-13)
    assert float(np.asarray(g(*args), dtype=float).ravel()[0]) == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_constant_folding_keeps_values():
    e = E.add(E.Const(2.0), E.mul(E.Const(3.0), E.Const(4.0)))
    assert e == E.Const(14.0)
    assert math.isclose(E.evaluate(E.power(E.Const(2.0), 0.5), {}), math.sqrt(2.0))
