import numpy as np
import pytest

from clairaut.config import DEFAULT_TOLERANCES
from clairaut.errors import ModelError, ParseError
from clairaut.models import corpus_names, load_corpus, load_model, parse_model

MINIMAL = "[coordinates] q1\n[lagrangian] 0.5*d(q1)^2\n"


def test_minimal_file_gets_defaults():
    spec = parse_model(MINIMAL)
    assert spec.coordinates == ("q1",)
    assert (spec.t0, spec.t1, spec.dt) == (0.0, 10.0, 1e-3)
    assert spec.convention == "auto"
    assert spec.tolerances == DEFAULT_TOLERANCES
    assert spec.initial == {} and spec.gauge is None


def test_full_file():
    text = """
# comment line
[coordinates] q1 q2
[parameters]
    k = 2.0   # spring
    m = k/4
[lagrangian]
    0.5*m*(d(q1) - q2)^2
    - 0.5*k*q1^2
[initial] q1 = 1  q2 = 0.5  v1 = 0  v2 = 0
[gauge] v2 = sin(t) + p1
[integrate] t0 = 1  t1 = 2  dt = 0.01
[options] convention = B  seed = 7  newton_tol = 1e-13
"""
    spec = parse_model(text)
    assert spec.parameters == {"k": 2.0, "m": 0.5}
    assert (spec.t0, spec.t1, spec.dt) == (1.0, 2.0, 0.01)
    assert spec.convention == "B"
    assert spec.tolerances.seed == 7 and spec.tolerances.newton_tol == 1e-13
    system = spec.build_system()
    initial, guess = spec.initial_point(system)
    # p1 = m (v1 - q2) at the initial state
    assert initial.p == pytest.approx([0.5 * (0 - 0.5)])
    g = spec.gauge_choice(system)
    assert g(0.5, initial.q, initial.p) == pytest.approx([np.sin(0.5) - 0.25])


def test_missing_lagrangian_section():
    with pytest.raises(ModelError, match=r"\[lagrangian\]"):
        parse_model("[coordinates] q1\n")


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("[coordinates] q1\n[lagrangian] 0.5*d(q1)^2\n[options] colour = red\n", 3, 11),
        ("[coordinates] q1\n[lagrangian] 0.5*d(q1)^2\n[bogus]\n", 3, 1),
        ("q1\n[coordinates] q1\n", 1, 1),
        ("[coordinates] q1\n[lagrangian]\n  0.5*d(q1)^2 +\n", 3, 16),
        ("[coordinates] q1\n[lagrangian] 0.5*d(q1)^2\n[initial] q9 = 1\n", 3, 11),
        ("[coordinates] q1\n[lagrangian] 0.5*d(q1)^2\n[integrate] dt = fast\n", 3, 18),
    ],
)
def test_parse_errors_have_locations(text, line, column):
    with pytest.raises(ParseError) as info:
        parse_model(text)
    assert (info.value.line, info.value.column) == (line, column)


def test_duplicate_section():
    with pytest.raises(ParseError, match="duplicate"):
        parse_model(MINIMAL + "[lagrangian] 0\n")


def test_unknown_symbol_in_lagrangian():
    with pytest.raises(ParseError, match='"q2"'):
        parse_model("[coordinates] q1\n[lagrangian] q2*d(q1)\n")


def test_initial_momenta_form():
    spec = parse_model("[coordinates] q1 q2\n[lagrangian] 0.5*(d(q1) - q2)^2\n[initial] q2 = 1 p1 = 0.25 v2 = 3\n")
    system = spec.build_system()
    initial, _ = spec.initial_point(system)
    assert initial.p == pytest.approx([0.25]) and initial.v == pytest.approx([3.0])


@pytest.mark.parametrize(
    "initial, message",
    [
        ("p2 = 1", "degenerate"),
        ("p1 = 1 v1 = 2", "both"),
    ],
)
def test_initial_dimension_errors(initial, message):
    spec = parse_model(f"[coordinates] q1 q2\n[lagrangian] 0.5*(d(q1) - q2)^2\n[initial] {initial}\n")
    with pytest.raises(ModelError, match=message):
        spec.initial_point(spec.build_system())


def test_gauge_on_regular_velocity_is_rejected():
    spec = parse_model("[coordinates] q1 q2\n[lagrangian] 0.5*(d(q1) - q2)^2\n[gauge] v1 = 0\n")
    with pytest.raises(ModelError, match="regular"):
        spec.gauge_choice(spec.build_system())


def test_window_validation():
    with pytest.raises(ModelError):
        parse_model(MINIMAL + "[integrate] t0 = 1 t1 = 0\n")
    with pytest.raises(ModelError):
        parse_model(MINIMAL + "[integrate] dt = 0\n")


def test_content_hash_tracks_source():
    a, b = parse_model(MINIMAL), parse_model(MINIMAL + "# note\n")
    assert a.content_hash != b.content_hash
    assert a.content_hash == parse_model(MINIMAL).content_hash


def test_corpus_loads():
    names = corpus_names()
    assert {"oscillator", "rank1_gauge", "first_order", "first_order_4d", "free_particle", "quartic", "mixed"} <= set(names)
    for spec in load_corpus():
        system = spec.build_system()
        spec.initial_point(system)


def test_load_model_errors(tmp_path):
    with pytest.raises(ModelError):
        load_model(tmp_path / "nope.model")
    bad = tmp_path / "bad.model"
    bad.write_bytes(b"[coordinates] q1\n[lagrangian] \xff\n")
    with pytest.raises(ModelError, match="UTF-8"):
        load_model(bad)
