import numpy as np
import pytest

from clairaut import expr as E
from clairaut.kernel import available_backends
from clairaut.models import load_model
from clairaut.transform import ClairautSystem


def make_system(source, coordinates, parameters=None, backend=None):
    table = E.SymbolTable(coordinates, parameters or {})
    return ClairautSystem(E.parse(source, table), table, backend=backend)


def corpus_system(name, backend=None):
    spec = load_model(name)
    system = spec.build_system(backend)
    initial, guess = spec.initial_point(system)
    return spec, system, initial, guess


def central_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
