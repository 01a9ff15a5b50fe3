import numpy as np
import pytest

from bbbtraj import _backend

BACKENDS = list(_backend.available())


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_state(n, seed):
    g = np.random.default_rng(seed)
    psi = g.normal(size=n) + 1j * g.normal(size=n)
    return psi / np.linalg.norm(psi)


def random_generator_dense(n, seed, density=1.0):
    g = np.random.default_rng(seed)
    A = g.normal(size=(n, n)) + 1j * g.normal(size=(n, n))
    mask = np.triu(g.random((n, n)) < density, 1)
    A = np.where(mask, A, 0)
    return A + A.conj().T + np.diag(g.normal(size=n))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
