import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plapschwarz.mesh import build_mesh_pair, build_uniform_mesh

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mesh8():
    return build_uniform_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return build_uniform_mesh(16)


@pytest.fixture(scope="session")
def pair_4_32():
    return build_mesh_pair(4, 32)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, passed, detail)`` records one acceptance outcome for the summary."""

    def record(n, passed, detail):
        _ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    ran = [r.nodeid for key in ("passed", "failed", "error")
           for r in terminalreporter.stats.get(key, [])
           if r.nodeid.startswith("tests/test_acceptance.py")]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in _ACCEPTANCE:
            ok, detail = _ACCEPTANCE[n]
            line = f"{'PASS' if ok else 'FAIL'}  {detail}"
        elif any(f"test_criterion_{n}_" in nodeid for nodeid in ran):
            line = "FAIL  (errored before recording a result)"
        else:
            line = "not run"
        terminalreporter.write_line(f"criterion {n:2d}: {line}")
