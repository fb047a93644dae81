import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from viscogalerkin.basis import build_basis

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def basis2():
    return build_basis(2, 4)


@pytest.fixture(scope="session")
def basis3():
    return build_basis(3, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary prints them in order."""
    results = request.config.stash[_RESULTS]

    def record(number: int, checks: dict[str, bool], detail: str = "") -> bool:
        ok = all(checks.values())
        failed = ", ".join(k for k, v in checks.items() if not v)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        if failed:
            line += f"  [failed: {failed}]"
        results[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
