import pytest

from rotvortex import mustar, tfcore

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""
    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_RESULTS].append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def harmonic():
    return tfcore.tf_model(2.0)


@pytest.fixture(scope="session")
def omega1(harmonic):
    return tfcore.omega_c1(harmonic)


@pytest.fixture(scope="session")
def density2(harmonic, omega1):
    return mustar.mu_star(harmonic, 2 * omega1)
