import pytest
from hypothesis import HealthCheck, settings

from farecourt.network import generate_network

settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid5():
    return generate_network(1, 5, 5)


@pytest.fixture(scope="session")
def city():
    return generate_network(2, 10, 10, jitter=10.0, knockout_fraction=0.1)


# criterion number -> (passed, summary); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{num}] {text}")
